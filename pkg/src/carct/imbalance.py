"""Running imbalance bookkeeping for a single trial.

Tracks, after every assignment, the overall difference D_n between arm
sizes, the per-margin differences D_n(i; t_i), the per-stratum differences
D_n(t), and the continuous imbalances D_n^{x_k} = sum (2T_i - 1) X_{i,k}.
Count imbalances are kept in integer arrays (no floating drift); only the
continuous sums are real-valued.

Weighted combinations of these drive both the randomization procedures
(through Lambda_n) and the analysis quantities M_n and V_n.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .covariates import PatientProfile, StratumIndex
from .errors import ConfigError


@dataclass(frozen=True)
class WeightConfig:
    """Nonnegative weights on overall / marginal / stratum imbalance, sum 1."""

    w_o: float
    w_m: tuple[float, ...]
    w_s: float

    def __post_init__(self):
        if self.w_o < 0 or self.w_s < 0 or any(w < 0 for w in self.w_m):
            raise ConfigError("weights must be nonnegative")
        total = self.w_o + self.w_s + sum(self.w_m)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"weights sum to {total!r}, expected 1")


@dataclass
class ImbalanceState:
    """All imbalance counters after n assignments.

    d_margin is a list of length-m_i integer arrays, one per covariate;
    d_stratum is dense over the lexicographic stratum linearization.
    """

    dims: tuple[int, ...]
    n: int = 0
    d_overall: int = 0
    d_margin: list = field(default_factory=list)
    d_stratum: np.ndarray = None  # type: ignore[assignment]
    d_x: np.ndarray = None  # type: ignore[assignment]
    sum_x: np.ndarray = None  # type: ignore[assignment]
    n_arm1: int = 0

    def __post_init__(self):
        if not self.d_margin:
            self.d_margin = [np.zeros(m, dtype=np.int64) for m in self.dims]
        if self.d_stratum is None:
            self.d_stratum = np.zeros(math.prod(self.dims), dtype=np.int64)
        if self.d_x is None:
            self.d_x = np.zeros(len(self.dims))
        if self.sum_x is None:
            self.sum_x = np.zeros(len(self.dims))

    def copy(self) -> "ImbalanceState":
        """Independent snapshot; restore by using the snapshot in place."""
        return copy.deepcopy(self)


def apply_assignment(state: ImbalanceState, profile: PatientProfile, arm: int) -> ImbalanceState:
    """Record one assignment (arm 1 or 2); mutates and returns the state."""
    if arm not in (1, 2):
        raise ConfigError(f"arm must be 1 or 2, got {arm}")
    b = 1 if arm == 1 else -1
    state.n += 1
    state.d_overall += b
    state.n_arm1 += arm == 1
    for k, t in enumerate(profile.levels.levels):
        state.d_margin[k][t - 1] += b
    state.d_stratum[profile.levels.linear] += b
    raw = np.asarray(profile.raw, dtype=float)
    state.d_x += b * raw
    state.sum_x += raw
    return state


def lambda_at(state: ImbalanceState, weights: WeightConfig, stratum: StratumIndex) -> float:
    """Weighted imbalance Lambda_n(t) seen by a patient in the given stratum."""
    val = weights.w_o * state.d_overall
    for k, (t, w) in enumerate(zip(stratum.levels, weights.w_m)):
        val += w * state.d_margin[k][t - 1]
    val += weights.w_s * state.d_stratum[stratum.linear]
    return float(val)


def imbalance_measure(state: ImbalanceState, weights: WeightConfig) -> float:
    """M_n: weighted sum of squared imbalances over all levels.

    Recomputed from scratch; the simulation engine maintains the same
    quantity incrementally and the two are cross-checked in tests.
    """
    val = weights.w_o * float(state.d_overall) ** 2
    for k, w in enumerate(weights.w_m):
        d = state.d_margin[k].astype(float)
        val += w * float(d @ d)
    d = state.d_stratum.astype(float)
    val += weights.w_s * float(d @ d)
    return val


def v_statistic(state: ImbalanceState, sigmas_x: np.ndarray) -> float:
    """V_n = (D_n/sqrt n)^2 + sum_k (D_n^{x_k}/sqrt n)^2 / sigma_{x,k}^2.

    Uses population covariate variances, not the realized sample ones.
    """
    sigmas_x = np.asarray(sigmas_x, dtype=float)
    if state.n < 1:
        raise ConfigError("V_n requires at least one assignment")
    if np.any(sigmas_x <= 0):
        raise ConfigError("covariate variances must be positive")
    n = state.n
    val = (state.d_overall / math.sqrt(n)) ** 2
    val += float(np.sum((state.d_x / math.sqrt(n)) ** 2 / sigmas_x))
    return val


def delta_imbalance_identity_check(state: ImbalanceState, weights: WeightConfig,
                                   stratum: StratumIndex) -> float:
    """Potential-imbalance difference computed from first principles.

    Builds the two hypothetical weighted squared-imbalance totals (next
    patient to arm 1 vs arm 2, all potential differences +-1) and returns
    their difference. Contract: equals 4 * lambda_at(state, weights, stratum).
    """

    def potential(sign: int) -> float:
        val = weights.w_o * float(state.d_overall + sign) ** 2
        for k, (t, w) in enumerate(zip(stratum.levels, weights.w_m)):
            val += w * float(state.d_margin[k][t - 1] + sign) ** 2
        val += weights.w_s * float(state.d_stratum[stratum.linear] + sign) ** 2
        return val

    return potential(+1) - potential(-1)


def margin_sum_identity_gap(state: ImbalanceState, weights: WeightConfig) -> float:
    """Gap in the reconstruction sum_t Lambda_n(t) = c * D_n (0 when exact).

    The constant is c = w_s + sum_i w_{m,i} prod_{j != i} m_j + w_o * M.
    Useful as a self-check that margins, strata and the overall count stay
    consistent.
    """
    dims = state.dims
    M = math.prod(dims)
    total = 0.0
    for idx in range(M):
        total += lambda_at(state, weights, StratumIndex.from_linear(idx, dims))
    c = weights.w_s + weights.w_o * M
    for i, w in enumerate(weights.w_m):
        c += w * M / dims[i]
    return total - c * state.d_overall
