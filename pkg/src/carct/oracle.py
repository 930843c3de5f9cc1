"""Exact small-instance results that anchor the Monte Carlo engine.

Two tools:

* enumerate_exact: exact distribution of the per-stratum difference vector
  after n patients, obtained by propagating probabilities through every
  (stratum, assignment) branch. Feasible because the assignment chain is
  Markov in that vector (plus block urns), so paths merge.
* chain_stationary: for time-homogeneous (step-rule) coins the difference
  vector is a positive recurrent Markov chain; its invariant law on a
  truncated box gives the limiting selection bias.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .covariates import CovariateSpec, PatientProfile, StratumIndex, stratum_dims, stratum_probabilities
from .errors import BudgetExceededError, ConfigError, NumericalError
from .imbalance import ImbalanceState
from .procedures import PermutedBlockState, ProcedureConfig, assignment_probability

_PATH_BUDGET = 1e7
_STATE_BUDGET = 200_000


@dataclass(frozen=True)
class ExactDistribution:
    """Exact law of the end-of-trial imbalance summaries.

    support pairs each per-stratum difference vector with its probability;
    d_dist is the implied law of the overall difference D_n."""

    n: int
    support: tuple[tuple[tuple[int, ...], float], ...]
    d_dist: dict[int, float]
    m_mean: float
    m_sq_mean: float
    abs_d_mean: float
    d_sq_mean: float
    sb_n: float


def _require_discrete(specs):
    for s in specs:
        if s.kind != "discrete":
            raise ConfigError("exact enumeration needs discrete covariates")


def _profiles_by_stratum(specs, dims):
    n_strata = math.prod(dims)
    out = []
    for idx in range(n_strata):
        levels = StratumIndex.from_linear(idx, dims)
        out.append(PatientProfile(raw=(0.0,) * len(dims), levels=levels))
    return out


def _state_from_differences(diffs, dims, n):
    """ImbalanceState whose stratum/margin/overall counters match diffs.

    Raw-covariate sums are left at zero; the coin never reads them."""
    state = ImbalanceState(dims=dims, n=n)
    state.d_stratum = np.asarray(diffs, dtype=np.int64).copy()
    state.d_overall = int(state.d_stratum.sum())
    n_strata = len(diffs)
    for k, m in enumerate(dims):
        block = 1
        for mm in dims[k + 1:]:
            block *= mm
        margin = np.zeros(m, dtype=np.int64)
        for idx in range(n_strata):
            margin[(idx // block) % m] += diffs[idx]
        state.d_margin[k] = margin
    return state


def _m_value(diffs, dims, weights):
    state = _state_from_differences(diffs, dims, 0)
    val = weights.w_o * float(state.d_overall) ** 2
    for w, margin in zip(weights.w_m, state.d_margin):
        val += w * float(margin @ margin)
    val += weights.w_s * float(state.d_stratum @ state.d_stratum)
    return val


def enumerate_exact(procedure: ProcedureConfig, specs: list[CovariateSpec],
                    n: int) -> ExactDistribution:
    """Exact enumeration over covariate and assignment sequences."""
    _require_discrete(specs)
    dims = stratum_dims(specs)
    n_strata = math.prod(dims)
    branching = 2 * n_strata
    if branching ** n > _PATH_BUDGET:
        feasible = int(math.log(_PATH_BUDGET) / math.log(branching))
        raise BudgetExceededError(
            f"(2M)^n = {branching}^{n} exceeds the {_PATH_BUDGET:.0e} path budget; "
            f"n <= {feasible} is feasible for M = {n_strata} strata")
    p_strat = stratum_probabilities(specs) if specs else np.ones(1)
    profiles = _profiles_by_stratum(specs, dims)
    blocked = procedure.kind == "permuted_block"
    half = procedure.block_size // 2 if blocked else 0

    if blocked:
        start = tuple((0, half, half) for _ in range(n_strata))
    else:
        start = (0,) * n_strata
    dp = {start: 1.0}
    sb_sum = 0.0

    for step in range(n):
        new_dp: dict[tuple, float] = {}
        sb_step = 0.0
        for key, prob in dp.items():
            if blocked:
                diffs = tuple(entry[0] for entry in key)
                aux = PermutedBlockState(
                    block_size=procedure.block_size,
                    arm1_left=np.array([entry[1] for entry in key], dtype=np.int64),
                    arm2_left=np.array([entry[2] for entry in key], dtype=np.int64),
                )
            else:
                diffs = key
                aux = None
            state = _state_from_differences(diffs, dims, step)
            for s in range(n_strata):
                p_m = assignment_probability(procedure, state, aux, profiles[s])
                sb_step += prob * p_strat[s] * abs(p_m - 0.5)
                for arm, p_arm in ((1, p_m), (2, 1.0 - p_m)):
                    if p_arm <= 0.0:
                        continue
                    if blocked:
                        d, a1, a2 = key[s]
                        if a1 == 0 and a2 == 0:
                            a1 = a2 = half
                        if arm == 1:
                            entry = (d + 1, a1 - 1, a2)
                        else:
                            entry = (d - 1, a1, a2 - 1)
                        nxt = key[:s] + (entry,) + key[s + 1:]
                    else:
                        d = key[s] + (1 if arm == 1 else -1)
                        nxt = key[:s] + (d,) + key[s + 1:]
                    w = prob * p_strat[s] * p_arm
                    new_dp[nxt] = new_dp.get(nxt, 0.0) + w
        sb_sum += sb_step
        dp = new_dp

    total = sum(dp.values())
    if abs(total - 1.0) > 1e-12:
        raise NumericalError(f"enumeration mass {total!r} drifted from 1")

    weights = procedure.unified_weights(len(specs))
    support = []
    d_dist: dict[int, float] = {}
    m_mean = m_sq = abs_d = d_sq = 0.0
    for key, prob in sorted(dp.items()):
        diffs = tuple(entry[0] for entry in key) if blocked else key
        support.append((diffs, prob))
        d = sum(diffs)
        d_dist[d] = d_dist.get(d, 0.0) + prob
        m_val = _m_value(diffs, dims, weights)
        m_mean += prob * m_val
        m_sq += prob * m_val ** 2
        abs_d += prob * abs(d)
        d_sq += prob * d * d
    return ExactDistribution(
        n=n,
        support=tuple(support),
        d_dist=d_dist,
        m_mean=m_mean,
        m_sq_mean=m_sq,
        abs_d_mean=abs_d,
        d_sq_mean=d_sq,
        sb_n=0.5 + sb_sum / n,
    )


# ---------------------------------------------------------------------------
# stationary law of the difference chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryResult:
    pi: dict[tuple[int, ...], float]
    sb_limit: float
    truncation_mass: float


def _is_time_homogeneous(procedure: ProcedureConfig) -> bool:
    if procedure.kind in ("complete", "efron", "pocock_simon", "hu_hu"):
        return True
    if procedure.kind == "family":
        a = procedure.alloc
        return a.kind in ("step", "custom") or (a.kind == "scaled" and a.gamma == 0.0)
    return False


def _chain_coordinates(procedure, specs, dims):
    """Minimal sufficient state for a time-homogeneous coin.

    Only counters the rule actually reads can be kept: tracking more makes
    the truncated chain null recurrent (untracked components diffuse freely
    and the exit mass never vanishes). Returns (n_coords, arrivals, probe)
    where arrivals pairs each patient type with (probability, coordinate
    indices it bumps) and probe maps a state vector and arrival to p_m.
    The probe state uses n=2 so coins that look at the patient index are
    past the forced fair first draw."""
    n_cov = len(specs)
    weights = procedure.unified_weights(n_cov)

    if weights.w_s > 0.0:
        # Full per-stratum differences; margins and D derive from them.
        n_strata = math.prod(dims)
        p_strat = stratum_probabilities(specs)
        profiles = _profiles_by_stratum(specs, dims)
        arrivals = [(float(p_strat[s]), (s,), s) for s in range(n_strata)]

        def probe(vec, s):
            state = _state_from_differences(tuple(vec), dims, 2)
            return assignment_probability(procedure, state, None, profiles[s])

        return n_strata, arrivals, probe

    if any(w > 0.0 for w in weights.w_m):
        # Margin differences of the covariates with positive weight. The
        # overall difference equals any tracked covariate's margin total.
        tracked = [j for j in range(n_cov) if weights.w_m[j] > 0.0]
        offsets = {}
        n_coords = 0
        for j in tracked:
            offsets[j] = n_coords
            n_coords += dims[j]
        arrivals = []
        for combo in itertools.product(*[range(dims[j]) for j in tracked]):
            prob = 1.0
            for j, lev in zip(tracked, combo):
                prob *= specs[j].level_probs[lev]
            coords = tuple(offsets[j] + lev for j, lev in zip(tracked, combo))
            arrivals.append((prob, coords, combo))
        j0 = tracked[0]

        def probe(vec, combo):
            state = ImbalanceState(dims=dims, n=2)
            for j in tracked:
                state.d_margin[j] = np.asarray(
                    vec[offsets[j]:offsets[j] + dims[j]], dtype=np.int64)
            state.d_overall = int(sum(vec[offsets[j0]:offsets[j0] + dims[j0]]))
            levels = [1] * n_cov
            for j, lev in zip(tracked, combo):
                levels[j] = lev + 1
            profile = PatientProfile(raw=(0.0,) * n_cov,
                                     levels=StratumIndex(tuple(levels), dims))
            return assignment_probability(procedure, state, None, profile)

        return n_coords, arrivals, probe

    # Overall difference only (every patient type is equivalent).
    profile = PatientProfile(raw=(0.0,) * n_cov,
                             levels=StratumIndex((1,) * n_cov, dims))

    def probe(vec, _arrival):
        state = ImbalanceState(dims=dims, n=2)
        state.d_overall = int(vec[0])
        return assignment_probability(procedure, state, None, profile)

    return 1, [(1.0, (0,), None)], probe


def chain_stationary(procedure: ProcedureConfig, specs: list[CovariateSpec],
                     radius: int) -> StationaryResult:
    """Invariant law of the difference chain on the box |coord| <= radius.

    The chain lives on the minimal counters the rule reads (overall
    difference, margin differences, or per-stratum differences; see
    _chain_coordinates), restricted to the states reachable from zero.
    Moves that would exit the box are reflected back in place and the
    redirected stationary mass is reported as truncation_mass. pi is empty
    for rules that never deviate from the fair coin."""
    _require_discrete(specs)
    if not _is_time_homogeneous(procedure):
        raise ConfigError(f"{procedure.kind} does not drive a time-homogeneous chain")
    if radius < 5:
        raise ConfigError("truncation radius must be at least 5")
    if procedure.kind == "complete":
        return StationaryResult(pi={}, sb_limit=0.5, truncation_mass=0.0)
    dims = stratum_dims(specs)
    n_coords, arrivals, probe = _chain_coordinates(procedure, specs, dims)

    origin = (0,) * n_coords
    index = {origin: 0}
    states = [origin]
    queue = deque([origin])
    rows, cols, vals = [], [], []
    exits, devs = [], []  # per-state exit probability, E|p_m - 1/2|
    while queue:
        vec = queue.popleft()
        i = index[vec]
        stay = 0.0
        exit_mass = 0.0
        dev = 0.0
        for prob, coords, arrival in arrivals:
            p_m = probe(vec, arrival)
            dev += prob * abs(p_m - 0.5)
            for move, p_arm in ((1, p_m), (-1, 1.0 - p_m)):
                w = prob * p_arm
                if w <= 0.0:
                    continue
                nxt = list(vec)
                for c in coords:
                    nxt[c] += move
                if any(abs(d) > radius for d in nxt):
                    stay += w
                    exit_mass += w
                    continue
                nxt = tuple(nxt)
                j = index.get(nxt)
                if j is None:
                    j = len(states)
                    if j >= _STATE_BUDGET:
                        raise BudgetExceededError(
                            f"truncated chain exceeds {_STATE_BUDGET} states; "
                            f"reduce the radius or the covariate levels")
                    index[nxt] = j
                    states.append(nxt)
                    queue.append(nxt)
                rows.append(j)
                cols.append(i)
                vals.append(w)
        if stay > 0.0:
            rows.append(i)
            cols.append(i)
            vals.append(stay)
        exits.append(exit_mass)
        devs.append(dev)

    n_states = len(states)
    exit_prob = np.asarray(exits)
    abs_dev = np.asarray(devs)

    # solve pi P = pi, sum pi = 1: replace the last balance equation by the
    # normalization row (P^T - I is rank-deficient by exactly one)
    a = sparse.coo_matrix((vals, (rows, cols)), shape=(n_states, n_states)).tocsr()
    a = a - sparse.identity(n_states, format="csr")
    a = a.tolil()
    a[n_states - 1, :] = 1.0
    rhs = np.zeros(n_states)
    rhs[-1] = 1.0
    pi = spsolve(a.tocsr(), rhs)
    if not np.isfinite(pi).all():
        raise NumericalError("stationary solve failed (chain not irreducible?)")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()

    truncation_mass = float(pi @ exit_prob)
    if truncation_mass > 1e-3:
        raise NumericalError(
            f"truncation mass {truncation_mass:.3e} too large; increase the radius")
    if truncation_mass > 1e-6:
        warnings.warn(f"truncation mass {truncation_mass:.3e} at radius {radius}")

    sb_limit = 0.5 + float(pi @ abs_dev)
    pi_dict = {states[i]: float(pi[i]) for i in range(n_states) if pi[i] > 0.0}
    return StationaryResult(pi=pi_dict, sb_limit=sb_limit, truncation_mass=truncation_mass)
