"""Randomization procedures.

Every procedure exposes the same interface: the probability p_m of sending
the next patient to arm 1 given the current imbalance state and the
patient's covariate levels. Besides the classical rules (complete
randomization, Efron's biased coin, Wei's adaptive biased coin, stratified
permuted blocks, Pocock-Simon minimization, the weighted marginal+stratum
coin) there is a scale-indexed family

    p_m = g(4 * Lambda_{m-1}(t*) / (m-1)**gamma),

which interpolates between the step rules (gamma=0) and Wei-style vanishing
bias (gamma=1). gamma controls the tradeoff: imbalance grows like n**gamma
while the excess guessing advantage decays like n**(-gamma/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .covariates import PatientProfile
from .errors import ConfigError
from .imbalance import ImbalanceState, WeightConfig, lambda_at

# ---------------------------------------------------------------------------
# allocation functions
# ---------------------------------------------------------------------------


def _g_linear(y):
    return np.clip(0.5 * (1.0 - np.asarray(y, dtype=float)), 0.0, 1.0)


def _g_normal_tail(y):
    return special.ndtr(-np.asarray(y, dtype=float))


_BASES = {"linear": _g_linear, "normal_tail": _g_normal_tail}


def sqrt_tail(x, n):
    """g_n(x) = Phi(-sgn(x) sqrt(|x|/n)).

    Reference allocation function that passes all three balance/bias
    diagnostics below; its slope at 0 is unbounded, so it is not admitted
    as a family base.
    """
    x = np.asarray(x, dtype=float)
    return special.ndtr(-np.sign(x) * np.sqrt(np.abs(x) / n))


def _step(p: float, x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, p, np.where(x > 0, 1.0 - p, 0.5))


@dataclass(frozen=True)
class AllocationFunction:
    """g_n(x): maps the potential-imbalance difference to P(arm 1).

    kinds:
      step(p):            p below 0, 1/2 at 0, 1-p above 0
      scaled(base, gamma): g(x / (n-1)**gamma), base non-increasing with
                           g(0)=1/2 and finite negative slope at 0
      custom(table):      monotone non-increasing interpolation table,
                           applied to x directly (no n dependence)
    """

    kind: str
    p: float | None = None
    base: str | None = None
    gamma: float | None = None
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind == "step":
            if not (self.p is not None and 0.5 < self.p < 1.0):
                raise ConfigError("step allocation needs 1/2 < p < 1")
        elif self.kind == "scaled":
            if self.base not in _BASES:
                raise ConfigError(f"unknown base {self.base!r}; choose from {sorted(_BASES)}")
            if self.gamma is None or not 0.0 <= self.gamma <= 1.0:
                raise ConfigError("scaled allocation needs 0 <= gamma <= 1")
        elif self.kind == "custom":
            if not self.table or len(self.table) < 2:
                raise ConfigError("custom allocation needs at least two table points")
            xs = [x for x, _ in self.table]
            gs = [g for _, g in self.table]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ConfigError("custom table x values must be strictly increasing")
            if any(b > a for a, b in zip(gs, gs[1:])):
                raise ConfigError("custom table must be non-increasing")
            if min(gs) < 0 or max(gs) > 1:
                raise ConfigError("custom table values must lie in [0, 1]")
        else:
            raise ConfigError(f"unknown allocation kind {self.kind!r}")

    @staticmethod
    def step(p: float) -> "AllocationFunction":
        return AllocationFunction(kind="step", p=float(p))

    @staticmethod
    def scaled(base: str = "linear", gamma: float = 0.5) -> "AllocationFunction":
        return AllocationFunction(kind="scaled", base=base, gamma=float(gamma))

    @staticmethod
    def custom(table) -> "AllocationFunction":
        return AllocationFunction(kind="custom", table=tuple((float(x), float(g)) for x, g in table))

    def evaluate(self, x, n: int):
        """g_n(x) for patient index n (n >= 2 for scaled kinds)."""
        if self.kind == "step":
            return _step(self.p, x)
        if self.kind == "scaled":
            scale = float(n - 1) ** self.gamma
            if scale <= 0:
                raise ConfigError("scaled allocation undefined for the first patient")
            return _BASES[self.base](np.asarray(x, dtype=float) / scale)
        xs = np.array([p[0] for p in self.table])
        gs = np.array([p[1] for p in self.table])
        return np.interp(np.asarray(x, dtype=float), xs, gs)


# ---------------------------------------------------------------------------
# procedure configuration
# ---------------------------------------------------------------------------

_KINDS = ("complete", "efron", "wei", "permuted_block", "pocock_simon", "hu_hu", "family")


@dataclass(frozen=True)
class ProcedureConfig:
    """A named randomization rule plus its parameters.

    The classical rules are special cases of the weighted family; the
    ``unified_weights`` view makes that explicit and also fixes which
    weights the imbalance summary M_n is reported under.
    """

    kind: str
    p: float | None = None
    base: str | None = None
    block_size: int | None = None
    margin_weights: tuple[float, ...] | None = None
    weights: WeightConfig | None = None
    alloc: AllocationFunction | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown procedure kind {self.kind!r}; choose from {_KINDS}")
        if self.kind in ("efron", "pocock_simon", "hu_hu"):
            if not (self.p is not None and 0.5 < self.p < 1.0):
                raise ConfigError(f"{self.kind} needs a coin bias 1/2 < p < 1")
        if self.kind == "wei" and self.base not in _BASES:
            raise ConfigError("wei needs base 'linear' or 'normal_tail'")
        if self.kind == "permuted_block":
            b = self.block_size
            if not (isinstance(b, int) and b > 0 and b % 2 == 0):
                raise ConfigError("block_size must be a positive even integer")
        if self.kind == "pocock_simon" and self.margin_weights is not None:
            w = np.asarray(self.margin_weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ConfigError("margin weights must be nonnegative and sum to 1")
        if self.kind == "hu_hu" and self.weights is None:
            raise ConfigError("hu_hu needs a WeightConfig")
        if self.kind == "family":
            if self.weights is None or self.alloc is None:
                raise ConfigError("family needs a WeightConfig and an AllocationFunction")

    # -- constructors ----------------------------------------------------

    @staticmethod
    def complete() -> "ProcedureConfig":
        return ProcedureConfig(kind="complete")

    @staticmethod
    def efron(p: float = 2.0 / 3.0) -> "ProcedureConfig":
        return ProcedureConfig(kind="efron", p=p)

    @staticmethod
    def wei(base: str = "linear") -> "ProcedureConfig":
        return ProcedureConfig(kind="wei", base=base)

    @staticmethod
    def permuted_block(block_size: int = 4) -> "ProcedureConfig":
        return ProcedureConfig(kind="permuted_block", block_size=block_size)

    @staticmethod
    def pocock_simon(p: float = 2.0 / 3.0, margin_weights=None) -> "ProcedureConfig":
        mw = None if margin_weights is None else tuple(float(w) for w in margin_weights)
        return ProcedureConfig(kind="pocock_simon", p=p, margin_weights=mw)

    @staticmethod
    def hu_hu(weights: WeightConfig, p: float = 2.0 / 3.0) -> "ProcedureConfig":
        return ProcedureConfig(kind="hu_hu", p=p, weights=weights)

    @staticmethod
    def family(weights: WeightConfig, alloc: AllocationFunction) -> "ProcedureConfig":
        return ProcedureConfig(kind="family", weights=weights, alloc=alloc)

    # -- unified view ------------------------------------------------------

    def unified_weights(self, n_covariates: int) -> WeightConfig:
        """Weights this procedure measures imbalance under."""
        zeros = (0.0,) * n_covariates
        if self.kind in ("complete", "efron", "wei"):
            return WeightConfig(1.0, zeros, 0.0)
        if self.kind == "permuted_block":
            return WeightConfig(0.0, zeros, 1.0)
        if self.kind == "pocock_simon":
            mw = self.margin_weights
            if mw is None:
                mw = (1.0 / n_covariates,) * n_covariates
            if len(mw) != n_covariates:
                raise ConfigError(f"{len(mw)} margin weights for {n_covariates} covariates")
            return WeightConfig(0.0, tuple(mw), 0.0)
        assert self.weights is not None
        if len(self.weights.w_m) != n_covariates:
            raise ConfigError(
                f"{len(self.weights.w_m)} margin weights for {n_covariates} covariates")
        return self.weights

    def unified_alloc(self) -> AllocationFunction | None:
        """Step/scaled view of the coin, where one exists."""
        if self.kind in ("efron", "pocock_simon", "hu_hu"):
            return AllocationFunction.step(self.p)
        if self.kind == "family":
            return self.alloc
        return None

    @property
    def label(self) -> str:
        if self.kind == "complete":
            return "complete"
        if self.kind == "efron":
            return f"efron(p={self.p:g})"
        if self.kind == "wei":
            return f"wei({self.base})"
        if self.kind == "permuted_block":
            return f"permuted_block(b={self.block_size})"
        if self.kind == "pocock_simon":
            return f"pocock_simon(p={self.p:g})"
        if self.kind == "hu_hu":
            return f"hu_hu(p={self.p:g})"
        a = self.alloc
        inner = f"step(p={a.p:g})" if a.kind == "step" else f"{a.base},gamma={a.gamma:g}"
        return f"family({inner})"


@dataclass
class PermutedBlockState:
    """Remaining block capacity per stratum; both zero means refill."""

    block_size: int
    arm1_left: np.ndarray
    arm2_left: np.ndarray

    @staticmethod
    def fresh(n_strata: int, block_size: int) -> "PermutedBlockState":
        half = block_size // 2
        return PermutedBlockState(
            block_size=block_size,
            arm1_left=np.full(n_strata, half, dtype=np.int64),
            arm2_left=np.full(n_strata, half, dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------


def assignment_probability(config: ProcedureConfig, state: ImbalanceState,
                           aux: PermutedBlockState | None,
                           profile: PatientProfile) -> float:
    """Probability p_m of assigning the next patient to arm 1."""
    n = state.n + 1  # index of the patient being assigned
    if config.kind == "complete":
        return 0.5
    if config.kind == "efron":
        return float(_step(config.p, state.d_overall))
    if config.kind == "wei":
        if n == 1:
            return 0.5
        return float(_BASES[config.base](state.d_overall / (n - 1)))
    if config.kind == "permuted_block":
        if aux is None:
            raise ConfigError("permuted_block needs a PermutedBlockState")
        idx = profile.levels.linear
        a1, a2 = int(aux.arm1_left[idx]), int(aux.arm2_left[idx])
        if a1 == 0 and a2 == 0:  # block exhausted, next draw opens a new one
            a1 = a2 = config.block_size // 2
        return a1 / (a1 + a2)
    weights = config.unified_weights(len(state.dims))
    lam = lambda_at(state, weights, profile.levels)
    if config.kind in ("pocock_simon", "hu_hu"):
        return float(_step(config.p, lam))
    if n == 1:
        return 0.5
    return float(config.alloc.evaluate(4.0 * lam, n))


def assign(config: ProcedureConfig, state: ImbalanceState,
           aux: PermutedBlockState | None, profile: PatientProfile,
           rng: np.random.Generator) -> tuple[int, float]:
    """Draw the assignment; returns (arm, p_m). p_m is recorded because the
    low-variance selection-bias estimator averages |p_m - 1/2|."""
    p_m = assignment_probability(config, state, aux, profile)
    arm = 1 if rng.random() < p_m else 2
    if config.kind == "permuted_block":
        idx = profile.levels.linear
        if aux.arm1_left[idx] == 0 and aux.arm2_left[idx] == 0:
            half = config.block_size // 2
            aux.arm1_left[idx] = half
            aux.arm2_left[idx] = half
        if arm == 1:
            aux.arm1_left[idx] -= 1
        else:
            aux.arm2_left[idx] -= 1
    return arm, p_m


# ---------------------------------------------------------------------------
# allocation-function diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AllocationReport:
    """Numerical diagnostics for the three allocation-function conditions.

    balance_direction: g_n(x) <= 1/2 <= g_n(-x) for x >= 0 (the coin never
        favors the leading arm). Needed for every balance result.
    strong_correction: the pull |1/2 - g_n(x_n)| dominates |x_n|/n along
        every vanishing-imbalance sequence; diagnosed by a ladder of
        shrinking relative imbalances whose worst-case ratio must grow
        beyond 1e3. Grants vanishing imbalance (M_n = o(n)).
    vanishing_bias: g_n(x_n) -> 1/2 along x_n/n -> 0, diagnosed by the
        worst deviation at the finest rung (< 1e-3). Grants asymptotically
        unguessable assignments.

    These are grid diagnostics, not proofs.
    """

    balance_direction: bool
    strong_correction: bool
    vanishing_bias: bool
    detail: dict


def validate_allocation_function(fn, n_grid=None, x_grid=None) -> AllocationReport:
    """Classify an allocation function against the three conditions.

    fn is an AllocationFunction or any callable g(x, n) -> probability.
    n_grid: increasing patient counts, one per ladder rung.
    x_grid: decreasing relative imbalances |x|/n, paired with n_grid.
    """
    if isinstance(fn, AllocationFunction):
        g = fn.evaluate
    else:
        g = fn
    if n_grid is None:
        n_grid = [10 ** (2 + 2 * j) for j in range(8)]
    if x_grid is None:
        x_grid = [10.0 ** (-1 - j) for j in range(len(n_grid))]
    if len(n_grid) != len(x_grid):
        raise ConfigError("n_grid and x_grid must pair up rung by rung")

    tol = 1e-12
    ok_direction = True
    for n, r in zip(n_grid, x_grid):
        for x in (r * n * 10.0 ** (-k) for k in range(4)):
            gp = float(g(x, n))
            gm = float(g(-x, n))
            if gp > 0.5 + tol or gm < 0.5 - tol:
                ok_direction = False

    # Strong correction pairs rungs: n grows while |x|/n shrinks, and the
    # worst-case correction-to-imbalance ratio must still diverge.
    ratios = []
    for n, r in zip(n_grid, x_grid):
        worst_ratio = math.inf
        for k in range(4):
            rel = r * 10.0 ** (-k)
            dev = abs(float(g(rel * n, n)) - 0.5)
            worst_ratio = min(worst_ratio, dev / rel)
        ratios.append(worst_ratio)

    # Vanishing bias is a limsup over n at each fixed |x|/n, so each rel is
    # crossed with a much larger n sweep (pure function evaluation, so the
    # sweep can far exceed any simulable trial size).
    vanish_n = [10.0 ** (6 * (j + 1)) for j in range(len(n_grid))]
    deviations = []
    for r in x_grid:
        worst_dev = 0.0
        for n in vanish_n:
            worst_dev = max(worst_dev, abs(float(g(r * n, n)) - 0.5),
                            abs(float(g(-r * n, n)) - 0.5))
        deviations.append(worst_dev)

    growing = all(b > a for a, b in zip(ratios, ratios[1:]))
    ok_strong = growing and ratios[-1] > 1e3
    ok_vanish = deviations[-1] < 1e-3

    return AllocationReport(
        balance_direction=ok_direction,
        strong_correction=ok_strong,
        vanishing_bias=ok_vanish,
        detail={"ratios": ratios, "deviations": deviations,
                "n_grid": list(n_grid), "x_grid": list(x_grid)},
    )
