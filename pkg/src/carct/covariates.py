"""Covariate distributions, discretization, and their analytic moments.

A covariate enters the trial twice: its raw value X_k feeds the response
model and the test statistic, while its discretized level d_k(X_k) feeds
the randomization procedure. Everything downstream (strata, margins, the
power-loss constants) is derived from the objects defined here.

All distributions are recentered to mean zero at construction; the applied
shift is recorded so reports can translate back to the user's scale.
Cutpoints are declared on the original scale and shifted along with the
distribution, so bucket semantics are preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, NumericalError

# Strata are stored in dense arrays; refuse configs that would not fit.
MAX_STRATA = 10**6

_QUAD_ABS_TOL = 1e-10


@dataclass(frozen=True)
class CovariateSpec:
    """One covariate: a distribution plus the cutpoints defining its levels.

    Use the ``discrete``, ``uniform`` or ``normal`` constructors; the raw
    ``__init__`` expects already-recentered parameters.

    An empty cutpoint list means the covariate is not used in randomization
    (its discretization is constant, one level), in which case the whole
    variance is left unbalanced: sigma_delta_sq == sigma_x_sq.
    """

    kind: str
    cutpoints: tuple[float, ...] = ()
    shift: float = 0.0
    values: tuple[float, ...] | None = None  # discrete atoms, recentered
    probs: tuple[float, ...] | None = None
    lo: float | None = None  # uniform bounds, recentered
    hi: float | None = None
    sd: float | None = None  # normal scale

    def __post_init__(self):
        if self.kind not in ("discrete", "uniform", "normal"):
            raise ConfigError(f"unknown covariate kind {self.kind!r}")
        cuts = np.asarray(self.cutpoints, dtype=float)
        if cuts.size and not np.all(np.diff(cuts) > 0):
            raise ConfigError("cutpoints must be strictly increasing")
        if self.kind == "discrete":
            p = np.asarray(self.probs, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if p.size == 0 or p.size != v.size:
                raise ConfigError("discrete spec needs matching values and probs")
            if np.any(p <= 0):
                raise ConfigError("discrete probs must be positive")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ConfigError(f"discrete probs sum to {p.sum()!r}, not 1")
            if abs(float(p @ v)) > 1e-9 * max(1.0, float(np.abs(v).max())):
                raise ConfigError("discrete values are not centered; use CovariateSpec.discrete")
        elif self.kind == "uniform":
            if not (self.lo < self.hi):  # type: ignore[operator]
                raise ConfigError("uniform spec needs lo < hi")
        else:
            if not (self.sd and self.sd > 0):
                raise ConfigError("normal spec needs sd > 0")
        if self.sigma_x_sq <= 0:
            raise ConfigError("covariate variance must be positive")

    # ---- constructors ------------------------------------------------

    @staticmethod
    def discrete(points: list[tuple[float, float]] | dict[float, float],
                 cutpoints: tuple[float, ...] = ()) -> "CovariateSpec":
        """Atoms given as (value, prob) pairs on the user's scale."""
        if isinstance(points, dict):
            points = list(points.items())
        vals = np.array([v for v, _ in points], dtype=float)
        probs = np.array([p for _, p in points], dtype=float)
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError("discrete probs must be positive and sum to 1")
        mean = float(probs @ vals)
        return CovariateSpec(
            kind="discrete",
            cutpoints=tuple(float(c) - mean for c in cutpoints),
            shift=mean,
            values=tuple(vals - mean),
            probs=tuple(probs),
        )

    @staticmethod
    def uniform(lo: float, hi: float,
                cutpoints: tuple[float, ...] = ()) -> "CovariateSpec":
        mean = 0.5 * (lo + hi)
        return CovariateSpec(
            kind="uniform",
            cutpoints=tuple(float(c) - mean for c in cutpoints),
            shift=mean,
            lo=lo - mean,
            hi=hi - mean,
        )

    @staticmethod
    def normal(mean: float, sd: float,
               cutpoints: tuple[float, ...] = ()) -> "CovariateSpec":
        return CovariateSpec(
            kind="normal",
            cutpoints=tuple(float(c) - mean for c in cutpoints),
            shift=float(mean),
            sd=float(sd),
        )

    # ---- basic structure ---------------------------------------------

    @property
    def n_levels(self) -> int:
        return len(self.cutpoints) + 1

    @cached_property
    def sigma_x_sq(self) -> float:
        if self.kind == "discrete":
            v = np.asarray(self.values)
            p = np.asarray(self.probs)
            return float(p @ (v * v))
        if self.kind == "uniform":
            return (self.hi - self.lo) ** 2 / 12.0  # type: ignore[operator]
        return self.sd * self.sd  # type: ignore[operator]

    def level_of(self, x):
        """0-based level index; a value exactly on a cutpoint goes up."""
        cuts = np.asarray(self.cutpoints, dtype=float)
        return np.searchsorted(cuts, x, side="right")

    def sample_raw(self, u):
        """Map uniform(0,1) draws to raw (recentered) covariate values."""
        u = np.asarray(u, dtype=float)
        if self.kind == "discrete":
            cum = np.cumsum(self.probs)
            idx = np.searchsorted(cum, u, side="right")
            idx = np.minimum(idx, len(self.probs) - 1)
            return np.asarray(self.values, dtype=float)[idx]
        if self.kind == "uniform":
            return self.lo + u * (self.hi - self.lo)
        tiny = 2.0**-53  # keep ndtri finite at the u=0 edge
        return self.sd * special.ndtri(np.clip(u, tiny, 1.0 - tiny))

    # ---- moments -------------------------------------------------------

    @cached_property
    def level_probs(self) -> tuple[float, ...]:
        """P(level) per bucket; telescoping CDF differences, exact sum 1."""
        edges = (-math.inf, *self.cutpoints, math.inf)
        cdf_vals = [self._cdf(e) for e in edges]
        probs = tuple(cdf_vals[i + 1] - cdf_vals[i] for i in range(self.n_levels))
        return probs

    def _cdf(self, x: float) -> float:
        if x == -math.inf:
            return 0.0
        if x == math.inf:
            return 1.0
        if self.kind == "discrete":
            v = np.asarray(self.values)
            p = np.asarray(self.probs)
            return float(p[v < x].sum())  # ties go to the upper bucket
        if self.kind == "uniform":
            t = (x - self.lo) / (self.hi - self.lo)  # type: ignore[operator]
            return min(1.0, max(0.0, t))
        return float(special.ndtr(x / self.sd))  # type: ignore[operator]

    def _partial_mean(self, lo: float, hi: float) -> float:
        """E[X; lo <= X < hi] by adaptive quadrature (exact sums if discrete)."""
        if self.kind == "discrete":
            v = np.asarray(self.values)
            p = np.asarray(self.probs)
            mask = (v >= lo) & (v < hi)
            return float(p[mask] @ v[mask])
        if self.kind == "uniform":
            dens = 1.0 / (self.hi - self.lo)  # type: ignore[operator]
            a, b = max(lo, self.lo), min(hi, self.hi)  # type: ignore[type-var]
            if a >= b:
                return 0.0
            pdf = lambda x: dens
        else:
            sd = self.sd
            pdf = lambda x: math.exp(-0.5 * (x / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
            a, b = lo, hi
        val, err = integrate.quad(lambda x: x * pdf(x), a, b, epsabs=_QUAD_ABS_TOL, limit=200)
        if err > 1e-8:
            raise NumericalError(
                f"covariate moment integral did not converge (abserr={err:.2e})")
        return val

    @cached_property
    def conditional_means(self) -> tuple[float, ...]:
        """E[X | level] per bucket."""
        edges = (-math.inf, *self.cutpoints, math.inf)
        out = []
        for i, p in enumerate(self.level_probs):
            if p <= 0:
                raise ConfigError(f"level {i + 1} of a {self.kind} covariate has zero probability")
            out.append(self._partial_mean(edges[i], edges[i + 1]) / p)
        return tuple(out)

    @cached_property
    def sigma_delta_sq(self) -> float:
        """Unbalanced residual variance E[Var(X | level)].

        Levels have mean zero overall, so Var(E[X|level]) is just the
        probability-weighted sum of squared conditional means.
        """
        between = sum(p * m * m for p, m in zip(self.level_probs, self.conditional_means))
        return max(0.0, self.sigma_x_sq - between)


@dataclass(frozen=True)
class CovariateMoments:
    sigma_x_sq: float
    sigma_delta_sq: float
    conditional_means: tuple[float, ...]
    level_probs: tuple[float, ...]


@dataclass(frozen=True)
class StratumIndex:
    """Joint level assignment (t_1, ..., t_I), each t_i in 1..m_i."""

    levels: tuple[int, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.dims):
            raise ConfigError("levels and dims lengths differ")
        for t, m in zip(self.levels, self.dims):
            if not 1 <= t <= m:
                raise ConfigError(f"level {t} outside 1..{m}")

    @property
    def linear(self) -> int:
        """Lexicographic linearization onto 0..M-1."""
        idx = 0
        for t, m in zip(self.levels, self.dims):
            idx = idx * m + (t - 1)
        return idx

    @staticmethod
    def from_linear(idx: int, dims: tuple[int, ...]) -> "StratumIndex":
        levels = []
        for m in reversed(dims):
            levels.append(idx % m + 1)
            idx //= m
        return StratumIndex(tuple(reversed(levels)), dims)


@dataclass(frozen=True)
class PatientProfile:
    """Raw covariate values and the discretized levels used in randomization."""

    raw: tuple[float, ...]
    levels: StratumIndex


def stratum_dims(specs: list[CovariateSpec]) -> tuple[int, ...]:
    dims = tuple(s.n_levels for s in specs)
    total = math.prod(dims)
    if total > MAX_STRATA:
        raise ConfigError(f"{total} strata exceed the limit of {MAX_STRATA}")
    return dims


def sample_profile(specs: list[CovariateSpec], rng: np.random.Generator) -> PatientProfile:
    """Draw one patient's covariates, independent across covariates."""
    if not specs:
        raise ConfigError("at least one covariate spec is required")
    dims = stratum_dims(specs)
    raw, levels = [], []
    for s in specs:
        x = float(s.sample_raw(rng.random()))
        raw.append(x)
        levels.append(int(s.level_of(x)) + 1)
    return PatientProfile(tuple(raw), StratumIndex(tuple(levels), dims))


def covariate_moments(spec: CovariateSpec) -> CovariateMoments:
    """Analytic moments of one covariate under its discretization."""
    return CovariateMoments(
        sigma_x_sq=spec.sigma_x_sq,
        sigma_delta_sq=spec.sigma_delta_sq,
        conditional_means=spec.conditional_means,
        level_probs=spec.level_probs,
    )


def stratum_probabilities(specs: list[CovariateSpec]) -> np.ndarray:
    """Product-measure probabilities of all M strata, lexicographic order."""
    dims = stratum_dims(specs)
    out = np.ones(1)
    for s in specs:
        p = np.asarray(s.level_probs, dtype=float)
        if np.any(p <= 0):
            raise ConfigError("every covariate level must have positive probability")
        out = np.kron(out, p)
    assert abs(out.sum() - 1.0) <= 1e-12
    _ = dims
    return out
