"""Response generation, OLS-based testing, and power-loss quantities.

The working model is

    Y_i = mu1 * T_i + mu2 * (1 - T_i) + beta' x_i + eps_i,

fit by least squares on the design (T, 1-T, x) so the treatment contrast is
L gamma with L = (1, -1, 0, ..., 0). Conditional on the design, the t
statistic is noncentral t with nu = n - I - 2 degrees of freedom and
noncentrality (mu / 2 sigma_eps) * ell_n, where ell_n collapses the whole
design's influence on power into one scalar (ell_n = sqrt(n) at perfect
balance, and n - ell_n^2 is asymptotically the balance statistic V_n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigError, DegenerateDesignError, NumericalError
from .imbalance import ImbalanceState

_COND_LIMIT = 1e12
_QUAD_ABS_TOL = 1e-10
_POISSON_TAIL = 1e-12


@dataclass(frozen=True)
class ResponseModel:
    mu1: float
    mu2: float
    beta: tuple[float, ...]
    sigma_eps: float

    def __post_init__(self):
        if not self.sigma_eps > 0:
            raise ConfigError("sigma_eps must be positive")

    @property
    def mu(self) -> float:
        return self.mu1 - self.mu2


@dataclass(frozen=True)
class TrialData:
    """Design matrix with columns (T, 1-T, x_1..x_I) and responses."""

    design: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        d = self.design
        if d.ndim != 2 or d.shape[0] != self.y.shape[0]:
            raise ConfigError("design and responses must have matching rows")
        if self.n <= self.n_covariates + 2:
            raise ConfigError("need n > I + 2 for a nonzero-df fit")
        t, c = d[:, 0], d[:, 1]
        if not (np.all((t == 0) | (t == 1)) and np.allclose(t + c, 1.0)):
            raise ConfigError("first two design columns must be complementary indicators")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.design.shape[1] - 2

    @property
    def nu(self) -> int:
        return self.n - self.n_covariates - 2

    @staticmethod
    def from_arrays(arms, x, y) -> "TrialData":
        arms = np.asarray(arms)
        t = (arms == 1).astype(float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        design = np.column_stack([t, 1.0 - t, x])
        return TrialData(design=design, y=np.asarray(y, dtype=float))


@dataclass(frozen=True)
class TestSpec:
    sides: str = "one"
    family: str = "t"
    alpha: float = 0.05

    def __post_init__(self):
        if self.sides not in ("one", "two"):
            raise ConfigError("sides must be 'one' or 'two'")
        if self.family not in ("t", "z"):
            raise ConfigError("family must be 't' or 'z'")
        if not 0.0 < self.alpha <= 0.5:
            raise ConfigError("alpha must lie in (0, 0.5]")


def generate_responses(model: ResponseModel, assignments, profiles,
                       rng: np.random.Generator) -> TrialData:
    """Simulate responses for given assignments and covariate profiles."""
    arms = np.asarray(assignments)
    if len(profiles) and hasattr(profiles[0], "raw"):
        x = np.array([p.raw for p in profiles], dtype=float)
    else:
        x = np.asarray(profiles, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(arms) != x.shape[0]:
        raise ConfigError("assignments and profiles must have equal length")
    if x.shape[1] != len(model.beta):
        raise ConfigError("profile width does not match beta")
    t = (arms == 1).astype(float)
    mean = model.mu1 * t + model.mu2 * (1.0 - t) + x @ np.asarray(model.beta, dtype=float)
    y = mean + model.sigma_eps * rng.standard_normal(len(arms))
    return TrialData.from_arrays(arms, x, y)


@dataclass(frozen=True)
class OLSFit:
    gamma_hat: np.ndarray
    sigma_hat_sq: float
    xtx: np.ndarray
    nu: int


def ols_fit(data: TrialData) -> OLSFit:
    x, y = data.design, data.y
    xtx = x.T @ x
    if not np.isfinite(xtx).all() or np.linalg.cond(xtx) > _COND_LIMIT:
        raise DegenerateDesignError("singular design (arm empty or collinear covariates)")
    gamma = np.linalg.solve(xtx, x.T @ y)
    resid = y - x @ gamma
    sigma_sq = float(resid @ resid) / data.nu
    return OLSFit(gamma_hat=gamma, sigma_hat_sq=sigma_sq, xtx=xtx, nu=data.nu)


def t_statistic(data: TrialData, fit: OLSFit) -> float:
    ell = np.zeros(data.design.shape[1])
    ell[0], ell[1] = 1.0, -1.0
    lml = float(ell @ np.linalg.solve(fit.xtx, ell))
    if lml <= 0:
        raise NumericalError("nonpositive contrast variance")
    if not fit.sigma_hat_sq > 0:
        raise NumericalError("nonpositive residual variance estimate")
    return float((fit.gamma_hat[0] - fit.gamma_hat[1]) / math.sqrt(fit.sigma_hat_sq * lml))


# ---------------------------------------------------------------------------
# distribution functions
# ---------------------------------------------------------------------------


def noncentral_t_cdf(t: float, nu: float, delta: float) -> float:
    """F(t; nu, delta) by adaptive quadrature of the chi-square mixture
    F = E[Phi(t sqrt(W/nu) - delta)], W ~ chi2(nu). Abs tol 1e-10."""
    if nu < 1:
        raise ConfigError("nu must be >= 1")

    def integrand(u):
        return special.ndtr(t * math.sqrt(u) - delta) * nu * stats.chi2.pdf(u * nu, nu)

    lo, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=_QUAD_ABS_TOL / 2, limit=200)
    hi, _ = integrate.quad(integrand, 1.0, np.inf, epsabs=_QUAD_ABS_TOL / 2, limit=200)
    return float(min(1.0, max(0.0, lo + hi)))


def noncentral_f_cdf(x: float, m: float, nu: float, delta: float) -> float:
    """Noncentral F CDF via the Poisson mixture of incomplete beta ratios,
    truncated once the remaining Poisson weight drops below 1e-12."""
    if m < 1 or nu < 1:
        raise ConfigError("m and nu must be >= 1")
    if delta < 0:
        raise ConfigError("delta must be >= 0")
    if x <= 0:
        return 0.0
    z = m * x / (m * x + nu)
    half = delta / 2.0
    log_w = -half  # log Poisson weight at j=0
    total, weight_sum = 0.0, 0.0
    j = 0
    while weight_sum < 1.0 - _POISSON_TAIL:
        w = math.exp(log_w)
        total += w * special.betainc(m / 2.0 + j, nu / 2.0, z)
        weight_sum += w
        j += 1
        log_w += math.log(half) - math.log(j) if half > 0 else -math.inf
        if j > 100000:
            raise NumericalError("noncentral F series failed to converge")
    return float(min(1.0, max(0.0, total)))


@lru_cache(maxsize=256)
def t_quantile(q: float, nu: int) -> float:
    """Central t quantile by bisection on the CDF, |t| tolerance 1e-10."""
    if not 0.0 < q < 1.0:
        raise ConfigError("quantile level must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_quantile(1.0 - q, nu)
    lo, hi = 0.0, 2.0
    while noncentral_t_cdf(hi, nu, 0.0) < q:
        hi *= 2.0
        if hi > 1e8:
            raise NumericalError("t quantile bracket failed")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if noncentral_t_cdf(mid, nu, 0.0) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_NODE_CACHE: dict[float, tuple[np.ndarray, np.ndarray]] = {}


def log_noncentral_t_cdf(t: float, nu: float, delta) -> np.ndarray:
    """log F(t; nu, delta), vectorized over delta.

    Fixed Gauss-Legendre grid on the chi-square mixture in log space, so
    ratios of far-tail probabilities (tiny F at large delta) stay accurate.
    Intended for moderate-to-large nu; the scalar quadrature above is the
    reference for small nu.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    cached = _NODE_CACHE.get(nu)
    if cached is None:
        half_width = 10.0 * math.sqrt(2.0 / nu)
        lo, hi = max(1.0 - half_width, 1e-12), 1.0 + half_width
        x, w = np.polynomial.legendre.leggauss(400)
        u = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        log_w = (np.log(w * 0.5 * (hi - lo))
                 + stats.chi2.logpdf(u * nu, nu) + math.log(nu))
        cached = (u, log_w)
        _NODE_CACHE[nu] = cached
    u, log_w = cached
    terms = log_w[None, :] + special.log_ndtr(t * np.sqrt(u)[None, :] - delta[:, None])
    return special.logsumexp(terms, axis=1)


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def ell_n_from_state(state: ImbalanceState, s_xx: np.ndarray) -> float:
    """ell_n from the closed form in terms of D_n, D_n^x and S_xx."""
    n = state.n
    s_xx = np.asarray(s_xx, dtype=float)
    if not np.isfinite(s_xx).all() or np.linalg.cond(s_xx) > _COND_LIMIT:
        raise DegenerateDesignError("singular pooled covariate cross-products")
    a = (state.d_overall / n) ** 2
    x_bar = state.sum_x / n
    b = (state.d_x - x_bar * state.d_overall) / math.sqrt(n)
    q_sq = float(b @ np.linalg.solve(s_xx / n, b))
    if a >= 1.0:
        return 0.0
    return math.sqrt(n * (1.0 - a) ** 2 / (1.0 - a + q_sq / n))


def ell_n_from_trial(data: TrialData) -> float:
    """ell_n = 2 / sqrt(L (X'X)^{-1} L'), straight from the design matrix."""
    xtx = data.design.T @ data.design
    if np.linalg.cond(xtx) > _COND_LIMIT:
        raise DegenerateDesignError("singular design")
    ell = np.zeros(data.design.shape[1])
    ell[0], ell[1] = 1.0, -1.0
    lml = float(ell @ np.linalg.solve(xtx, ell))
    return 2.0 / math.sqrt(lml)


def _log_nonrejection(test: TestSpec, nu: int, delta: float) -> float:
    """log P(test does not reject) at noncentrality delta."""
    if test.family == "z":
        if test.sides == "one":
            z_star = special.ndtri(1.0 - test.alpha)
            return float(special.log_ndtr(z_star - delta))
        z_star = special.ndtri(1.0 - test.alpha / 2.0)
        log_up = float(special.log_ndtr(z_star - delta))
        log_lo = float(special.log_ndtr(-z_star - delta))
        return log_up + math.log1p(-math.exp(log_lo - log_up))
    if test.sides == "one":
        t_star = t_quantile(1.0 - test.alpha, nu)
        return float(log_noncentral_t_cdf(t_star, nu, delta)[0])
    t_star = t_quantile(1.0 - test.alpha / 2.0, nu)
    log_up = float(log_noncentral_t_cdf(t_star, nu, delta)[0])
    log_lo = float(log_noncentral_t_cdf(-t_star, nu, delta)[0])
    return log_up + math.log1p(-math.exp(min(log_lo - log_up, -1e-17)))


@dataclass(frozen=True)
class PowerResult:
    ell_n: float
    power: float


def _check_power_inputs(test: TestSpec, state: ImbalanceState) -> int:
    n_cov = len(state.d_x)
    nu = state.n - n_cov - 2
    if nu < 1:
        raise DegenerateDesignError("need n > I + 2")
    return nu


def conditional_power(model: ResponseModel, test: TestSpec,
                      state: ImbalanceState, s_xx: np.ndarray) -> PowerResult:
    """Power of the treatment-effect test given the realized design."""
    nu = _check_power_inputs(test, state)
    ell = ell_n_from_state(state, s_xx)
    delta = model.mu / (2.0 * model.sigma_eps) * ell
    if test.family == "t" and test.sides == "one":
        t_star = t_quantile(1.0 - test.alpha, nu)
        power = 1.0 - noncentral_t_cdf(t_star, nu, delta)
    else:
        power = 1.0 - math.exp(_log_nonrejection(test, nu, delta))
    return PowerResult(ell_n=ell, power=float(min(1.0, max(0.0, power))))


def loss_of_power_ratio(model: ResponseModel, test: TestSpec,
                        state: ImbalanceState, s_xx: np.ndarray) -> float:
    """(1 - power at perfect balance) / (1 - power at this design), in (0, 1].

    Both non-rejection probabilities can be astronomically small at large
    mu sqrt(n) / sigma, so the ratio is formed in log space.
    """
    nu = _check_power_inputs(test, state)
    ell = ell_n_from_state(state, s_xx)
    scale = model.mu / (2.0 * model.sigma_eps)
    log_best = _log_nonrejection(test, nu, scale * math.sqrt(state.n))
    log_here = _log_nonrejection(test, nu, scale * ell)
    return float(math.exp(log_best - log_here))
