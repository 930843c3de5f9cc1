"""Independent reference implementations used to pin test values.

Everything here is written from first principles (mpmath quadrature and
series, pure-Python Gaussian elimination, explicit path enumeration with
hand-coded assignment rules, detailed-balance stationary laws) so the
package under test is never checked against its own machinery.
"""

import itertools
import math

import mpmath

mpmath.mp.dps = 30


# ---------------------------------------------------------------------------
# distribution functions at 30 digits
# ---------------------------------------------------------------------------


def nct_cdf_mp(t, nu, delta):
    """Noncentral t CDF via the chi-square mixture representation."""
    t, nu, delta = mpmath.mpf(t), mpmath.mpf(nu), mpmath.mpf(delta)

    def integrand(w):
        log_pdf = ((nu / 2 - 1) * mpmath.log(w) - w / 2
                   - (nu / 2) * mpmath.log(2) - mpmath.loggamma(nu / 2))
        return mpmath.exp(log_pdf) * mpmath.ncdf(t * mpmath.sqrt(w / nu) - delta)

    return float(mpmath.quad(integrand, [0, nu, mpmath.inf]))


def ncf_cdf_mp(x, m, nu, delta, tail=mpmath.mpf("1e-25")):
    """Noncentral F CDF via the Poisson-weighted incomplete-beta series."""
    x, m, nu = mpmath.mpf(x), mpmath.mpf(m), mpmath.mpf(nu)
    delta = mpmath.mpf(delta)
    if x <= 0:
        return 0.0
    z = m * x / (m * x + nu)
    half = delta / 2
    total = mpmath.mpf(0)
    weight_sum = mpmath.mpf(0)
    j = 0
    while weight_sum < 1 - tail:
        log_w = -half + j * mpmath.log(half) - mpmath.loggamma(j + 1) if half > 0 \
            else (mpmath.mpf(0) if j == 0 else mpmath.mpf("-inf"))
        w = mpmath.exp(log_w)
        weight_sum += w
        total += w * mpmath.betainc(m / 2 + j, nu / 2, 0, z, regularized=True)
        j += 1
        if j > 5000:
            raise RuntimeError("oracle series did not converge")
    return float(total)


def t_cdf_mp(t, nu):
    return nct_cdf_mp(t, nu, 0.0)


# ---------------------------------------------------------------------------
# dense linear algebra without numpy
# ---------------------------------------------------------------------------


def solve_dense(a, b):
    """Gaussian elimination with partial pivoting on pure-Python lists."""
    n = len(a)
    m = [row[:] + [bv] for row, bv in zip(a, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if abs(m[piv][col]) < 1e-300:
            raise ZeroDivisionError("singular system")
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r == col:
                continue
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    return [m[r][n] / m[r][r] for r in range(n)]


def ols_textbook(design, y):
    """(gamma_hat, sigma_hat_sq, lml) for contrast (1,-1,0,...) via the
    normal equations, solved by elimination."""
    n, k = len(design), len(design[0])
    xtx = [[sum(design[i][r] * design[i][c] for i in range(n)) for c in range(k)]
           for r in range(k)]
    xty = [sum(design[i][r] * y[i] for i in range(n)) for r in range(k)]
    gamma = solve_dense(xtx, xty)
    rss = sum((y[i] - sum(design[i][c] * gamma[c] for c in range(k))) ** 2
              for i in range(n))
    nu = n - k
    contrast = [1.0, -1.0] + [0.0] * (k - 2)
    z = solve_dense(xtx, contrast)
    return gamma, rss / nu, z[0] - z[1]


# ---------------------------------------------------------------------------
# covariate moments by quadrature
# ---------------------------------------------------------------------------


def uniform_moments_mp(lo, hi, cuts):
    """(sigma_x_sq, conditional means, sigma_delta_sq) for uniform(lo, hi)
    recentered to mean zero, discretized at cuts."""
    lo, hi = mpmath.mpf(lo), mpmath.mpf(hi)
    mid = (lo + hi) / 2
    lo, hi = lo - mid, hi - mid
    cuts = [mpmath.mpf(c) - mid for c in cuts]
    width = hi - lo
    edges = [lo] + [max(lo, min(hi, c)) for c in cuts] + [hi]
    sigma_x = width ** 2 / 12
    cond, probs = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        p = (b - a) / width
        probs.append(p)
        cond.append((a + b) / 2 if p > 0 else mpmath.mpf(0))
    var_between = sum(p * c ** 2 for p, c in zip(probs, cond))
    return float(sigma_x), [float(c) for c in cond], float(sigma_x - var_between)


def normal_moments_mp(sd, cuts):
    """Same for normal(0, sd) (already centered)."""
    sd = mpmath.mpf(sd)
    cuts = [mpmath.mpf(c) for c in cuts]
    edges = [mpmath.mpf("-inf")] + cuts + [mpmath.mpf("inf")]
    pdf = lambda x: mpmath.npdf(x, 0, sd)
    cond, probs = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        p = mpmath.ncdf(b, 0, sd) - mpmath.ncdf(a, 0, sd)
        mean = mpmath.quad(lambda x: x * pdf(x), [a, b]) / p
        probs.append(p)
        cond.append(mean)
    var_between = sum(p * c ** 2 for p, c in zip(probs, cond))
    return float(sd ** 2), [float(c) for c in cond], float(sd ** 2 - var_between)


# ---------------------------------------------------------------------------
# exact path enumeration with hand-coded rules
# ---------------------------------------------------------------------------
# A rule maps (history, level) -> probability of arm 1 for the next patient,
# where history is a tuple of (level, arm) pairs. Rules recompute whatever
# counters they need from the raw history each call, so they share nothing
# with the package's incremental state.


def _d_overall(history):
    return sum(1 if arm == 1 else -1 for _lev, arm in history)


def _d_margin(history, level):
    return sum((1 if arm == 1 else -1) for lev, arm in history if lev == level)


def rule_complete(history, level):
    return 0.5


def rule_efron(p):
    def rule(history, level):
        d = _d_overall(history)
        return p if d < 0 else (1.0 - p if d > 0 else 0.5)
    return rule


def rule_pocock_simon(p):
    # one covariate: the weighted margin sum is just that margin's difference
    def rule(history, level):
        d = _d_margin(history, level)
        return p if d < 0 else (1.0 - p if d > 0 else 0.5)
    return rule


def rule_family_linear(gamma):
    # w_m = (1,) on one covariate; first patient is a forced fair coin
    def rule(history, level):
        m = len(history)
        if m == 0:
            return 0.5
        lam = _d_margin(history, level)
        y = 4.0 * lam / m ** gamma
        return min(1.0, max(0.0, (1.0 - y) / 2.0))
    return rule


def brute_force_paths(rule, level_probs, n):
    """Exact joint law by walking every (level, arm) sequence.

    Returns (d_dist, e_m_overall, e_m_margin, sb_n): the law of the final
    overall difference, E[D_n^2], E[sum of squared margin differences], and
    the exact selection bias 1/2 + (1/n) sum_m E|p_m - 1/2|.
    """
    d_dist = {}
    e_d_sq = 0.0
    e_margin_sq = 0.0
    sb_sum = 0.0

    def walk(history, prob, abs_dev):
        nonlocal e_d_sq, e_margin_sq, sb_sum
        if len(history) == n:
            d = _d_overall(history)
            d_dist[d] = d_dist.get(d, 0.0) + prob
            e_d_sq += prob * d * d
            e_margin_sq += prob * sum(
                _d_margin(history, lev) ** 2 for lev in range(len(level_probs)))
            sb_sum += prob * abs_dev
            return
        for level, lp in enumerate(level_probs):
            p_m = rule(history, level)
            dev = abs(p_m - 0.5)
            for arm, pa in ((1, p_m), (2, 1.0 - p_m)):
                if pa <= 0.0:
                    continue
                walk(history + ((level, arm),), prob * lp * pa, abs_dev + dev)

    walk((), 1.0, 0.0)
    return d_dist, e_d_sq, e_margin_sq, 0.5 + sb_sum / n


# ---------------------------------------------------------------------------
# stationary laws by detailed balance
# ---------------------------------------------------------------------------


def birth_death_stationary(up_prob, radius):
    """Stationary law of a birth-death chain on [-radius, radius] from the
    detailed-balance recursion; up_prob(d) is the probability of d -> d+1."""
    weights = {0: 1.0}
    for d in range(radius):
        weights[d + 1] = weights[d] * up_prob(d) / (1.0 - up_prob(d + 1))
    for d in range(0, -radius, -1):
        weights[d - 1] = weights[d] * (1.0 - up_prob(d)) / up_prob(d - 1)
    total = sum(weights.values())
    return {d: w / total for d, w in weights.items()}


def efron_sb_limit_exact(p):
    """Closed-form limit of the selection bias for the overall-difference
    coin: (p - 1/2) * P_pi(D != 0) + 1/2 with pi from detailed balance."""
    pi = birth_death_stationary(
        lambda d: p if d < 0 else (1.0 - p if d > 0 else 0.5), 400)
    return 0.5 + (p - 0.5) * (1.0 - pi[0])
