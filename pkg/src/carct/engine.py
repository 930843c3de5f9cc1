"""Vectorized replication engine.

All replications of one (procedure, n) cell advance patient by patient in
lockstep across a chunk of B replications, so every per-step quantity is a
length-B numpy operation. Randomness is counter-based: replication r, patient
m, draw purpose k maps to a fixed 64-bit counter whose hash is the draw.
That makes every replication a pure function of (master_seed, procedure
index, n, r) regardless of chunking or worker scheduling, and lets
run_trial reproduce any single replication exactly.

Per patient the draw slots are: I covariate uniforms, the assignment
uniform, the guess tie-break uniform, and the response-noise uniform
(reserved even when unused, so seeds stay stable across metric choices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .covariates import CovariateSpec, stratum_dims
from .errors import ConfigError
from .imbalance import WeightConfig
from .inference import ResponseModel, TestSpec, log_noncentral_t_cdf, t_quantile
from .procedures import ProcedureConfig, _BASES, _step

_COND_LIMIT = 1e12
_CHUNK = 8192
_U_EPS = 2.0 ** -53

_MASK = (1 << 64) - 1
_GAMMA_INT = 0x9E3779B97F4A7C15
_GAMMA = np.uint64(_GAMMA_INT)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _finalize(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output mix over a uint64 array (wraps mod 2^64)."""
    z = np.array(z, dtype=np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def _finalize_int(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def hash_coordinates(*values) -> int:
    """Order-sensitive 64-bit hash of integer coordinates."""
    h = 0
    for v in values:
        h = _finalize_int(h + _finalize_int((int(v) + _GAMMA_INT) & _MASK))
    return h


def replication_keys(master_seed: int, proc_index: int, n: int,
                     rep_lo: int, rep_hi: int) -> np.ndarray:
    base = np.uint64(hash_coordinates(master_seed, proc_index, n))
    reps = np.arange(rep_lo, rep_hi, dtype=np.uint64)
    return _finalize(base + (reps + np.uint64(1)) * _GAMMA)


def _uniforms(keys: np.ndarray, slot: int) -> np.ndarray:
    """Slot'th uniform in [0, 1) of each replication's stream."""
    offset = np.uint64(((slot + 1) * _GAMMA_INT) & _MASK)
    return (_finalize(keys + offset) >> np.uint64(11)) * _U_EPS


# ---------------------------------------------------------------------------
# cell configuration and outputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellConfig:
    """One (procedure, n) cell of an experiment."""

    procedure: ProcedureConfig
    proc_index: int
    covariates: tuple[CovariateSpec, ...]
    model: ResponseModel
    test: TestSpec
    n: int
    snapshot_points: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.covariates:
            raise ConfigError("at least one covariate is required")
        if self.n < len(self.covariates) + 3:
            raise ConfigError("n must exceed I + 2")
        for s in self.snapshot_points:
            if not 1 <= s <= self.n:
                raise ConfigError("snapshot points must lie in [1, n]")


@dataclass
class ChunkResult:
    """Per-replication end-of-trial arrays for one chunk."""

    n_reps: int
    degenerate: np.ndarray
    rejected: np.ndarray
    t_stat: np.ndarray
    loss_p: np.ndarray
    power: np.ndarray
    v_n: np.ndarray
    m_n: np.ndarray
    abs_d: np.ndarray
    d_final: np.ndarray
    max_margin_d: np.ndarray
    sb_abs: np.ndarray
    correct: np.ndarray
    snapshots: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)


def _p_m_vector(proc: ProcedureConfig, m: int, d_overall, lam, urn1, urn2,
                rows, strat, half: int):
    """Assignment probabilities for patient m across the chunk."""
    if proc.kind == "complete":
        return np.full(d_overall.shape, 0.5)
    if proc.kind == "efron":
        return _step(proc.p, d_overall)
    if proc.kind == "wei":
        if m == 1:
            return np.full(d_overall.shape, 0.5)
        return _BASES[proc.base](d_overall / (m - 1))
    if proc.kind == "permuted_block":
        a1 = urn1[rows, strat]
        a2 = urn2[rows, strat]
        empty = (a1 == 0) & (a2 == 0)
        a1 = np.where(empty, half, a1)
        a2 = np.where(empty, half, a2)
        return a1 / (a1 + a2)
    if proc.kind in ("pocock_simon", "hu_hu"):
        return _step(proc.p, lam)
    if m == 1:
        return np.full(d_overall.shape, 0.5)
    return np.asarray(proc.alloc.evaluate(4.0 * lam, m), dtype=float)


def simulate_chunk(cell: CellConfig, keys: np.ndarray) -> ChunkResult:
    """Run one chunk of replications to completion."""
    B = len(keys)
    specs = cell.covariates
    n, n_cov = cell.n, len(specs)
    dims = stratum_dims(list(specs))
    n_strata = math.prod(dims)
    proc = cell.procedure
    weights = proc.unified_weights(n_cov)
    w_m = np.asarray(weights.w_m, dtype=float)
    beta = np.asarray(cell.model.beta, dtype=float)
    if len(beta) != n_cov:
        raise ConfigError("model.beta width must match the covariate list")
    blocked = proc.kind == "permuted_block"
    half = proc.block_size // 2 if blocked else 0
    snap_set = set(cell.snapshot_points)

    rows = np.arange(B)
    cov_idx = np.arange(n_cov)
    d_overall = np.zeros(B, dtype=np.int64)
    d_margin = np.zeros((B, n_cov, max(dims)), dtype=np.int64)
    d_stratum = np.zeros((B, n_strata), dtype=np.int64)
    d_x = np.zeros((B, n_cov))
    n1 = np.zeros(B, dtype=np.int64)
    m_run = np.zeros(B)
    sb_abs = np.zeros(B)
    correct = np.zeros(B, dtype=np.int64)
    urn1 = np.full((B, n_strata), half, dtype=np.int64) if blocked else None
    urn2 = np.full((B, n_strata), half, dtype=np.int64) if blocked else None

    s1y = np.zeros(B)
    sy = np.zeros(B)
    syy = np.zeros(B)
    s1x = np.zeros((B, n_cov))
    sx = np.zeros((B, n_cov))
    sxy = np.zeros((B, n_cov))
    sxx = np.zeros((B, n_cov, n_cov))

    snapshots: dict[int, dict[str, np.ndarray]] = {}
    slots = n_cov + 3

    for m in range(1, n + 1):
        base = (m - 1) * slots
        raw = np.empty((B, n_cov))
        levels = np.empty((B, n_cov), dtype=np.int64)
        for j, spec in enumerate(specs):
            x = np.asarray(spec.sample_raw(_uniforms(keys, base + j)), dtype=float)
            raw[:, j] = x
            levels[:, j] = np.asarray(spec.level_of(x), dtype=np.int64) + 1
        strat = np.zeros(B, dtype=np.int64)
        for j, mj in enumerate(dims):
            strat = strat * mj + (levels[:, j] - 1)

        lam = weights.w_o * d_overall.astype(float)
        if n_cov:
            gathered = d_margin[rows[:, None], cov_idx[None, :], levels - 1]
            lam = lam + gathered.astype(float) @ w_m
        lam = lam + weights.w_s * d_stratum[rows, strat].astype(float)

        p = _p_m_vector(proc, m, d_overall, lam, urn1, urn2, rows, strat, half)
        arm1 = _uniforms(keys, base + n_cov) < p
        b = np.where(arm1, 1, -1).astype(np.int64)

        u_guess = _uniforms(keys, base + n_cov + 1)
        guess1 = np.where(p > 0.5, True, np.where(p < 0.5, False, u_guess < 0.5))
        correct += guess1 == arm1
        sb_abs += np.abs(p - 0.5)

        m_run += 2.0 * b * lam + 1.0

        d_overall += b
        n1 += arm1
        d_margin[rows[:, None], cov_idx[None, :], levels - 1] += b[:, None]
        d_stratum[rows, strat] += b
        d_x += b[:, None] * raw
        if blocked:
            a1 = urn1[rows, strat]
            a2 = urn2[rows, strat]
            empty = (a1 == 0) & (a2 == 0)
            a1 = np.where(empty, half, a1) - arm1
            a2 = np.where(empty, half, a2) - (~arm1)
            urn1[rows, strat] = a1
            urn2[rows, strat] = a2

        u_noise = np.clip(_uniforms(keys, base + n_cov + 2), _U_EPS, 1.0 - _U_EPS)
        eps = special.ndtri(u_noise)
        y = (cell.model.mu1 * arm1 + cell.model.mu2 * (~arm1)
             + raw @ beta + cell.model.sigma_eps * eps)
        sy += y
        syy += y * y
        s1y += np.where(arm1, y, 0.0)
        sx += raw
        s1x += np.where(arm1[:, None], raw, 0.0)
        sxy += raw * y[:, None]
        sxx += raw[:, :, None] * raw[:, None, :]

        if m in snap_set:
            snapshots[m] = {
                "m_n": m_run.copy(),
                "abs_d": np.abs(d_overall).astype(float),
                "sb_rb": 0.5 + sb_abs / m,
            }

    return _finish_chunk(cell, B, n1, d_overall, d_margin, d_x, sx, m_run,
                         sb_abs, correct, s1y, sy, syy, s1x, sxy, sxx, snapshots)


def _log_nonreject_vec(test: TestSpec, nu: int, delta: np.ndarray) -> np.ndarray:
    if test.family == "z":
        if test.sides == "one":
            z_star = special.ndtri(1.0 - test.alpha)
            return special.log_ndtr(z_star - delta)
        z_star = special.ndtri(1.0 - test.alpha / 2.0)
        log_up = special.log_ndtr(z_star - delta)
        log_lo = special.log_ndtr(-z_star - delta)
        return log_up + np.log1p(-np.exp(np.minimum(log_lo - log_up, -1e-17)))
    if test.sides == "one":
        t_star = t_quantile(1.0 - test.alpha, nu)
        return log_noncentral_t_cdf(t_star, nu, delta)
    t_star = t_quantile(1.0 - test.alpha / 2.0, nu)
    log_up = log_noncentral_t_cdf(t_star, nu, delta)
    log_lo = log_noncentral_t_cdf(-t_star, nu, delta)
    return log_up + np.log1p(-np.exp(np.minimum(log_lo - log_up, -1e-17)))


def _finish_chunk(cell, B, n1, d_overall, d_margin, d_x, sx, m_run, sb_abs,
                  correct, s1y, sy, syy, s1x, sxy, sxx, snapshots) -> ChunkResult:
    """End-of-trial test statistics and power quantities, batched."""
    n, n_cov = cell.n, len(cell.covariates)
    nu = n - n_cov - 2
    model, test = cell.model, cell.test
    k = n_cov + 2
    eye = np.eye(k)

    n1f = n1.astype(float)
    n2f = n - n1f
    deg = (n1 == 0) | (n1 == n)

    s2x = sx - s1x
    s2y = sy - s1y
    xtx = np.zeros((B, k, k))
    xtx[:, 0, 0] = n1f
    xtx[:, 1, 1] = n2f
    xtx[:, 0, 2:] = s1x
    xtx[:, 2:, 0] = s1x
    xtx[:, 1, 2:] = s2x
    xtx[:, 2:, 1] = s2x
    xtx[:, 2:, 2:] = sxx
    xty = np.concatenate([s1y[:, None], s2y[:, None], sxy], axis=1)

    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.linalg.cond(xtx)
    deg |= ~np.isfinite(cond) | (cond > _COND_LIMIT)
    xtx_safe = np.where(deg[:, None, None], eye[None], xtx)

    gamma = np.linalg.solve(xtx_safe, xty[:, :, None])[:, :, 0]
    rss = syy - np.einsum("bk,bk->b", gamma, xty)
    sigma_sq = rss / nu
    deg |= ~(sigma_sq > 0)
    sigma_sq = np.where(deg, 1.0, sigma_sq)

    contrast = np.zeros(k)
    contrast[0], contrast[1] = 1.0, -1.0
    z = np.linalg.solve(xtx_safe, np.broadcast_to(contrast, (B, k))[:, :, None])[:, :, 0]
    lml = z[:, 0] - z[:, 1]
    deg |= ~(lml > 0)
    t_stat = (gamma[:, 0] - gamma[:, 1]) / np.sqrt(sigma_sq * np.where(lml > 0, lml, 1.0))
    t_stat = np.where(deg, 0.0, t_stat)

    if test.family == "t":
        crit = t_quantile(1.0 - test.alpha / (2.0 if test.sides == "two" else 1.0), nu)
    else:
        crit = float(special.ndtri(1.0 - test.alpha / (2.0 if test.sides == "two" else 1.0)))
    rejected = (np.abs(t_stat) > crit) if test.sides == "two" else (t_stat > crit)
    rejected &= ~deg

    # pooled within-arm covariate cross-products for the power scalar
    n1_safe = np.where(n1f > 0, n1f, 1.0)
    n2_safe = np.where(n2f > 0, n2f, 1.0)
    s_pool = (sxx
              - s1x[:, :, None] * s1x[:, None, :] / n1_safe[:, None, None]
              - s2x[:, :, None] * s2x[:, None, :] / n2_safe[:, None, None])
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_p = np.linalg.cond(s_pool)
    deg_power = deg | ~np.isfinite(cond_p) | (cond_p > _COND_LIMIT)
    s_pool_safe = np.where(deg_power[:, None, None], np.eye(n_cov)[None], s_pool)

    d_f = d_overall.astype(float)
    x_bar = sx / n
    b_vec = (d_x - x_bar * d_f[:, None]) / math.sqrt(n)
    q_sq = n * np.einsum("bi,bi->b", b_vec,
                         np.linalg.solve(s_pool_safe, b_vec[:, :, None])[:, :, 0])
    a = (d_f / n) ** 2
    denom = 1.0 - a + q_sq / n
    denom_safe = np.where(denom > 0, denom, 1.0)
    ell_sq = np.where(denom > 0, n * (1.0 - a) ** 2 / denom_safe, 0.0)
    ell = np.sqrt(np.where(ell_sq > 0, ell_sq, 0.0))

    scale = model.mu / (2.0 * model.sigma_eps)
    delta = np.where(deg_power, 0.0, scale * ell)
    log_nr = _log_nonreject_vec(test, nu, delta)
    log_nr_best = _log_nonreject_vec(test, nu, np.array([scale * math.sqrt(n)]))[0]
    loss_p = np.where(deg_power, np.nan, np.exp(log_nr_best - log_nr))
    power = np.where(deg_power, np.nan, 1.0 - np.exp(log_nr))

    sigmas = np.array([s.sigma_x_sq for s in cell.covariates])
    v_n = d_f ** 2 / n + np.sum(d_x ** 2 / n / sigmas[None, :], axis=1)

    return ChunkResult(
        n_reps=B,
        degenerate=deg_power,
        rejected=rejected,
        t_stat=t_stat,
        loss_p=loss_p,
        power=power,
        v_n=v_n,
        m_n=m_run.copy(),
        abs_d=np.abs(d_f),
        d_final=d_overall.copy(),
        max_margin_d=np.abs(d_margin).max(axis=(1, 2)).astype(float),
        sb_abs=sb_abs.copy(),
        correct=correct.copy(),
        snapshots=snapshots,
    )
