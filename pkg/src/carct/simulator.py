"""Experiment orchestration over (procedure, n) cells.

Each cell runs `replications` independent trials through the vectorized
engine in fixed-size chunks. Replication r of cell (procedure index p, n)
is seeded by hash(master_seed, p, n, r), so results are identical for any
chunking and any worker count; summaries are merged in a fixed task order.
"""

from __future__ import annotations

import math
import multiprocessing
import warnings
from dataclasses import dataclass, field

import numpy as np

from .covariates import CovariateSpec
from .engine import _CHUNK, CellConfig, ChunkResult, replication_keys, simulate_chunk
from .errors import ConfigError
from .inference import ResponseModel, TestSpec
from .procedures import ProcedureConfig
from .selection_bias import GuessTally, SBEstimate, sb_estimate

_METRICS = ("loss_p", "power", "v_n", "m_n", "abs_d", "max_margin_d", "sb_rb", "sb_raw")
_SNAPSHOT_METRICS = ("m_n", "abs_d", "sb_rb")


@dataclass(frozen=True)
class ExperimentConfig:
    covariates: tuple[CovariateSpec, ...]
    model: ResponseModel
    test: TestSpec
    procedures: tuple[ProcedureConfig, ...]
    n_grid: tuple[int, ...]
    replications: int
    master_seed: int
    snapshot_points: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.covariates:
            raise ConfigError("at least one covariate is required")
        if not self.procedures:
            raise ConfigError("at least one procedure is required")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid must be nonempty and strictly ascending")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        for s in self.snapshot_points:
            if not 1 <= s <= max(self.n_grid):
                raise ConfigError("snapshot points must lie in [1, max n]")
        # the unified weight view must be well formed for every procedure
        for proc in self.procedures:
            proc.unified_weights(len(self.covariates))


class RunningStat:
    """Count/sum/sum-of-squares accumulator; NaN entries are skipped."""

    __slots__ = ("count", "total", "total_sq")

    def __init__(self, count: int = 0, total: float = 0.0, total_sq: float = 0.0):
        self.count = count
        self.total = total
        self.total_sq = total_sq

    def add(self, values: np.ndarray) -> None:
        good = values[np.isfinite(values)]
        self.count += good.size
        self.total += float(good.sum())
        self.total_sq += float((good * good).sum())

    def merge(self, other: "RunningStat") -> "RunningStat":
        return RunningStat(self.count + other.count, self.total + other.total,
                           self.total_sq + other.total_sq)

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else math.nan

    @property
    def variance(self) -> float:
        if self.count < 2:
            return math.nan
        v = (self.total_sq - self.total ** 2 / self.count) / (self.count - 1)
        return max(v, 0.0)

    @property
    def se(self) -> float:
        if self.count < 2:
            return math.nan
        return math.sqrt(self.variance / self.count)


@dataclass
class CellAccumulator:
    """Mergeable per-cell totals; merging is order-insensitive for all
    count and sum fields."""

    proc_index: int
    n: int
    n_reps: int = 0
    n_degenerate: int = 0
    rejections: int = 0
    stats: dict = field(default_factory=lambda: {m: RunningStat() for m in _METRICS})
    tally: GuessTally = field(default_factory=GuessTally)
    d_counts: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    def absorb(self, chunk: ChunkResult) -> None:
        self.n_reps += chunk.n_reps
        self.n_degenerate += int(chunk.degenerate.sum())
        self.rejections += int(chunk.rejected.sum())
        per_rep = {
            "loss_p": chunk.loss_p,
            "power": chunk.power,
            "v_n": chunk.v_n,
            "m_n": chunk.m_n,
            "abs_d": chunk.abs_d,
            "max_margin_d": chunk.max_margin_d,
            "sb_rb": 0.5 + chunk.sb_abs / self.n,
            "sb_raw": chunk.correct / self.n,
        }
        for name, values in per_rep.items():
            self.stats[name].add(np.asarray(values, dtype=float))
        self.tally.n += chunk.n_reps * self.n
        self.tally.correct += int(chunk.correct.sum())
        self.tally.sum_abs_pm_half += float(chunk.sb_abs.sum())
        values, counts = np.unique(chunk.d_final, return_counts=True)
        for d, c in zip(values, counts):
            self.d_counts[int(d)] = self.d_counts.get(int(d), 0) + int(c)
        for m, values in chunk.snapshots.items():
            snap = self.snapshots.setdefault(
                m, {name: RunningStat() for name in _SNAPSHOT_METRICS})
            for name in _SNAPSHOT_METRICS:
                snap[name].add(np.asarray(values[name], dtype=float))

    def merge(self, other: "CellAccumulator") -> "CellAccumulator":
        if (self.proc_index, self.n) != (other.proc_index, other.n):
            raise ConfigError("cannot merge accumulators from different cells")
        out = CellAccumulator(self.proc_index, self.n)
        out.n_reps = self.n_reps + other.n_reps
        out.n_degenerate = self.n_degenerate + other.n_degenerate
        out.rejections = self.rejections + other.rejections
        out.stats = {m: self.stats[m].merge(other.stats[m]) for m in _METRICS}
        out.tally = self.tally.merge(other.tally)
        for src in (self.d_counts, other.d_counts):
            for d, c in src.items():
                out.d_counts[d] = out.d_counts.get(d, 0) + c
        points = set(self.snapshots) | set(other.snapshots)
        for p in points:
            a = self.snapshots.get(p, {m: RunningStat() for m in _SNAPSHOT_METRICS})
            b = other.snapshots.get(p, {m: RunningStat() for m in _SNAPSHOT_METRICS})
            out.snapshots[p] = {m: a[m].merge(b[m]) for m in _SNAPSHOT_METRICS}
        return out


@dataclass(frozen=True)
class MetricStat:
    mean: float
    variance: float
    se: float
    count: int

    @staticmethod
    def of(stat: RunningStat) -> "MetricStat":
        return MetricStat(stat.mean, stat.variance, stat.se, stat.count)


@dataclass(frozen=True)
class CellStats:
    procedure: str
    proc_index: int
    n: int
    replications: int
    degenerate: int
    rejection_rate: float
    metrics: dict[str, MetricStat]
    sb: SBEstimate
    d_counts: dict[int, int]
    snapshots: dict[int, dict[str, MetricStat]]


@dataclass(frozen=True)
class ExperimentSummary:
    config: ExperimentConfig
    cells: tuple[CellStats, ...]

    def cell(self, procedure_label: str, n: int) -> CellStats:
        for c in self.cells:
            if c.procedure == procedure_label and c.n == n:
                return c
        raise KeyError(f"no cell ({procedure_label!r}, {n})")

    def series(self, metric: str, procedure_label: str):
        """[(n, mean, se)] across the n grid for one procedure."""
        out = []
        for c in self.cells:
            if c.procedure == procedure_label:
                s = c.metrics[metric]
                out.append((c.n, s.mean, s.se))
        return out


@dataclass(frozen=True)
class TrialResult:
    rejected: bool
    degenerate: bool
    t_stat: float
    loss_p: float
    power: float
    v_n: float
    m_n: float
    abs_d: float
    d_final: int
    max_margin_d: float
    tally: GuessTally
    snapshots: dict[int, dict[str, float]]


def run_trial(cell: CellConfig, replication_seed: int) -> TrialResult:
    """One trial, reproducing exactly the engine's replication for this seed."""
    keys = np.array([replication_seed % 2 ** 64], dtype=np.uint64)
    chunk = simulate_chunk(cell, keys)
    tally = GuessTally(n=cell.n, correct=int(chunk.correct[0]),
                       sum_abs_pm_half=float(chunk.sb_abs[0]))
    snaps = {m: {name: float(vals[0]) for name, vals in v.items()}
             for m, v in chunk.snapshots.items()}
    return TrialResult(
        rejected=bool(chunk.rejected[0]),
        degenerate=bool(chunk.degenerate[0]),
        t_stat=float(chunk.t_stat[0]),
        loss_p=float(chunk.loss_p[0]),
        power=float(chunk.power[0]),
        v_n=float(chunk.v_n[0]),
        m_n=float(chunk.m_n[0]),
        abs_d=float(chunk.abs_d[0]),
        d_final=int(chunk.d_final[0]),
        max_margin_d=float(chunk.max_margin_d[0]),
        tally=tally,
        snapshots=snaps,
    )


def _cell_config(config: ExperimentConfig, proc_index: int, n: int) -> CellConfig:
    return CellConfig(
        procedure=config.procedures[proc_index],
        proc_index=proc_index,
        covariates=config.covariates,
        model=config.model,
        test=config.test,
        n=n,
        snapshot_points=tuple(p for p in config.snapshot_points if p <= n),
    )


def _run_task(args) -> tuple[int, int, ChunkResult]:
    config, proc_index, n, lo, hi = args
    cell = _cell_config(config, proc_index, n)
    keys = replication_keys(config.master_seed, proc_index, n, lo, hi)
    return proc_index, n, simulate_chunk(cell, keys)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentSummary:
    """Run every (procedure, n) cell; identical output for any worker count."""
    tasks = []
    for proc_index in range(len(config.procedures)):
        for n in config.n_grid:
            lo = 0
            while lo < config.replications:
                hi = min(lo + _CHUNK, config.replications)
                tasks.append((config, proc_index, n, lo, hi))
                lo = hi

    accs: dict[tuple[int, int], CellAccumulator] = {}

    def consume(results) -> None:
        for proc_index, n, chunk in results:
            acc = accs.setdefault((proc_index, n), CellAccumulator(proc_index, n))
            acc.absorb(chunk)

    if workers <= 1:
        consume(map(_run_task, tasks))
    else:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=workers) as pool:
            consume(pool.imap(_run_task, tasks))

    cells = []
    for proc_index in range(len(config.procedures)):
        for n in config.n_grid:
            acc = accs[(proc_index, n)]
            cells.append(CellStats(
                procedure=config.procedures[proc_index].label,
                proc_index=proc_index,
                n=n,
                replications=acc.n_reps,
                degenerate=acc.n_degenerate,
                rejection_rate=acc.rejections / acc.n_reps,
                metrics={m: MetricStat.of(acc.stats[m]) for m in _METRICS},
                sb=sb_estimate(acc.tally),
                d_counts=dict(sorted(acc.d_counts.items())),
                snapshots={p: {m: MetricStat.of(s[m]) for m in _SNAPSHOT_METRICS}
                           for p, s in sorted(acc.snapshots.items())},
            ))
    return ExperimentSummary(config=config, cells=tuple(cells))


@dataclass(frozen=True)
class RateEstimate:
    slope: float
    stderr: float


def rate_estimate(series) -> RateEstimate:
    """Least-squares slope of log(value) against log(n).

    Nonpositive values cannot enter the log fit; they are dropped with a
    warning. At least three usable points are required."""
    xs, ys = [], []
    for n, value in series:
        if value <= 0 or not math.isfinite(value):
            warnings.warn(f"dropping nonpositive point (n={n}, value={value})")
            continue
        xs.append(math.log(n))
        ys.append(math.log(value))
    if len(xs) < 3:
        raise ConfigError("rate estimate needs at least 3 positive points")
    x = np.asarray(xs)
    y = np.asarray(ys)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0:
        raise ConfigError("rate estimate needs distinct n values")
    slope = float(xc @ y) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    dof = len(xs) - 2
    s_sq = float(resid @ resid) / dof if dof > 0 else 0.0
    return RateEstimate(slope=slope, stderr=math.sqrt(s_sq / sxx))
