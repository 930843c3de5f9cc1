"""Report emission: summary tables, plot-data series, and the run manifest.

Machine outputs print floats with 17 significant digits so CSV and JSON
agree to full double precision; human tables round to 4. The manifest's
"experiment" block (config echo, seed, version, schema) is deterministic
and sufficient to reproduce a run exactly; the "run" block (wall time,
workers, timestamp) is informational only.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .covariates import CovariateSpec
from .errors import ConfigError
from .imbalance import WeightConfig
from .inference import ResponseModel, TestSpec
from .procedures import AllocationFunction, ProcedureConfig
from .simulator import _METRICS, ExperimentConfig, ExperimentSummary

SCHEMA_VERSION = 1


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# config serialization (manifest round-trip)
# ---------------------------------------------------------------------------


def _covariate_to_dict(spec: CovariateSpec) -> dict:
    out = {"kind": spec.kind, "cutpoints": list(spec.cutpoints), "shift": spec.shift}
    if spec.kind == "discrete":
        out["values"] = list(spec.values)
        out["probs"] = list(spec.probs)
    elif spec.kind == "uniform":
        out["lo"], out["hi"] = spec.lo, spec.hi
    else:
        out["sd"] = spec.sd
    return out


def _covariate_from_dict(d: dict) -> CovariateSpec:
    # fields are already recentered; rebuild the spec directly
    kw = dict(kind=d["kind"], cutpoints=tuple(d["cutpoints"]), shift=d["shift"])
    if d["kind"] == "discrete":
        kw.update(values=tuple(d["values"]), probs=tuple(d["probs"]))
    elif d["kind"] == "uniform":
        kw.update(lo=d["lo"], hi=d["hi"])
    else:
        kw.update(sd=d["sd"])
    return CovariateSpec(**kw)


def _procedure_to_dict(proc: ProcedureConfig) -> dict:
    out = {"kind": proc.kind}
    for name in ("p", "base", "block_size"):
        if getattr(proc, name) is not None:
            out[name] = getattr(proc, name)
    if proc.margin_weights is not None:
        out["margin_weights"] = list(proc.margin_weights)
    if proc.weights is not None:
        out["weights"] = {"w_o": proc.weights.w_o, "w_m": list(proc.weights.w_m),
                          "w_s": proc.weights.w_s}
    if proc.alloc is not None:
        a = {"kind": proc.alloc.kind}
        if proc.alloc.p is not None:
            a["p"] = proc.alloc.p
        if proc.alloc.base is not None:
            a["base"] = proc.alloc.base
        if proc.alloc.gamma is not None:
            a["gamma"] = proc.alloc.gamma
        if proc.alloc.table is not None:
            a["table"] = [list(row) for row in proc.alloc.table]
        out["alloc"] = a
    return out


def _procedure_from_dict(d: dict) -> ProcedureConfig:
    weights = None
    if "weights" in d:
        w = d["weights"]
        weights = WeightConfig(w["w_o"], tuple(w["w_m"]), w["w_s"])
    alloc = None
    if "alloc" in d:
        a = d["alloc"]
        alloc = AllocationFunction(
            kind=a["kind"], p=a.get("p"), base=a.get("base"), gamma=a.get("gamma"),
            table=tuple(tuple(row) for row in a["table"]) if "table" in a else None)
    mw = d.get("margin_weights")
    return ProcedureConfig(
        kind=d["kind"], p=d.get("p"), base=d.get("base"),
        block_size=d.get("block_size"),
        margin_weights=tuple(mw) if mw is not None else None,
        weights=weights, alloc=alloc)


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "covariates": [_covariate_to_dict(c) for c in config.covariates],
        "model": {"mu1": config.model.mu1, "mu2": config.model.mu2,
                  "beta": list(config.model.beta), "sigma_eps": config.model.sigma_eps},
        "test": {"sides": config.test.sides, "family": config.test.family,
                 "alpha": config.test.alpha},
        "procedures": [_procedure_to_dict(p) for p in config.procedures],
        "n_grid": list(config.n_grid),
        "replications": config.replications,
        "master_seed": config.master_seed,
        "snapshot_points": list(config.snapshot_points),
    }


def config_from_dict(d: dict) -> ExperimentConfig:
    return ExperimentConfig(
        covariates=tuple(_covariate_from_dict(c) for c in d["covariates"]),
        model=ResponseModel(mu1=d["model"]["mu1"], mu2=d["model"]["mu2"],
                            beta=tuple(d["model"]["beta"]),
                            sigma_eps=d["model"]["sigma_eps"]),
        test=TestSpec(sides=d["test"]["sides"], family=d["test"]["family"],
                      alpha=d["test"]["alpha"]),
        procedures=tuple(_procedure_from_dict(p) for p in d["procedures"]),
        n_grid=tuple(d["n_grid"]),
        replications=d["replications"],
        master_seed=d["master_seed"],
        snapshot_points=tuple(d["snapshot_points"]),
    )


def config_from_manifest(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    try:
        return config_from_dict(manifest["experiment"]["config"])
    except KeyError as exc:
        raise ConfigError(f"manifest {path} has no experiment config block") from exc


# ---------------------------------------------------------------------------
# summary serialization
# ---------------------------------------------------------------------------


def summary_to_dict(summary: ExperimentSummary) -> dict:
    cells = []
    for c in summary.cells:
        cells.append({
            "procedure": c.procedure,
            "proc_index": c.proc_index,
            "n": c.n,
            "replications": c.replications,
            "degenerate": c.degenerate,
            "rejection_rate": c.rejection_rate,
            "sb": dataclasses.asdict(c.sb),
            "metrics": {m: dataclasses.asdict(c.metrics[m]) for m in _METRICS},
            "d_counts": {str(d): cnt for d, cnt in c.d_counts.items()},
            "snapshots": {str(p): {m: dataclasses.asdict(s[m]) for m in s}
                          for p, s in c.snapshots.items()},
        })
    return {"schema_version": SCHEMA_VERSION,
            "config": config_to_dict(summary.config),
            "cells": cells}


@dataclass(frozen=True)
class ReportBundle:
    out_dir: Path
    paths: tuple[Path, ...]


def _summary_csv(summary: ExperimentSummary) -> str:
    header = ["procedure", "n", "replications", "degenerate", "rejection_rate",
              "sb", "smith_u", "sb_rao_blackwell"]
    for m in _METRICS:
        header += [f"{m}_mean", f"{m}_se"]
    lines = [",".join(header)]
    for c in summary.cells:
        row = [c.procedure, str(c.n), str(c.replications), str(c.degenerate),
               _fmt(c.rejection_rate), _fmt(c.sb.sb), _fmt(c.sb.smith_u),
               _fmt(c.sb.sb_rao_blackwell)]
        for m in _METRICS:
            row += [_fmt(c.metrics[m].mean), _fmt(c.metrics[m].se)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _series_csv(summary: ExperimentSummary, metric: str) -> str:
    lines = ["procedure,x,y,y_se"]
    for c in summary.cells:
        s = c.metrics[metric]
        lines.append(f"{c.procedure},{c.n},{_fmt(s.mean)},{_fmt(s.se)}")
    return "\n".join(lines) + "\n"


def emit_report(summary: ExperimentSummary, out_dir, fmt: str = "csv",
                workers: int = 1, wall_time_s: float | None = None) -> ReportBundle:
    """Write summary/series/manifest files; returns the paths written."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be 'csv' or 'json', got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    target = out / "summary.json"
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(summary_to_dict(summary), fh, indent=2)
        fh.write("\n")
    paths.append(target)

    if fmt == "csv":
        target = out / "summary.csv"
        target.write_text(_summary_csv(summary), encoding="utf-8")
        paths.append(target)
        for m in _METRICS:
            target = out / f"series_{m}.csv"
            target.write_text(_series_csv(summary, m), encoding="utf-8")
            paths.append(target)

    # outputs lists what was actually written, so the manifest never
    # advertises files the chosen format skipped
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": {
            "package": "carct",
            "version": __version__,
            "config": config_to_dict(summary.config),
            "outputs": sorted(p.name for p in paths),
        },
        "run": {
            "wall_time_s": wall_time_s,
            "workers": workers,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
    }

    target = out / "manifest.json"
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    paths.append(target)
    return ReportBundle(out_dir=out, paths=tuple(paths))


def human_table(summary: ExperimentSummary) -> str:
    """Compact 4-significant-digit table for terminal output."""
    cols = ["procedure", "n", "reps", "reject", "loss_p", "power", "m_n", "sb_rb"]
    rows = [cols]
    for c in summary.cells:
        rows.append([
            c.procedure, str(c.n), str(c.replications),
            format(c.rejection_rate, ".4g"),
            format(c.metrics["loss_p"].mean, ".4g"),
            format(c.metrics["power"].mean, ".4g"),
            format(c.metrics["m_n"].mean, ".4g"),
            format(c.metrics["sb_rb"].mean, ".4g"),
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
    out = []
    for r in rows:
        out.append("  ".join(val.ljust(w) for val, w in zip(r, widths)).rstrip())
    return "\n".join(out)
