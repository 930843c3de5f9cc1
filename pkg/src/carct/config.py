"""Experiment definitions as TOML files.

Schema (see configs/ for commented examples):

    [experiment]            replications, master_seed, n_grid, snapshot_points
    [model]                 mu1, mu2, beta, sigma_eps
    [test]                  sides, family, alpha
    [[covariates]]          kind plus per-kind fields (values/probs, lo/hi,
                            mean/sd) and optional cutpoints
    [[procedures]]          kind plus per-kind fields (p, base, gamma,
                            block_size, margin_weights, w_o/w_m/w_s, table)
    [oracle]                n, radius (oracle-check only)
    [allocation]            standalone allocation function (validate-g only)

Unknown keys are rejected with a nearest-key suggestion so typos fail fast
instead of silently running a default.
"""

from __future__ import annotations

import difflib

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .covariates import CovariateSpec
from .imbalance import WeightConfig
from .inference import ResponseModel, TestSpec
from .procedures import AllocationFunction, ProcedureConfig
from .simulator import ExperimentConfig

_TOP_KEYS = {"experiment", "model", "test", "covariates", "procedures", "oracle", "allocation"}
_EXPERIMENT_KEYS = {"replications", "master_seed", "n_grid", "snapshot_points"}
_MODEL_KEYS = {"mu1", "mu2", "beta", "sigma_eps"}
_TEST_KEYS = {"sides", "family", "alpha"}
_COVARIATE_KEYS = {"kind", "values", "probs", "cutpoints", "lo", "hi", "mean", "sd"}
_PROCEDURE_KEYS = {"kind", "p", "base", "gamma", "block_size", "margin_weights",
                   "w_o", "w_m", "w_s", "table"}
_ORACLE_KEYS = {"n", "radius"}
_ALLOCATION_KEYS = {"kind", "p", "base", "gamma", "table", "n_grid", "x_grid"}


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            hint = difflib.get_close_matches(key, sorted(allowed), n=1)
            suffix = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"unknown key {key!r} in {where}{suffix}")


def load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def parse_covariate(table: dict, where: str = "[[covariates]]") -> CovariateSpec:
    _check_keys(table, _COVARIATE_KEYS, where)
    kind = table.get("kind")
    cutpoints = tuple(table.get("cutpoints", ()))
    if kind == "discrete":
        values = table.get("values")
        probs = table.get("probs")
        if values is None or probs is None or len(values) != len(probs):
            raise ConfigError(f"{where}: discrete needs matching 'values' and 'probs'")
        return CovariateSpec.discrete(list(zip(values, probs)), cutpoints)
    if kind == "uniform":
        if "lo" not in table or "hi" not in table:
            raise ConfigError(f"{where}: uniform needs 'lo' and 'hi'")
        return CovariateSpec.uniform(table["lo"], table["hi"], cutpoints)
    if kind == "normal":
        if "mean" not in table or "sd" not in table:
            raise ConfigError(f"{where}: normal needs 'mean' and 'sd'")
        return CovariateSpec.normal(table["mean"], table["sd"], cutpoints)
    raise ConfigError(f"{where}: kind must be discrete, uniform or normal, got {kind!r}")


def _weights_from(table: dict, where: str) -> WeightConfig:
    if not {"w_o", "w_m", "w_s"} <= set(table):
        raise ConfigError(f"{where}: needs weights w_o, w_m, w_s")
    return WeightConfig(float(table["w_o"]), tuple(float(w) for w in table["w_m"]),
                        float(table["w_s"]))


def _allocation_from(table: dict, where: str) -> AllocationFunction:
    if "table" in table:
        return AllocationFunction.custom(table["table"])
    if "p" in table:
        return AllocationFunction.step(table["p"])
    if "gamma" in table:
        return AllocationFunction.scaled(table.get("base", "linear"), table["gamma"])
    raise ConfigError(f"{where}: allocation needs 'p', 'gamma' (+optional 'base'), or 'table'")


def parse_procedure(table: dict, where: str = "[[procedures]]") -> ProcedureConfig:
    _check_keys(table, _PROCEDURE_KEYS, where)
    kind = table.get("kind")
    if kind == "complete":
        return ProcedureConfig.complete()
    if kind == "efron":
        return ProcedureConfig.efron(table.get("p", 2.0 / 3.0))
    if kind == "wei":
        return ProcedureConfig.wei(table.get("base", "linear"))
    if kind == "permuted_block":
        return ProcedureConfig.permuted_block(table.get("block_size", 4))
    if kind == "pocock_simon":
        return ProcedureConfig.pocock_simon(table.get("p", 2.0 / 3.0),
                                            table.get("margin_weights"))
    if kind == "hu_hu":
        return ProcedureConfig.hu_hu(_weights_from(table, where), table.get("p", 2.0 / 3.0))
    if kind == "family":
        return ProcedureConfig.family(_weights_from(table, where),
                                      _allocation_from(table, where))
    raise ConfigError(f"{where}: unknown procedure kind {kind!r}")


def parse_experiment(doc: dict) -> ExperimentConfig:
    _check_keys(doc, _TOP_KEYS, "config")
    for section in ("experiment", "model", "test"):
        if section not in doc:
            raise ConfigError(f"missing [{section}] section")
    exp = doc["experiment"]
    _check_keys(exp, _EXPERIMENT_KEYS, "[experiment]")
    model_tbl = doc["model"]
    _check_keys(model_tbl, _MODEL_KEYS, "[model]")
    test_tbl = doc["test"]
    _check_keys(test_tbl, _TEST_KEYS, "[test]")
    if not doc.get("covariates"):
        raise ConfigError("at least one [[covariates]] entry is required")
    if not doc.get("procedures"):
        raise ConfigError("at least one [[procedures]] entry is required")

    covariates = tuple(parse_covariate(t, f"[[covariates]] entry {i + 1}")
                       for i, t in enumerate(doc["covariates"]))
    procedures = tuple(parse_procedure(t, f"[[procedures]] entry {i + 1}")
                       for i, t in enumerate(doc["procedures"]))
    model = ResponseModel(
        mu1=float(model_tbl.get("mu1", 0.0)),
        mu2=float(model_tbl.get("mu2", 0.0)),
        beta=tuple(float(b) for b in model_tbl.get("beta", ())),
        sigma_eps=float(model_tbl.get("sigma_eps", 1.0)),
    )
    if len(model.beta) != len(covariates):
        raise ConfigError("[model] beta must have one entry per covariate")
    test = TestSpec(
        sides=test_tbl.get("sides", "one"),
        family=test_tbl.get("family", "t"),
        alpha=float(test_tbl.get("alpha", 0.05)),
    )
    missing = {"replications", "master_seed", "n_grid"} - set(exp)
    if missing:
        raise ConfigError(f"[experiment] is missing {sorted(missing)}")
    return ExperimentConfig(
        covariates=covariates,
        model=model,
        test=test,
        procedures=procedures,
        n_grid=tuple(int(n) for n in exp["n_grid"]),
        replications=int(exp["replications"]),
        master_seed=int(exp["master_seed"]),
        snapshot_points=tuple(int(s) for s in exp.get("snapshot_points", ())),
    )


def parse_oracle_options(doc: dict) -> dict:
    """n for exact enumeration plus the stationary truncation radius."""
    table = doc.get("oracle", {})
    _check_keys(table, _ORACLE_KEYS, "[oracle]")
    return {"n": int(table.get("n", 6)), "radius": int(table.get("radius", 30))}


def parse_allocation_doc(doc: dict):
    """(allocation function, n_grid, x_grid) for the validator subcommand."""
    _check_keys(doc, _TOP_KEYS, "config")
    if "allocation" not in doc:
        raise ConfigError("missing [allocation] section")
    table = doc["allocation"]
    _check_keys(table, _ALLOCATION_KEYS, "[allocation]")
    fn = _allocation_from(table, "[allocation]")
    n_grid = [int(n) for n in table["n_grid"]] if "n_grid" in table else None
    x_grid = [float(x) for x in table["x_grid"]] if "x_grid" in table else None
    return fn, n_grid, x_grid
