"""End-to-end tests for the command-line interface.

Each test invokes main(argv) directly; subprocess spawning is left to the
acceptance suite. Exit codes: 0 ok, 2 config error, 3 numerical/I/O error.
"""

import json

import pytest

from carct.cli import main

BASE_CONFIG = """\
[experiment]
replications = 40
master_seed = 11
n_grid = [16]

[model]
mu1 = 1.0
mu2 = 0.0
beta = [1.0]
sigma_eps = 1.0

[test]
sides = "one"
family = "t"
alpha = 0.05

[[covariates]]
kind = "discrete"
values = [-1.0, 1.0]
probs = [0.5, 0.5]
cutpoints = [0.0]

[[procedures]]
kind = "efron"
p = 0.6666666666666666
"""


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("CARCT_WORKERS", raising=False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(BASE_CONFIG)
    return path


def test_simulate_success(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    code = main(["simulate", str(config_file), "--out-dir", str(out)])
    assert code == 0
    captured = capsys.readouterr()
    assert "procedure" in captured.out
    assert "wrote" in captured.out
    names = {p.name for p in out.iterdir()}
    assert {"summary.csv", "summary.json", "manifest.json"} <= names
    assert "series_loss_p.csv" in names


def test_simulate_json_format_skips_csv(tmp_path, config_file):
    out = tmp_path / "out"
    code = main(["simulate", str(config_file), "--out-dir", str(out),
                 "--format", "json"])
    assert code == 0
    assert {p.name for p in out.iterdir()} == {"summary.json", "manifest.json"}


def test_missing_config_file_is_config_error(tmp_path, capsys):
    code = main(["simulate", str(tmp_path / "nope.toml")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_no_config_and_no_manifest_is_config_error(capsys):
    code = main(["simulate"])
    assert code == 2
    assert "config file or --from-manifest" in capsys.readouterr().err


def test_unknown_key_names_key_and_suggestion(tmp_path, capsys):
    path = tmp_path / "typo.toml"
    path.write_text(BASE_CONFIG.replace("replications = 40", "replication = 40"))
    code = main(["simulate", str(path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "'replication'" in err
    assert "'replications'" in err  # nearest-match hint


def test_missing_procedures_is_config_error(tmp_path, capsys):
    path = tmp_path / "empty.toml"
    path.write_text(BASE_CONFIG.split("[[procedures]]")[0])
    code = main(["simulate", str(path)])
    assert code == 2
    assert "procedures" in capsys.readouterr().err


def test_invalid_toml_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[experiment\nreplications = 4")
    code = main(["simulate", str(path)])
    assert code == 2
    assert "invalid TOML" in capsys.readouterr().err


def test_out_dir_collision_is_io_error(tmp_path, config_file, capsys):
    blocker = tmp_path / "occupied"
    blocker.write_text("file, not a directory")
    code = main(["simulate", str(config_file), "--out-dir", str(blocker)])
    assert code == 3
    assert "error" in capsys.readouterr().err


def test_bad_seed_and_replication_overrides(tmp_path, config_file, capsys):
    assert main(["simulate", str(config_file), "--seed", "-1"]) == 2
    assert main(["simulate", str(config_file), "--replications", "0"]) == 2
    capsys.readouterr()


def test_workers_env_overrides_flag(tmp_path, config_file, monkeypatch):
    out = tmp_path / "out"
    monkeypatch.setenv("CARCT_WORKERS", "2")
    code = main(["simulate", str(config_file), "--out-dir", str(out),
                 "--workers", "1"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["run"]["workers"] == 2


def test_workers_env_must_be_integer(config_file, monkeypatch, capsys):
    monkeypatch.setenv("CARCT_WORKERS", "two")
    assert main(["simulate", str(config_file)]) == 2
    assert "CARCT_WORKERS" in capsys.readouterr().err


def test_zero_workers_rejected(config_file, capsys):
    assert main(["simulate", str(config_file), "--workers", "0"]) == 2
    capsys.readouterr()


def test_rerun_from_manifest_is_byte_identical(tmp_path, config_file,
                                               monkeypatch):
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert main(["simulate", str(config_file), "--out-dir", str(out1)]) == 0
    # different worker count must not change any emitted number
    monkeypatch.setenv("CARCT_WORKERS", "2")
    assert main(["simulate", "--from-manifest", str(out1 / "manifest.json"),
                 "--out-dir", str(out2)]) == 0
    for name in sorted(p.name for p in out1.iterdir()):
        if name == "manifest.json":
            m1 = json.loads((out1 / name).read_text())
            m2 = json.loads((out2 / name).read_text())
            assert m1["experiment"] == m2["experiment"]
        else:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_seed_override_changes_results(tmp_path, config_file):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["simulate", str(config_file), "--out-dir", str(out1)]) == 0
    assert main(["simulate", str(config_file), "--out-dir", str(out2),
                 "--seed", "999"]) == 0
    assert ((out1 / "summary.csv").read_bytes()
            != (out2 / "summary.csv").read_bytes())
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m2["experiment"]["config"]["master_seed"] == 999


def test_power_subcommand_writes_power_table(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    code = main(["power", str(config_file), "--out-dir", str(out)])
    assert code == 0
    lines = (out / "power_summary.csv").read_text().strip().splitlines()
    assert lines[0].startswith("procedure,n,mean_LossP,empirical_power")
    assert len(lines) == 2
    assert "mean_LossP" in capsys.readouterr().out


def test_selection_bias_subcommand_reports_rates(tmp_path, capsys):
    path = tmp_path / "sb.toml"
    path.write_text(BASE_CONFIG.replace("n_grid = [16]", "n_grid = [12, 24, 48]")
                    .replace("replications = 40", "replications = 150"))
    out = tmp_path / "out"
    code = main(["selection-bias", str(path), "--out-dir", str(out)])
    assert code == 0
    captured = capsys.readouterr().out
    assert "slope[log(SB-1/2) vs log n]" in captured
    assert "efron" in captured


def test_validate_g_step_function(tmp_path, capsys):
    path = tmp_path / "alloc.toml"
    path.write_text("[allocation]\np = 0.6666666666666666\n")
    code = main(["validate-g", str(path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "balance_direction" in out and "pass" in out
    lines = {ln.split()[0]: ln.split()[-1] for ln in out.splitlines()
             if ln and ln.split()[0] in
             ("balance_direction", "strong_correction", "vanishing_bias")}
    assert lines["balance_direction"] == "pass"
    assert lines["strong_correction"] == "pass"
    assert lines["vanishing_bias"] == "FAIL"


def test_validate_g_scaled_coin(tmp_path, capsys):
    # bias vanishes along bounded imbalance but not along proportional
    # imbalance, which is the limsup the third condition checks
    path = tmp_path / "alloc.toml"
    path.write_text('[allocation]\nbase = "linear"\ngamma = 0.5\n')
    code = main(["validate-g", str(path)])
    assert code == 0
    out = capsys.readouterr().out
    lines = {ln.split()[0]: ln.split()[-1] for ln in out.splitlines()
             if ln and ln.split()[0] in
             ("balance_direction", "strong_correction", "vanishing_bias")}
    assert lines == {"balance_direction": "pass",
                     "strong_correction": "pass",
                     "vanishing_bias": "FAIL"}
    assert "worst-case correction ratio" in out
    assert "largest deviation from 1/2" in out


def test_validate_g_accepts_custom_grids(tmp_path, capsys):
    path = tmp_path / "alloc.toml"
    path.write_text("[allocation]\np = 0.75\n"
                    "n_grid = [100, 10000, 1000000]\n"
                    "x_grid = [0.1, 0.01, 0.001]\n")
    assert main(["validate-g", str(path)]) == 0
    capsys.readouterr()


def test_oracle_check_compares_mc_with_enumeration(tmp_path, capsys):
    path = tmp_path / "oracle.toml"
    path.write_text(BASE_CONFIG + "\n[oracle]\nn = 4\n")
    code = main(["oracle-check", str(path), "--replications", "20000"])
    assert code == 0
    out = capsys.readouterr().out
    assert "E[M_n]" in out
    assert "SB_n" in out
    assert "stationary SB limit" in out
    assert "P(D=+0)" in out or "P(D=0)" in out


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
