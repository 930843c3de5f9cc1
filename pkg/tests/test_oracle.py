"""Tests for the exact enumeration and stationary-chain oracles.

The enumeration is cross-checked against an independent path-walking
implementation in tests/oracles.py (different state representation, pure
Python), and the stationary solver against a detailed-balance closed form
for the birth-death special case. Monte Carlo agreement with enumeration is
the anti-bug gate tying the engine to the oracles.
"""

import dataclasses
import math

import numpy as np
import pytest

from carct.config import ExperimentConfig
from carct.covariates import CovariateSpec
from carct.errors import BudgetExceededError, ConfigError
from carct.imbalance import WeightConfig
from carct.inference import ResponseModel, TestSpec
from carct.oracle import chain_stationary, enumerate_exact
from carct.procedures import AllocationFunction, ProcedureConfig
from carct.simulator import run_experiment

from oracles import (
    birth_death_stationary,
    brute_force_paths,
    efron_sb_limit_exact,
    rule_efron,
    rule_family_linear,
    rule_pocock_simon,
)


BINARY = CovariateSpec.discrete(((-1.0, 0.5), (1.0, 0.5)), cutpoints=(0.0,))
MODEL = ResponseModel(mu1=1.0, mu2=0.0, beta=(1.0,), sigma_eps=1.0)
TEST = TestSpec(sides="one", family="t", alpha=0.05)


def _mc_summary(procedure, n, replications, seed=1234):
    config = ExperimentConfig(
        covariates=(BINARY,),
        model=MODEL,
        test=TEST,
        procedures=(procedure,),
        n_grid=(n,),
        replications=replications,
        master_seed=seed,
    )
    return run_experiment(config).cells[0]


# ---------------------------------------------------------------------------
# exact enumeration
# ---------------------------------------------------------------------------


def test_complete_enumeration_is_exact():
    for n in (2, 5, 8):
        exact = enumerate_exact(ProcedureConfig.complete(), [BINARY], n)
        assert exact.sb_n == 0.5
        assert abs(exact.d_sq_mean - n) < 1e-12
        assert abs(sum(exact.d_dist.values()) - 1.0) < 1e-12


def test_efron_two_patients_hand_values():
    exact = enumerate_exact(ProcedureConfig.efron(2.0 / 3.0), [], 2)
    assert abs(exact.sb_n - 7.0 / 12.0) < 1e-12
    assert abs(exact.d_dist[0] - 2.0 / 3.0) < 1e-12
    assert abs(exact.d_dist[2] - 1.0 / 6.0) < 1e-12
    assert abs(exact.d_dist[-2] - 1.0 / 6.0) < 1e-12
    assert abs(exact.d_sq_mean - 4.0 / 3.0) < 1e-12


@pytest.mark.parametrize(
    "procedure, rule",
    [
        (ProcedureConfig.efron(2.0 / 3.0), rule_efron(2.0 / 3.0)),
        (ProcedureConfig.pocock_simon(2.0 / 3.0), rule_pocock_simon(2.0 / 3.0)),
        (
            ProcedureConfig.family(
                weights=WeightConfig(w_o=0.0, w_m=(1.0,), w_s=0.0),
                alloc=AllocationFunction.scaled("linear", 0.5),
            ),
            rule_family_linear(0.5),
        ),
    ],
    ids=["efron", "marginal-step", "family-linear"],
)
def test_enumeration_matches_path_walker(procedure, rule):
    """Same law from two independently written exact computations."""
    n = 5
    exact = enumerate_exact(procedure, [BINARY], n)
    d_dist, e_d_sq, _, sb_n = brute_force_paths(rule, (0.5, 0.5), n)
    assert abs(exact.sb_n - sb_n) < 1e-12
    assert abs(exact.d_sq_mean - e_d_sq) < 1e-12
    for d in set(exact.d_dist) | set(d_dist):
        assert abs(exact.d_dist.get(d, 0.0) - d_dist.get(d, 0.0)) < 1e-12


@pytest.mark.parametrize(
    "procedure",
    [
        ProcedureConfig.complete(),
        ProcedureConfig.efron(2.0 / 3.0),
        ProcedureConfig.wei(),
        ProcedureConfig.permuted_block(4),
        ProcedureConfig.pocock_simon(2.0 / 3.0),
    ],
    ids=lambda p: p.kind,
)
def test_enumeration_mass_sums_to_one(procedure):
    exact = enumerate_exact(procedure, [BINARY], 6)
    assert abs(sum(exact.d_dist.values()) - 1.0) < 1e-12
    assert abs(sum(p for _, p in exact.support) - 1.0) < 1e-12


def test_enumeration_budget_error_names_feasible_n():
    with pytest.raises(BudgetExceededError, match="n <="):
        enumerate_exact(ProcedureConfig.efron(2.0 / 3.0), [BINARY], 40)


def test_enumeration_rejects_continuous_covariates():
    continuous = CovariateSpec.uniform(-1.0, 1.0, cutpoints=(0.0,))
    with pytest.raises(ConfigError):
        enumerate_exact(ProcedureConfig.efron(2.0 / 3.0), [continuous], 4)


# ---------------------------------------------------------------------------
# Monte Carlo vs enumeration (anti-bug gate, small R version)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "procedure",
    [
        ProcedureConfig.complete(),
        ProcedureConfig.efron(2.0 / 3.0),
        ProcedureConfig.pocock_simon(2.0 / 3.0),
    ],
    ids=lambda p: p.kind,
)
def test_engine_matches_enumeration(procedure):
    n, reps = 6, 100_000
    exact = enumerate_exact(procedure, [BINARY], n)
    cell = _mc_summary(procedure, n, reps)

    m_stat = cell.metrics["m_n"]
    assert abs(m_stat.mean - exact.m_mean) < 3 * m_stat.se + 1e-12

    sb_stat = cell.metrics["sb_rb"]
    assert abs(sb_stat.mean - exact.sb_n) < 3 * sb_stat.se + 1e-12

    total = sum(cell.d_counts.values())
    assert total == reps
    for d, p_exact in exact.d_dist.items():
        p_mc = cell.d_counts.get(d, 0) / total
        se = math.sqrt(p_exact * (1.0 - p_exact) / total)
        assert abs(p_mc - p_exact) < 3 * se + 1e-12


def test_family_overall_weight_engine_agreement():
    # smallest n the engine accepts with one covariate (needs n > I + 2)
    procedure = ProcedureConfig.family(
        weights=WeightConfig(w_o=1.0, w_m=(0.0,), w_s=0.0),
        alloc=AllocationFunction.scaled("linear", 0.5),
    )
    exact = enumerate_exact(procedure, [BINARY], 4)
    cell = _mc_summary(procedure, 4, 250_000, seed=77)
    m_stat = cell.metrics["m_n"]
    # the scaled coin saturates at this n, so E[M_4] = 0 on both routes
    assert abs(m_stat.mean - exact.m_mean) < 4 * m_stat.se + 1e-12
    sb_stat = cell.metrics["sb_rb"]
    assert abs(sb_stat.mean - exact.sb_n) < 4 * sb_stat.se + 1e-12


# ---------------------------------------------------------------------------
# stationary chain
# ---------------------------------------------------------------------------


def test_efron_stationary_matches_detailed_balance():
    result = chain_stationary(ProcedureConfig.efron(2.0 / 3.0), [], radius=30)
    assert abs(result.sb_limit - efron_sb_limit_exact(2.0 / 3.0)) < 1e-9
    assert abs(result.sb_limit - 0.625) < 1e-9
    assert result.truncation_mass < 1e-6

    pi_ref = birth_death_stationary(
        lambda d: 2.0 / 3.0 if d < 0 else (1.0 / 3.0 if d > 0 else 0.5), 30)
    for state, mass in result.pi.items():
        assert abs(mass - pi_ref[state[0]]) < 1e-9


def test_complete_chain_is_degenerate():
    result = chain_stationary(ProcedureConfig.complete(), [BINARY], radius=10)
    assert result.sb_limit == 0.5
    assert result.pi == {}
    assert result.truncation_mass == 0.0


def test_truncation_radius_converged():
    # truncation error decays like 2^-K; at the default radius 30 a
    # doubling of the radius moves the limit by well under 1e-8
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        values = {
            k: chain_stationary(ProcedureConfig.efron(2.0 / 3.0), [],
                                radius=k).sb_limit
            for k in (10, 20, 30, 60)
        }
    assert abs(values[30] - values[60]) < 1e-8
    shift_10 = abs(values[10] - values[20])
    shift_20 = abs(values[20] - values[30])
    assert shift_20 < shift_10 / 100


def test_marginal_step_chain_limit():
    # one binary covariate: each margin follows the overall difference, so
    # the limit coincides with the birth-death value
    result = chain_stationary(ProcedureConfig.pocock_simon(2.0 / 3.0),
                              [BINARY], radius=25)
    assert abs(result.sb_limit - 0.625) < 1e-7


def test_gamma_zero_family_chain_limit():
    procedure = ProcedureConfig.family(
        weights=WeightConfig(w_o=0.0, w_m=(1.0,), w_s=0.0),
        alloc=AllocationFunction.step(2.0 / 3.0),
    )
    result = chain_stationary(procedure, [BINARY], radius=25)
    assert result.sb_limit - 0.5 > 0.05
    assert abs(result.sb_limit - 0.625) < 1e-7


def test_stationary_limit_matches_long_run_simulation():
    """Single long trajectory: running mean of |p_m - 1/2| approaches the
    stationary value."""
    from carct.imbalance import ImbalanceState, apply_assignment
    from carct.covariates import sample_profile
    from carct.procedures import assign

    procedure = ProcedureConfig.efron(2.0 / 3.0)
    rng = np.random.default_rng(21)
    state = ImbalanceState(dims=(2,))
    total = 0.0
    n = 100_000
    for _ in range(n):
        profile = sample_profile([BINARY], rng)
        arm, p_m = assign(procedure, state, None, profile, rng)
        total += abs(p_m - 0.5)
        state = apply_assignment(state, profile, arm)
    assert abs((0.5 + total / n) - 0.625) < 1e-3


def test_stationary_requires_time_homogeneous_coin():
    vanishing = ProcedureConfig.family(
        weights=WeightConfig(w_o=0.0, w_m=(1.0,), w_s=0.0),
        alloc=AllocationFunction.scaled("linear", 0.5),
    )
    with pytest.raises(ConfigError):
        chain_stationary(vanishing, [BINARY], radius=10)
    with pytest.raises(ConfigError):
        chain_stationary(ProcedureConfig.wei(), [BINARY], radius=10)


def test_stationary_requires_minimum_radius():
    with pytest.raises(ConfigError):
        chain_stationary(ProcedureConfig.efron(2.0 / 3.0), [], radius=4)


def test_stationary_mass_is_a_distribution():
    # radius 15 leaves ~8e-6 outside: above the warn line, below the error line
    with pytest.warns(UserWarning, match="truncation mass"):
        result = chain_stationary(ProcedureConfig.pocock_simon(2.0 / 3.0),
                                  [BINARY], radius=15)
    total = sum(result.pi.values())
    assert abs(total - 1.0) < 1e-9
    assert all(mass >= -1e-15 for mass in result.pi.values())
