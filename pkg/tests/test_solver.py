import warnings

import numpy as np
import pytest

from asgl.errors import DimensionMismatch, IllPosed
from asgl.groups import build_groups
from asgl.loss import Dataset, loss_score
from asgl.penalty import PenaltySpec
from asgl.pipeline import first_step_estimator
from asgl.solver import (SolverConfig, coefficient_drop_test, group_drop_test, kkt_verify,
                         objective_value, soft_threshold, solve)
from oracles import (grid_minimum_21, lasso_cd, objective_21, orthonormal_design,
                     random_problem)


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(0.0, 0.7) == 0.0
    assert not np.signbit(soft_threshold(-0.5, 1.0))
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, 0.2, 5.0]), 1.0), [-2.0, 0, 4.0])


def test_drop_test_examples():
    assert group_drop_test([0.1, -0.1], 0.2, 0.05)
    assert not group_drop_test([1.0, 0.0], 0.2, 0.5)
    assert group_drop_test([0.3, 0.4], 0.0, 0.5)  # equality drops
    assert coefficient_drop_test(0.1, 0.2)
    assert not coefficient_drop_test(-0.3, 0.2)
    assert coefficient_drop_test(0.2, 0.2)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(tol=1e-8, inner_tol=1e-6)
    with pytest.raises(ValueError):
        SolverConfig(step_rule="coordinate")


@pytest.mark.parametrize("family", ["squared", "logistic"])
def test_unpenalized_matches_m_estimator(family):
    data, groups, _ = random_problem(3, T=120, family=family)
    fit = solve(data, groups, PenaltySpec.uniform(groups, 0.0, 0.0), family)
    ref = first_step_estimator(data, family)
    assert fit.converged
    ref_obj = objective_value(data, groups, PenaltySpec.uniform(groups, 0, 0), family, ref)
    assert abs(fit.objective - ref_obj) <= 1e-10
    np.testing.assert_allclose(fit.theta_hat, ref, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_weighted_lasso_closed_form(seed):
    rng = np.random.default_rng(seed)
    T, d = 50, 6
    X = orthonormal_design(T, d, rng)
    y = X @ rng.standard_normal(d) + rng.standard_normal(T)
    groups = build_groups([2, 3, 1])
    alpha = rng.uniform(0.2, 3.0, d)
    lam = rng.uniform(5, 40)
    fit = solve(Dataset(X, y), groups, PenaltySpec(lam, 0.0, alpha, np.ones(3)))
    ols = X.T @ y / T
    np.testing.assert_allclose(fit.theta_hat, soft_threshold(ols, lam * alpha / T), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_weighted_group_lasso_closed_form(seed):
    rng = np.random.default_rng(seed)
    T, sizes = 40, [3, 2, 4]
    groups = build_groups(sizes)
    X = orthonormal_design(T, groups.d, rng)
    y = X @ rng.standard_normal(groups.d) + rng.standard_normal(T)
    xi = rng.uniform(0.2, 3.0, 3)
    gam = rng.uniform(5, 40)
    fit = solve(Dataset(X, y), groups, PenaltySpec(0.0, gam, np.ones(groups.d), xi))
    b = X.T @ y / T
    want = np.concatenate([max(0.0, 1 - gam * xi[k] / T / np.linalg.norm(b[sl])) * b[sl]
                           for k, sl in enumerate(groups.slices())])
    np.testing.assert_allclose(fit.theta_hat, want, atol=1e-8)


def test_brute_force_grid_example():
    rng = np.random.default_rng(2024)
    X = rng.standard_normal((20, 3))
    y = X @ [0.8, -0.4, 0.3] + 0.3 * rng.standard_normal(20)
    data, groups = Dataset(X, y), build_groups([2, 1])
    ones = (np.ones(3), np.ones(2))
    fit = solve(data, groups, PenaltySpec(3.0, 3.0, *ones))
    assert fit.objective == pytest.approx(objective_21(data, 3.0, 3.0, *ones, fit.theta_hat),
                                          abs=1e-13)
    assert fit.objective <= grid_minimum_21(data, 3.0, 3.0, *ones) + 1e-5


def test_kkt_verify_examples():
    data, groups, _ = random_problem(1)
    score0 = loss_score(data, np.zeros(groups.d))
    lam = (np.abs(score0).max() + 1.0) * data.T
    spec = PenaltySpec.uniform(groups, lam, 1.0)
    rep = kkt_verify(data, groups, spec, "squared", np.zeros(groups.d))
    assert rep.residual == 0.0 and all(rep.zero_groups)

    spec = PenaltySpec.uniform(groups, 2.0, 2.0)
    fit = solve(data, groups, spec)
    assert fit.converged and kkt_verify(data, groups, spec, "squared", fit.theta_hat).residual <= 1e-8
    bumped = fit.theta_hat.copy()
    bumped[0] += 0.1
    assert kkt_verify(data, groups, spec, "squared", bumped).residual > 1e-8


@pytest.mark.parametrize("family", ["squared", "logistic"])
@pytest.mark.parametrize("seed", range(10))
def test_converged_fits_are_certified(family, seed):
    rng = np.random.default_rng(100 + seed)
    sizes = tuple(int(s) for s in rng.integers(1, 6, size=4))
    data, groups, _ = random_problem(seed, T=80, sizes=sizes, family=family, rho=0.5)
    spec = PenaltySpec(10 ** rng.uniform(-1, 1.5), 10 ** rng.uniform(-1, 1.5),
                       rng.uniform(0.5, 2, groups.d), rng.uniform(0.5, 2, groups.m))
    fit = solve(data, groups, spec, family)
    assert fit.converged
    assert fit.kkt_residual <= 1e-8
    assert kkt_verify(data, groups, spec, family, fit.theta_hat).residual <= 1e-8


@pytest.mark.parametrize("family", ["squared", "logistic"])
@pytest.mark.parametrize("seed", range(10))
def test_monotone_descent(family, seed):
    data, groups, _ = random_problem(seed, T=70, sizes=(4, 3, 5), family=family, rho=0.8)
    fit = solve(data, groups, PenaltySpec.uniform(groups, 1.0, 2.0), family)
    trace = fit.objective_trace
    assert len(trace) == fit.iterations + 1
    assert np.all(np.diff(trace) <= 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_lasso_reduction_matches_plain_coordinate_descent(seed):
    data, groups, _ = random_problem(seed, T=90, sizes=(3, 3, 2), rho=0.6)
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.5, 2.0, groups.d)
    lam = 6.0
    fit = solve(data, groups, PenaltySpec(lam, 0.0, alpha, np.ones(groups.m)))
    ref = lasso_cd(data.design, data.response, lam * alpha / data.T)
    np.testing.assert_allclose(fit.theta_hat, ref, atol=1e-7)


@pytest.mark.parametrize("family", ["squared", "logistic"])
@pytest.mark.parametrize("seed", range(10))
def test_permutation_equivariance(family, seed):
    data, groups, _ = random_problem(seed, T=100, sizes=(2, 4, 3), family=family)
    spec = PenaltySpec(2.0, 3.0, np.linspace(0.5, 1.5, groups.d), np.array([1.0, 0.7, 1.3]))
    fit = solve(data, groups, spec, family)
    order = np.random.default_rng(seed).permutation(groups.m)
    cols = np.concatenate([np.arange(groups.d)[groups.slice(k)] for k in order])
    pgroups = build_groups([groups.group_sizes[k] for k in order])
    pspec = PenaltySpec(2.0, 3.0, spec.alpha_weights[cols], spec.xi_weights[order])
    pfit = solve(Dataset(data.design[:, cols], data.response), pgroups, pspec, family)
    np.testing.assert_allclose(pfit.theta_hat, fit.theta_hat[cols], atol=1e-7)
    np.testing.assert_array_equal(pfit.theta_hat == 0, fit.theta_hat[cols] == 0)


@pytest.mark.parametrize("family", ["squared", "logistic"])
@pytest.mark.parametrize("seed", range(10))
def test_scaling_invariance(family, seed):
    data, groups, _ = random_problem(seed, T=50, family=family)
    k = 3
    big = Dataset(np.tile(data.design, (k, 1)), np.tile(data.response, k))
    a = solve(data, groups, PenaltySpec.uniform(groups, 1.5, 2.5), family)
    b = solve(big, groups, PenaltySpec.uniform(groups, 1.5 * k, 2.5 * k), family)
    np.testing.assert_allclose(b.theta_hat, a.theta_hat, atol=1e-7)


def test_warm_start_reaches_same_solution():
    data, groups, _ = random_problem(8, T=80)
    spec = PenaltySpec.uniform(groups, 3.0, 3.0)
    cold = solve(data, groups, spec)
    warm = solve(data, groups, spec, warm_start=np.ones(groups.d))
    np.testing.assert_allclose(warm.theta_hat, cold.theta_hat, atol=1e-8)
    with pytest.raises(DimensionMismatch):
        solve(data, groups, spec, warm_start=np.ones(2))


def test_exact_zeros_are_bitwise():
    data, groups, _ = random_problem(4, T=60)
    fit = solve(data, groups, PenaltySpec.uniform(groups, 15.0, 15.0))
    zeros = fit.theta_hat[fit.theta_hat == 0]
    assert zeros.size > 0
    assert not np.any(np.signbit(zeros))
    assert fit.active.active_coords == set(np.flatnonzero(fit.theta_hat).tolist())


def test_max_iterations_returns_unconverged():
    data, groups, _ = random_problem(5, T=60, rho=0.9)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = solve(data, groups, PenaltySpec.uniform(groups, 0.5, 0.5),
                    config=SolverConfig(max_outer_iters=1))
    assert not fit.converged and fit.iterations == 1
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_ill_posed_unpenalized_rank_deficient():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 2))
    X = np.column_stack([x, x[:, 0]])
    data, groups = Dataset(X, rng.standard_normal(30)), build_groups([2, 1])
    with pytest.raises(IllPosed):
        solve(data, groups, PenaltySpec.uniform(groups, 0.0, 0.0))
    with pytest.raises(IllPosed):
        solve(Dataset(X[:3], (rng.random(3) < 0.5).astype(float)), groups,
              PenaltySpec.uniform(groups, 0.0, 0.0), "logistic")


def test_exact_rule_rejects_logistic():
    data, groups, _ = random_problem(0, family="logistic")
    with pytest.raises(ValueError):
        solve(data, groups, PenaltySpec.uniform(groups, 1, 1), "logistic",
              SolverConfig(step_rule="exact"))


def test_backtracking_rule_on_squared_loss_agrees():
    data, groups, _ = random_problem(6, T=80)
    spec = PenaltySpec.uniform(groups, 2.0, 4.0)
    a = solve(data, groups, spec)
    b = solve(data, groups, spec, config=SolverConfig(step_rule="backtracking"))
    assert b.converged
    np.testing.assert_allclose(b.theta_hat, a.theta_hat, atol=1e-7)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("family", ["squared", "logistic"])
def test_step_rules_reach_the_same_minimizer(seed, family):
    data, groups, _ = random_problem(40 + seed, T=90, family=family)
    spec = PenaltySpec.uniform(groups, 0.5, 1.0)
    a = solve(data, groups, spec, family, SolverConfig(step_rule="newton"))
    b = solve(data, groups, spec, family, SolverConfig(step_rule="backtracking"))
    assert a.converged and b.converged
    np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=1e-6)
    assert a.active.active_groups == b.active.active_groups
