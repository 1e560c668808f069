import math

import numpy as np
import pytest
from hypothesis import given, settings

from rsctmdp import average_solver
from rsctmdp.average_solver import (
    BracketError,
    ConvergenceError,
    PolicySpaceTooLarge,
    brute_force_optimal,
    extract_policy,
    op_slack,
    perron_batch,
    policy_value_risk_neutral,
    policy_value_spectral,
    solve,
)
from rsctmdp.first_passage import NotIrreducibleError, optimal_first_passage
from rsctmdp.instances import bundled
from rsctmdp.model import CtmdpModel, DetPolicy, RandStationaryPolicy, all_policies

from conftest import chain, models

GOLDEN = (math.sqrt(5) - 1) / 2


def test_constant_cost():
    m = bundled("constant_cost")
    rep = solve(m)
    assert rep.g_star == 0.7
    np.testing.assert_array_equal(rep.h_star, 0.0)
    assert rep.residual_op == 0.0


def test_closed_form_two_state(sym2):
    # Perron root of [[-1, 1], [1, 0]] solves rho^2 + rho - 1 = 0.
    rep = solve(sym2)
    assert rep.g_star == pytest.approx(GOLDEN, abs=1e-9)
    assert rep.residual_hz <= 1e-8
    assert rep.residual_op <= 1e-8
    assert rep.bracket_trace[0] == (0.0, 1.0)
    lo, hi = rep.bracket_trace[-1]
    assert hi - lo < 1e-10 and hi == rep.g_star


def test_small_lambda_approaches_risk_neutral(sym2):
    rep = solve(sym2.with_lambda(1e-4))
    assert rep.g_star == pytest.approx(0.5, abs=1e-3)


def test_single_state():
    m = CtmdpModel.from_arrays([[[0.0], [0.0], [0.0]]], [[0.4, -0.2, 0.9]], 2.0)
    rep = solve(m)
    assert rep.g_star == -0.2 and rep.policy == DetPolicy((1,))
    np.testing.assert_array_equal(rep.h_star, [0.0])


def test_bracket_check(monkeypatch, sym2):
    def always_positive(model, g, z, init=None):
        sol = optimal_first_passage(model, g, z)
        sol.x = sol.x + 1.0
        return 1, sol

    monkeypatch.setattr(average_solver, "membership_in_G", always_positive)
    with pytest.raises(BracketError, match="bracket invalid"):
        solve(sym2)


def test_tol_must_be_positive(sym2):
    with pytest.raises(ValueError):
        solve(sym2, tol=0.0)


# --- extract_policy -------------------------------------------------------------


def test_extract_single_action_residual_is_defect(sym2):
    h = np.array([0.0, 0.3])
    pol, res = extract_policy(sym2, 0.5, h)
    assert pol == DetPolicy((0, 0))
    x = np.exp(h)
    lhs = 0.5 * x
    rhs = np.array([0.0 * x[0] - x[0] + x[1], 1.0 * x[1] + x[0] - x[1]])
    scale = np.maximum(lhs, np.array([x[0] + x[1], x[1] + x[0] + x[1]]))
    assert res == pytest.approx(np.max(np.abs(lhs - rhs) / scale), rel=1e-12)


def test_extract_prefers_cheaper_identical_action():
    m = CtmdpModel.from_arrays(
        [[[-1, 1], [-1, 1]], [[1, -1]]], [[0.6, 0.5], [0.0]], 1.0
    )
    pol, _ = extract_policy(m, 0.3, np.zeros(2))
    assert pol.choice[0] == 1


def test_extract_ties_go_to_lowest_index():
    m = CtmdpModel.from_arrays([[[-1, 1], [-1, 1]], [[1, -1]]], [[0.5, 0.5], [0.0]], 1.0)
    pol, _ = extract_policy(m, 0.3, np.zeros(2))
    assert pol.choice[0] == 0


@settings(max_examples=30, deadline=None)
@given(models())
def test_solution_is_self_consistent(model):
    rep = solve(model)
    pol, res = extract_policy(model, rep.g_star, rep.h_star)
    assert res <= 1e-8
    assert pol == rep.policy


# --- spectral evaluation ----------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(models())
def test_spectral_constant_cost(model):
    m = model.with_costs([np.full_like(c, -0.35) for c in model.costs])
    for f in list(all_policies(m))[:4]:
        assert policy_value_spectral(m, f).value == pytest.approx(-0.35, abs=1e-10)


def test_spectral_closed_form(sym2):
    rep = policy_value_spectral(sym2, DetPolicy((0, 0)))
    assert rep.method == "spectral"
    assert rep.value == pytest.approx(GOLDEN, abs=1e-10)


def test_spectral_not_irreducible():
    m = CtmdpModel.from_arrays([[[-1, 1, 0]], [[0, -1, 1]], [[0, 1, -1]]], [[0], [0], [0]], 1.0)
    with pytest.raises(NotIrreducibleError):
        policy_value_spectral(m, DetPolicy((0, 0, 0)))


def test_power_iteration_cap():
    A = np.array([[[1.0, 1.0], [1.0, 2.0]]])
    with pytest.raises(ConvergenceError):
        perron_batch(A, max_iter=1)
    rho, vec, _ = perron_batch(A)
    assert rho[0] == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-12)
    assert np.all(vec > 0)


@settings(max_examples=30, deadline=None)
@given(models())
def test_spectral_value_of_optimal_policy(model):
    rep = solve(model)
    assert policy_value_spectral(model, rep.policy).value == pytest.approx(rep.g_star, abs=1e-8)


def test_spectral_randomized_policy(machine):
    det = DetPolicy((0, 1, 1))
    rnd = RandStationaryPolicy.from_deterministic(machine, det)
    assert policy_value_spectral(machine, rnd).value == pytest.approx(
        policy_value_spectral(machine, det).value, abs=1e-13
    )


# --- brute force -----------------------------------------------------------------


def test_brute_single_action(sym2):
    res = brute_force_optimal(sym2)
    assert res.policy == DetPolicy((0, 0)) and res.evaluated == 1
    assert res.value == pytest.approx(GOLDEN, abs=1e-10)


def test_brute_dominated_action():
    m = CtmdpModel.from_arrays(
        [[[-1, 1], [-1, 1]], [[1, -1]]], [[0.2, 0.9], [0.4]], 1.0
    )
    assert brute_force_optimal(m).policy.choice[0] == 0


def test_brute_skips_reducible_policies():
    # Whenever state 1 uses a1 the chain cycles 1 -> 2 -> 1 and never returns to 0.
    rates = [
        [[-2, 1, 1], [-1, 1, 0]],
        [[1, -2, 1], [0, -1, 1]],
        [[0, 1, -1]],
    ]
    m = CtmdpModel.from_arrays(rates, [[0.1, 0.0], [0.2, 0.0], [0.5]], 1.0)
    res = brute_force_optimal(m)
    assert len(res.skipped) == 2
    assert "[0, 1, 0]" in res.skipped[0] and "[1, 1, 0]" in res.skipped[1]
    assert res.evaluated == 2


def test_brute_guard():
    m = CtmdpModel.from_arrays([[[-1, 1]] * 3, [[1, -1]] * 3], [[0, 0, 0], [0, 0, 0]], 1.0)
    with pytest.raises(PolicySpaceTooLarge):
        brute_force_optimal(m, max_policies=8)


def test_brute_independent_of_batching(instances):
    for m in instances[:10]:
        a = brute_force_optimal(m)
        b = brute_force_optimal(m, chunk=1)
        assert a.policy == b.policy and a.value == b.value


@settings(max_examples=30, deadline=None)
@given(models(max_states=3, max_actions=2))
def test_brute_matches_solve(model):
    assert brute_force_optimal(model).value == pytest.approx(solve(model).g_star, abs=1e-6)


# --- risk-neutral ------------------------------------------------------------------


def test_risk_neutral_symmetric(sym2):
    assert policy_value_risk_neutral(sym2, DetPolicy((0, 0))) == pytest.approx(0.5, abs=1e-14)


def test_risk_neutral_constant_cost():
    m = bundled("constant_cost")
    for f in all_policies(m):
        assert policy_value_risk_neutral(m, f) == pytest.approx(0.7, abs=1e-14)


def test_risk_neutral_balance_equation():
    m = chain([[0, 1], [3, 0]], [0, 1])
    # pi(0) * 1 = pi(1) * 3 gives pi = (0.75, 0.25).
    assert policy_value_risk_neutral(m, DetPolicy((0, 0))) == pytest.approx(0.25, abs=1e-14)


# --- structural properties ----------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(models())
def test_optimality_equation_two_sided(model):
    rep = solve(model)
    assert rep.residual_hz <= 1e-8 * max(1, abs(rep.g_star))
    lo, hi = model.cost_range
    assert lo <= rep.g_star <= hi
    slack = op_slack(model, rep.g_star, rep.h_star)
    for i, s in enumerate(slack):
        assert np.all(s >= -1e-8)
        assert abs(s[rep.policy.choice[i]]) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(models())
def test_reference_state_independence(model):
    gs = [solve(model, z).g_star for z in range(model.n_states)]
    assert max(gs) - min(gs) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(models())
def test_shift_equivariance(model):
    a = solve(model)
    b = solve(model.shift_costs(0.3))
    assert b.g_star - a.g_star == pytest.approx(0.3, abs=1e-8)
    np.testing.assert_allclose(b.h_star, a.h_star, atol=1e-8)
    assert brute_force_optimal(model.shift_costs(0.3)).policy == brute_force_optimal(model).policy


@settings(max_examples=15, deadline=None)
@given(models())
def test_lambda_monotone(model):
    gs = [solve(model.with_lambda(lam)).g_star for lam in (0.25, 0.5, 1.0, 2.0, 4.0)]
    assert all(a <= b + 1e-8 for a, b in zip(gs, gs[1:]))


@settings(max_examples=15, deadline=None)
@given(models())
def test_risk_neutral_limit(model):
    g = solve(model.with_lambda(1e-4)).g_star
    neutral = min(policy_value_risk_neutral(model, f) for f in all_policies(model))
    assert abs(g - neutral) <= 1e-3
