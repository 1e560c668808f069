import math

import numpy as np
import pytest
from scipy import stats

from rsctmdp import simulator
from rsctmdp.average_solver import policy_value_risk_neutral, policy_value_spectral
from rsctmdp.first_passage import first_passage_value
from rsctmdp.instances import bundled
from rsctmdp.model import DetPolicy, RandStationaryPolicy, induced_generator
from rsctmdp.simulator import (
    estimate_average_cost,
    estimate_first_passage,
    simulate_trajectory,
)

GOLDEN = (math.sqrt(5) - 1) / 2
F0 = DetPolicy((0, 0))


def test_trajectory_shape(machine):
    tr = simulate_trajectory(machine, DetPolicy((0, 1, 1)), 2, 50.0, seed=3)
    assert tr.states[0] == 2 and tr.initial_state == 2
    assert tr.jump_times[0] > 0
    assert np.all(np.diff(tr.jump_times) > 0)
    assert np.all(tr.states[1:] != tr.states[:-1])
    assert len(tr.states) == len(tr.jump_times) + 1
    assert tr.jump_times[-1] < 50.0


def test_trajectory_is_deterministic(machine):
    a = simulate_trajectory(machine, DetPolicy((0, 1, 1)), 0, 100.0, seed=11)
    b = simulate_trajectory(machine, DetPolicy((0, 1, 1)), 0, 100.0, seed=11)
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.states, b.states)


def test_cost_integral_is_piecewise_linear(machine):
    tr = simulate_trajectory(machine, DetPolicy((0, 1, 1)), 0, 30.0, seed=5)
    _, c = induced_generator(machine, DetPolicy((0, 1, 1)))
    edges = np.concatenate(([0.0], tr.jump_times, [30.0]))
    manual = sum(c[s] * (edges[k + 1] - edges[k]) for k, s in enumerate(tr.states))
    assert tr.cost_integral() == pytest.approx(manual, rel=1e-14)
    # Between two jumps the slope is the cost rate of the current state.
    t0, t1 = tr.jump_times[2], tr.jump_times[3]
    mid = 0.5 * (t0 + t1)
    slope = (tr.cost_integral(t1) - tr.cost_integral(mid)) / (t1 - mid)
    assert slope == pytest.approx(c[tr.states[3]], abs=1e-9)
    with pytest.raises(ValueError):
        tr.cost_integral(31.0)


def test_tau_is_first_visit_after_first_jump(sym2):
    tr = simulate_trajectory(sym2, F0, 0, 10.0, seed=1)
    # Symmetric two-state chain: the second jump returns to 0.
    assert tr.tau(0) == tr.jump_times[1]
    assert tr.tau(1) == tr.jump_times[0]


def test_holding_time_mean(sym2):
    tr = simulate_trajectory(sym2, F0, 0, 200_000.0, seed=42)
    hold = tr.holding_times()[tr.states[:-1] == 0]
    assert hold.size >= 50_000
    se = hold.std(ddof=1) / math.sqrt(hold.size)
    assert abs(hold.mean() - 1.0) <= 3 * se


def sojourn_and_jump_checks(model, policy, horizon, seed):
    """Per-state sojourn-mean z-scores and chi-square p-values of jump counts."""
    Q, _ = induced_generator(model, policy)
    tr = simulate_trajectory(model, policy, 0, horizon, seed)
    hold = tr.holding_times()
    src, dst = tr.states[:-1], tr.states[1:]
    zs, pvals = [], []
    for i in range(model.n_states):
        h = hold[src == i]
        zs.append((h.mean() - 1.0 / -Q[i, i]) / (h.std(ddof=1) / math.sqrt(h.size)))
        targets = [j for j in range(model.n_states) if j != i and Q[i, j] > 0]
        counts = np.array([np.sum(dst[src == i] == j) for j in targets])
        if len(targets) > 1:
            expected = counts.sum() * Q[i, targets] / -Q[i, i]
            pvals.append(stats.chisquare(counts, expected).pvalue)
    return np.array(zs), np.array(pvals), len(dst)


def test_sojourn_and_jump_laws_randomized(machine):
    pol = RandStationaryPolicy(([0.3, 0.7], [0.5, 0.5], [0.8, 0.2]))
    zs, pvals, jumps = sojourn_and_jump_checks(machine, pol, 30_000.0, seed=42)
    assert jumps >= 10_000
    assert np.all(np.abs(zs) <= 3)
    assert np.all(pvals >= 0.01)


# --- average cost estimator ----------------------------------------------------------


def test_constant_cost_estimate_is_exact():
    m = bundled("constant_cost")
    est = estimate_average_cost(m, DetPolicy((1, 0, 1)), 0, 50.0, 100, seed=1)
    assert est.point == 0.7 and est.std_error == 0.0


def test_average_cost_two_state(sym2):
    est = estimate_average_cost(sym2, F0, 0, 200.0, 10_000, seed=42)
    assert abs(est.point - GOLDEN) <= 0.05


def test_average_cost_small_lambda(sym2):
    m = sym2.with_lambda(1e-3)
    est = estimate_average_cost(m, F0, 0, 200.0, 10_000, seed=42)
    assert abs(est.point - policy_value_risk_neutral(m, F0)) <= 0.02


def test_average_cost_estimate_is_reproducible(machine):
    pol = DetPolicy((0, 1, 1))
    a = estimate_average_cost(machine, pol, 0, 20.0, 5000, seed=9)
    b = estimate_average_cost(machine, pol, 0, 20.0, 5000, seed=9)
    assert a == b
    c = estimate_average_cost(machine, pol, 0, 20.0, 5000, seed=10)
    assert c.point != a.point


def test_chunks_do_not_depend_on_schedule(machine):
    Q, c = induced_generator(machine, DetPolicy((0, 1, 1)))
    n = 2 * simulator.CHUNK + 17
    forward = [simulator._path_costs(Q, c, 0, 10.0, s, rng) for s, rng in simulator._chunks(n, 4)]
    backward = [
        simulator._path_costs(Q, c, 0, 10.0, s, rng)
        for s, rng in reversed(list(simulator._chunks(n, 4)))
    ]
    for a, b in zip(forward, reversed(backward)):
        assert np.array_equal(a, b)


def test_average_cost_against_spectral_value(machine):
    pol = DetPolicy((0, 1, 1))
    m = machine.with_lambda(0.25)
    est = estimate_average_cost(m, pol, 0, 400.0, 4000, seed=42)
    assert abs(est.point - policy_value_spectral(m, pol).value) <= 0.02


def test_randomized_policy_uses_averaged_chain(machine):
    pol = RandStationaryPolicy(([0.5, 0.5], [0.5, 0.5], [0.5, 0.5]))
    m = machine.with_lambda(1e-3)
    est = estimate_average_cost(m, pol, 0, 400.0, 4000, seed=42)
    assert abs(est.point - policy_value_risk_neutral(m, pol)) <= 0.02


# --- first-passage estimator ---------------------------------------------------------


def test_first_passage_zero_integrand(passage2):
    m = passage2.with_costs([[0.4], [0.4]])
    est = estimate_first_passage(m, F0, 0.4, 0, 1, 1000, seed=1)
    assert est.point == 0.0 and est.std_error == 0.0


def test_first_passage_ln2(passage2):
    est = estimate_first_passage(passage2, F0, 0.0, 0, 1, 100_000, seed=42)
    assert abs(est.point - math.log(2)) <= 3 * est.std_error
    assert est.censored == 0 and not est.flagged


def test_first_passage_return_to_z(passage2):
    exact = first_passage_value(passage2, F0, 0.0, 0)
    est = estimate_first_passage(passage2, F0, 0.0, 0, 0, 100_000, seed=42)
    assert abs(est.point - exact.h[0]) <= 3 * est.std_error


def test_first_passage_negative_above_max_cost(machine):
    est = estimate_first_passage(machine, DetPolicy((0, 1, 1)), 2.0, 0, 1, 2000, seed=1)
    assert est.point < 0


def test_censoring_is_reported(machine):
    est = estimate_first_passage(machine, DetPolicy((0, 1, 1)), 2.0, 0, 0, 2000, seed=1, max_time=0.5)
    assert est.censored > 0 and est.flagged
