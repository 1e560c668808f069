"""Seeded simulation of the controlled chain and Monte Carlo estimators.

Randomized stationary policies are simulated through their averaged
generator and averaged cost rate, which gives the same law for the state
process and the same cost integrand as sampling actions.

The estimators advance a whole chunk of trajectories in lockstep with numpy.
Chunk ``k`` draws from ``SeedSequence(seed).spawn(...)[k]``, so results depend
only on ``(seed, n)`` and never on how chunks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .first_passage import NotIrreducibleError
from .model import CtmdpModel, DetPolicy, Policy, induced_generator, strongly_connected

CHUNK = 4096
CENSOR_FLAG_FRACTION = 1e-3
MAX_TIME_FACTOR = 1e6


@dataclass
class Trajectory:
    initial_state: int
    jump_times: np.ndarray
    states: np.ndarray  # states[k] is occupied on [T_k, T_{k+1}), T_0 = 0
    horizon: float
    cost_rates: np.ndarray

    def cost_integral(self, T: float | None = None) -> float:
        """Accumulated cost on ``[0, T]``, summed exactly piece by piece."""
        T = self.horizon if T is None else T
        if T > self.horizon:
            raise ValueError("query beyond the simulated horizon")
        edges = np.concatenate(([0.0], self.jump_times[self.jump_times < T], [T]))
        occ = self.states[: len(edges) - 1]
        return float(np.sum(self.cost_rates[occ] * np.diff(edges)))

    def tau(self, z: int) -> float | None:
        """First time at or after the first jump that the chain is in ``z``."""
        hits = np.flatnonzero(self.states[1:] == z)
        return float(self.jump_times[hits[0]]) if hits.size else None

    def holding_times(self) -> np.ndarray:
        """Completed sojourn lengths, aligned with ``states[:-1]``."""
        return np.diff(np.concatenate(([0.0], self.jump_times)))


@dataclass
class McEstimate:
    point: float
    std_error: float
    n_trajectories: int
    horizon: float
    seed: int
    censored: int = 0
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "std_error": self.std_error,
            "n_trajectories": self.n_trajectories,
            "horizon": self.horizon,
            "seed": self.seed,
            "censored": self.censored,
            "flagged": self.flagged,
        }


def _jump_tables(Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    exit_rate = -np.diag(Q)
    P = Q / exit_rate[:, None]
    np.fill_diagonal(P, 0.0)
    cum = np.cumsum(P, axis=1)
    for i in range(Q.shape[0]):
        # Guards against u landing past a row that sums to slightly below one.
        last = np.flatnonzero(P[i] > 0)
        if last.size:
            cum[i, last[-1]:] = np.inf
    return exit_rate, cum


def simulate_trajectory(
    model: CtmdpModel, policy: Policy, i0: int, horizon: float, seed: int
) -> Trajectory:
    """Gillespie simulation of one path on ``[0, horizon]``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    Q, c = induced_generator(model, policy)
    exit_rate, cum = _jump_tables(Q)
    rng = np.random.default_rng(seed)
    t, i = 0.0, int(i0)
    times, states = [], [i]
    if model.n_states == 1:
        return Trajectory(i, np.zeros(0), np.array(states), horizon, c)
    while True:
        t += rng.exponential(1.0 / exit_rate[i])
        if t >= horizon:
            break
        i = int(np.searchsorted(cum[i], rng.random(), side="right"))
        times.append(t)
        states.append(i)
    return Trajectory(int(i0), np.array(times), np.array(states), horizon, c)


def _chunks(n: int, seed: int):
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    for size, ss in zip(sizes, children):
        yield size, np.random.default_rng(ss)


def _path_costs(Q, rates, i0, horizon, size, rng) -> np.ndarray:
    """Integral of ``rates[state]`` over ``[0, horizon]`` for ``size`` paths."""
    exit_rate, cum = _jump_tables(Q)
    n = Q.shape[0]
    state = np.full(size, i0)
    t = np.zeros(size)
    acc = np.zeros(size)
    if n == 1:
        return rates[0] * horizon + acc
    active = np.arange(size)
    while active.size:
        s = state[active]
        hold = rng.exponential(1.0, size=active.size) / exit_rate[s]
        dt = np.minimum(hold, horizon - t[active])
        acc[active] += rates[s] * dt
        t[active] += hold
        alive = t[active] < horizon
        active = active[alive]
        u = rng.random(active.size)
        row = cum[state[active]]
        state[active] = (row <= u[:, None]).sum(axis=1)
    return acc


def _log_mean_exp(values: np.ndarray, lam: float) -> tuple[float, float]:
    """``log(mean(exp(lam v)))`` and its delta-method standard error."""
    m = float(np.max(values))
    w = np.exp(lam * (values - m))
    mean = float(np.mean(w))
    sd = float(np.std(w, ddof=1)) if w.size > 1 else 0.0
    return lam * m + math.log(mean), sd / (math.sqrt(w.size) * mean)


def estimate_average_cost(
    model: CtmdpModel, policy: Policy, i0: int, horizon: float, n: int, seed: int
) -> McEstimate:
    """Finite-horizon estimate of the risk-sensitive average cost.

    ``point = log(mean(exp(lam C_k))) / (lam T)`` over ``n`` paths with cost
    integrals ``C_k``. Costs are accumulated relative to the smallest cost
    rate, so a constant cost reproduces itself exactly.
    """
    if n < 2 or not horizon > 0:
        raise ValueError("need n >= 2 and a positive horizon")
    Q, c = induced_generator(model, policy)
    base = float(np.min(c))
    parts = [_path_costs(Q, c - base, i0, horizon, size, rng) for size, rng in _chunks(n, seed)]
    lme, se = _log_mean_exp(np.concatenate(parts), model.lam)
    scale = model.lam * horizon
    return McEstimate(base + lme / scale, se / scale, n, horizon, seed)


def _passage_costs(Q, rates, z, i0, max_time, size, rng):
    """Integral of ``rates`` up to ``tau_z`` and a censoring mask."""
    exit_rate, cum = _jump_tables(Q)
    state = np.full(size, i0)
    t = np.zeros(size)
    acc = np.zeros(size)
    done = np.zeros(size, dtype=bool)
    active = np.arange(size)
    while active.size:
        s = state[active]
        hold = rng.exponential(1.0, size=active.size) / exit_rate[s]
        acc[active] += rates[s] * hold
        t[active] += hold
        u = rng.random(active.size)
        nxt = (cum[s] <= u[:, None]).sum(axis=1)
        state[active] = nxt
        hit = nxt == z
        done[active[hit]] = True
        active = active[~hit & (t[active] <= max_time)]
    return acc, ~done


def estimate_first_passage(
    model: CtmdpModel,
    f: DetPolicy,
    g: float,
    z: int,
    i0: int,
    n: int,
    seed: int,
    max_time: float | None = None,
) -> McEstimate:
    """Monte Carlo estimate of the first-passage value ``h_g(i0, f)``.

    Paths still running after ``max_time`` are dropped and counted; the
    estimate is flagged when more than 0.1% of paths are censored. The
    ``horizon`` field of the result records ``max_time``.
    """
    Q, c = induced_generator(model, f)
    if not strongly_connected(Q):
        raise NotIrreducibleError("policy not irreducible")
    if max_time is None:
        max_time = MAX_TIME_FACTOR * float(np.max(1.0 / -np.diag(Q)))
    vals, cens = [], []
    for size, rng in _chunks(n, seed):
        acc, censored = _passage_costs(Q, c - g, z, i0, max_time, size, rng)
        vals.append(acc)
        cens.append(censored)
    vals = np.concatenate(vals)
    cens = np.concatenate(cens)
    kept = vals[~cens]
    n_cens = int(cens.sum())
    if kept.size < 2:
        return McEstimate(math.nan, math.nan, n, max_time, seed, n_cens, True)
    lme, se = _log_mean_exp(kept, model.lam)
    return McEstimate(
        lme / model.lam, se / model.lam, n, max_time, seed, n_cens, n_cens > CENSOR_FLAG_FRACTION * n
    )
