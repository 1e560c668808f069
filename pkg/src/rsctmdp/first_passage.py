"""Risk-sensitive first-passage values for a candidate average cost ``g``.

For a reference state ``z`` and a deterministic policy ``f`` the quantity of
interest is

    x(i) = E_i^f[ exp(lam * int_0^{tau_z} (c(xi_t, f) - g) dt) ],

with ``tau_z`` the first time at or after the first jump that the chain sits
in ``z``. Conditioning on the first jump gives, for ``i != z``,

    x(i) = Q(i) * (q(z|i) + sum_{j not in {i, z}} x(j) q(j|i)),

and for ``z`` the same expression without the ``q(z|i)`` term, where
``Q(i) = int_0^inf exp((lam (c(i) - g) + q(i|i)) s) ds``. All arithmetic is
done on ``x``; the relative value ``h = log(x) / lam`` is derived from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import CtmdpModel, DetPolicy, induced_generator, reachability, strongly_connected

RESIDUAL_TOL = 1e-8
PI_REL_TOL = 1e-12
MAX_POLICY_UPDATES = 1000
VI_MAX_SWEEPS = 20000
VI_BLOWUP = 1e250


class SolverError(RuntimeError):
    """Numerical failure that should be surfaced rather than hidden."""


class NotIrreducibleError(SolverError):
    pass


class IllConditionedError(SolverError):
    pass


class IterationLimitError(SolverError):
    pass


def ext_mul(a: float, b: float) -> float:
    """Product on [0, inf] with the convention 0 * inf = 0."""
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


@dataclass(frozen=True)
class QFactor:
    value: float
    finite: bool


def _q_value(lam: float, cost: float, diag: float, g: float) -> float:
    rate = lam * g - lam * cost - diag
    return 1.0 / rate if rate > 0 else math.inf


def q_factor(model: CtmdpModel, i: int, a: int, g: float) -> QFactor:
    """Closed form of the holding-time integral for state ``i``, action ``a``."""
    v = _q_value(model.lam, float(model.costs[i][a]), float(model.rates[i][a, i]), g)
    return QFactor(v, math.isfinite(v))


@dataclass
class FirstPassageSolution:
    g: float
    z: int
    x: np.ndarray
    h: np.ndarray
    policy: DetPolicy | None
    finite: bool
    iterations: int = 0
    # True when x only holds value-iteration lower bounds (early exit).
    lower_bound: bool = False

    @property
    def divergent(self) -> np.ndarray:
        return ~np.isfinite(self.x)


def _h_from_x(x: np.ndarray, lam: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x) / lam


def _divergent_states(Q: np.ndarray, qf: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Boolean mask over ``others`` of coordinates whose passage value is infinite.

    A coordinate diverges when, avoiding ``z``, it can reach a state with an
    infinite holding integral or a strongly connected block whose weighted
    jump matrix has spectral radius at least one.
    """
    sub = Q[np.ix_(others, others)]
    adj = sub > 0
    np.fill_diagonal(adj, False)
    reach = reachability(adj)
    seed = ~np.isfinite(qf[others])
    mutual = reach & reach.T
    seen = np.zeros(len(others), dtype=bool)
    for i in range(len(others)):
        if seen[i]:
            continue
        block = np.flatnonzero(mutual[i])
        seen[block] = True
        if block.size < 2 or np.any(seed[block]):
            continue
        B = qf[others][block, None] * sub[np.ix_(block, block)]
        np.fill_diagonal(B, 0.0)
        if np.max(np.abs(np.linalg.eigvals(B))) >= 1.0:
            seed[block] = True
    # Everything that can reach a seed diverges too.
    return (reach & seed[None, :]).any(axis=1)


def _evaluate(model: CtmdpModel, f: DetPolicy, g: float, z: int) -> np.ndarray:
    """Minimal nonnegative solution of the first-passage system, as x-vector."""
    lam = model.lam
    Q, c = induced_generator(model, f)
    n = Q.shape[0]
    qf = np.array([_q_value(lam, c[i], Q[i, i], g) for i in range(n)])
    others = np.array([i for i in range(n) if i != z], dtype=int)
    x = np.full(n, math.inf)

    bad = _divergent_states(Q, qf, others)
    fin = others[~bad]
    if fin.size:
        # (lam g - lam c(i) - q(i|i)) x_i - sum_{j != i, z} q(j|i) x_j = q(z|i)
        A = -Q[np.ix_(fin, fin)]
        A[np.diag_indices_from(A)] = lam * g - lam * c[fin] - Q[fin, fin]
        b = Q[fin, z].copy()
        try:
            lu = scipy.linalg.lu_factor(A, check_finite=True)
            sol = scipy.linalg.lu_solve(lu, b)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise IllConditionedError(f"ill-conditioned system: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            x[others] = math.inf
        else:
            denom = np.linalg.norm(A, np.inf) * np.linalg.norm(sol, np.inf) + np.linalg.norm(b, np.inf)
            rel = np.linalg.norm(A @ sol - b, np.inf) / denom if denom > 0 else 0.0
            if rel > RESIDUAL_TOL:
                raise IllConditionedError(f"ill-conditioned system: relative residual {rel:.3g}")
            if np.any(sol <= 0):
                x[others] = math.inf
            else:
                x[fin] = sol

    if math.isfinite(qf[z]):
        s = 0.0
        for j in others:
            s += ext_mul(Q[z, j], x[j])
        x[z] = ext_mul(qf[z], s)
    return x


def first_passage_value(model: CtmdpModel, f: DetPolicy, g: float, z: int) -> FirstPassageSolution:
    """Exact first-passage values of a fixed irreducible policy."""
    if model.n_states < 2:
        raise ValueError("first-passage values need at least two states")
    Q, _ = induced_generator(model, f)
    if not strongly_connected(Q):
        raise NotIrreducibleError("policy not irreducible")
    x = _evaluate(model, f, g, z)
    return FirstPassageSolution(
        g=g, z=z, x=x, h=_h_from_x(x, model.lam), policy=f, finite=bool(np.all(np.isfinite(x)))
    )


def action_values(model: CtmdpModel, x: np.ndarray, g: float, z: int) -> list[np.ndarray]:
    """Right-hand side of the optimal first-passage equation, per state and action.

    ``x[z]`` is never read: reaching ``z`` ends the passage with factor one.
    """
    lam = model.lam
    n = model.n_states
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(n):
        r, costs = model.rates[i], model.costs[i]
        mask = np.ones(n, dtype=bool)
        mask[[i, z]] = False
        inf = mask & ~np.isfinite(x)
        fin = mask & ~inf
        mult = r[:, fin] @ x[fin]
        if i != z:
            mult = mult + r[:, z]
        # 0 * inf = 0: only positive rates into divergent states propagate.
        mult[np.any(r[:, inf] > 0, axis=1)] = math.inf
        rate = lam * g - lam * costs - r[:, i]
        with np.errstate(divide="ignore"):
            qv = np.where(rate > 0, 1.0 / np.where(rate > 0, rate, 1.0), math.inf)
        with np.errstate(invalid="ignore"):
            vals = np.where((qv == 0) | (mult == 0), 0.0, qv * mult)
        out.append(vals)
    return out


def _greedy(vals: list[np.ndarray], current: tuple[int, ...] | None = None) -> tuple[int, ...]:
    """Per-state argmin, lowest index on ties; keeps ``current`` unless strictly beaten."""
    choice = []
    for i, v in enumerate(vals):
        best = float(np.min(v))
        if current is not None and v[current[i]] <= best * (1 + PI_REL_TOL):
            choice.append(current[i])
            continue
        if math.isinf(best):
            choice.append(current[i] if current is not None else 0)
            continue
        choice.append(int(np.flatnonzero(v <= best * (1 + PI_REL_TOL))[0]))
    return tuple(choice)


def _seed_by_value_iteration(
    model: CtmdpModel, g: float, z: int, stop_above: float | None = None
) -> tuple[DetPolicy | None, np.ndarray | None]:
    """Find a policy with finite passage values off ``z`` by value iteration.

    Iterating the optimal passage operator from zero increases monotonically
    to the optimal values, so every iterate is a lower bound. Greedy policies
    of the iterates are tried periodically. Returns ``(policy, None)`` on
    success, ``(None, None)`` when the optimal values are infinite, and
    ``(None, lower)`` when the lower bound at ``z`` already exceeds
    ``stop_above``.
    """
    n = model.n_states
    x = np.zeros(n)
    others = [i for i in range(n) if i != z]
    check = 8
    for sweep in range(1, VI_MAX_SWEEPS + 1):
        vals = action_values(model, x, g, z)
        new = np.array([np.min(v) for v in vals])
        if not np.all(np.isfinite(new[others])) or np.max(new[others]) > VI_BLOWUP:
            return None, None
        if stop_above is not None and new[z] > stop_above:
            return None, new
        converged = np.max(np.abs(new[others] - x[others])) <= 1e-14 * np.max(new[others])
        x = new
        if converged or sweep == check:
            f = DetPolicy(_greedy(vals))
            cand = _evaluate(model, f, g, z)
            if np.all(np.isfinite(cand[others])):
                return f, None
            if converged:
                return None, None
            check *= 2
    return None, None


def optimal_first_passage(
    model: CtmdpModel,
    g: float,
    z: int,
    init: DetPolicy | None = None,
    max_updates: int = MAX_POLICY_UPDATES,
    stop_above: float | None = None,
) -> FirstPassageSolution:
    """Optimal first-passage values and a minimizing policy by policy iteration.

    Starts from ``init`` or the cheapest action per state. If that policy has
    infinite values away from ``z``, a finite starting policy is sought by
    value iteration; if none exists the result has ``finite=False``. With
    ``stop_above`` set, the search may stop as soon as the value at ``z`` is
    certified to exceed it; the result then has ``lower_bound=True`` and
    holds lower bounds only.
    """
    if model.n_states < 2:
        raise ValueError("first-passage values need at least two states")
    others = [i for i in range(model.n_states) if i != z]
    if init is None:
        init = DetPolicy(tuple(int(np.argmin(c)) for c in model.costs))
    f = init
    sol = first_passage_value(model, f, g, z)
    if not np.all(np.isfinite(sol.x[others])):
        if model.n_policies == 1:
            return sol
        seeded, lower = _seed_by_value_iteration(model, g, z, stop_above)
        if seeded is None:
            if lower is not None:
                return FirstPassageSolution(
                    g, z, lower, _h_from_x(lower, model.lam), None, False, lower_bound=True
                )
            return sol
        f = seeded
        sol = first_passage_value(model, f, g, z)

    updates = 0
    while True:
        vals = action_values(model, sol.x, g, z)
        nxt = DetPolicy(_greedy(vals, f.choice))
        if nxt == f:
            break
        updates += 1
        if updates > max_updates:
            raise IterationLimitError(f"iteration limit exceeded ({max_updates} policy updates)")
        new = first_passage_value(model, nxt, g, z)
        scale = np.max(np.abs(sol.x[others]))
        change = np.max(np.abs(new.x[others] - sol.x[others]))
        f, sol = nxt, new
        if change < PI_REL_TOL * scale:
            break
    sol.policy = f
    sol.iterations = updates
    return sol


def membership_in_G(model: CtmdpModel, g: float, z: int, init: DetPolicy | None = None):
    """Sign of the optimal first-passage value at ``z``: -1, 0 or +1.

    ``g`` belongs to G exactly when the sign is not positive. Infinite values
    classify as positive, and so do certified lower bounds above one.
    """
    sol = optimal_first_passage(model, g, z, init=init, stop_above=1.0)
    xz = sol.x[z]
    sign = 1 if xz > 1.0 else (0 if xz == 1.0 else -1)
    return sign, sol


def passage_residual(model: CtmdpModel, sol: FirstPassageSolution, optimal: bool) -> float:
    """Relative sup-norm defect of the (fixed-policy or optimal) passage equations."""
    if optimal:
        vals = action_values(model, sol.x, sol.g, sol.z)
        rhs = np.array([np.min(v) for v in vals])
    else:
        Q, c = induced_generator(model, sol.policy)
        rhs = np.empty(model.n_states)
        for i in range(model.n_states):
            qv = _q_value(model.lam, c[i], Q[i, i], sol.g)
            mult = Q[i, sol.z] if i != sol.z else 0.0
            mult += sum(Q[i, j] * sol.x[j] for j in range(model.n_states) if j not in (i, sol.z))
            rhs[i] = qv * mult
    return float(np.max(np.abs(rhs - sol.x) / np.abs(sol.x)))
