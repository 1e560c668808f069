"""Optimal risk-sensitive average cost and independent ways to check it.

:func:`solve` bisects on the candidate cost ``g`` using the sign of the
optimal first-passage value at the reference state. The smallest ``g`` with
non-positive sign is the optimal average cost, and the corresponding
first-passage values are the relative value function.

The checks are
* :func:`policy_value_spectral`: ``lam * J(f)`` is the Perron eigenvalue of
  ``Q_f + lam * diag(c_f)``;
* :func:`brute_force_optimal`: minimum spectral value over all deterministic
  stationary policies;
* :func:`policy_value_risk_neutral`: stationary-distribution average cost,
  the ``lam -> 0`` limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .first_passage import (
    FirstPassageSolution,
    NotIrreducibleError,
    SolverError,
    membership_in_G,
)
from .model import CtmdpModel, DetPolicy, Policy, all_policies, induced_generator, strongly_connected

DEFAULT_TOL = 1e-10
TIE_TOL = 1e-12
POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000
BRACKET_SLACK = 1e-12
MAX_ENUMERATION = 10**6


class BracketError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class PolicySpaceTooLarge(SolverError):
    pass


@dataclass
class SolveReport:
    g_star: float
    h_star: np.ndarray
    policy: DetPolicy
    residual_op: float
    residual_hz: float
    z: int
    bracket_trace: list[tuple[float, float]] = field(default_factory=list)
    iterations: int = 0

    def to_dict(self, model: CtmdpModel | None = None) -> dict[str, Any]:
        d = {
            "g_star": self.g_star,
            "h_star": self.h_star.tolist(),
            "policy": list(self.policy.choice),
            "residual_op": self.residual_op,
            "residual_hz": self.residual_hz,
            "z": self.z,
            "iterations": self.iterations,
            "bracket_trace": [list(p) for p in self.bracket_trace],
        }
        if model is not None:
            d["z"] = model.states[self.z]
            d["policy"] = self.policy.labels(model)
            d["h_star"] = dict(zip(model.states, self.h_star.tolist()))
        return d


@dataclass
class EvalReport:
    policy: Policy
    value: float
    method: str
    details: dict[str, Any] = field(default_factory=dict)


def _op_terms(model: CtmdpModel, x: np.ndarray) -> list[np.ndarray]:
    lam = model.lam
    return [lam * model.costs[i] * x[i] + model.rates[i] @ x for i in range(model.n_states)]


def _op_scale(model: CtmdpModel, g: float, x: np.ndarray, i: int) -> float:
    lam = model.lam
    per_action = lam * np.abs(model.costs[i]) * x[i] + np.abs(model.rates[i]) @ x
    return max(lam * abs(g) * x[i], float(np.max(per_action)))


def extract_policy(model: CtmdpModel, g: float, h: np.ndarray) -> tuple[DetPolicy, float]:
    """Greedy policy of the average-cost optimality equation at ``(g, h)``.

    Returns the per-state minimizer (lowest index among near-ties) and the
    relative sup-norm gap between ``lam g e^{lam h(i)}`` and the minimum.
    """
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("relative values must be finite")
    lam = model.lam
    # The equation is homogeneous in x, so shifting h is harmless.
    x = np.exp(lam * (h - np.max(h)))
    choice, residual = [], 0.0
    for i, vals in enumerate(_op_terms(model, x)):
        scale = _op_scale(model, g, x, i)
        best = float(np.min(vals))
        choice.append(int(np.flatnonzero(vals <= best + TIE_TOL * scale)[0]))
        if scale > 0:
            residual = max(residual, abs(lam * g * x[i] - best) / scale)
    return DetPolicy(tuple(choice)), residual


def op_slack(model: CtmdpModel, g: float, h: np.ndarray) -> list[np.ndarray]:
    """Per-action slack ``lam c x_i + (Qx)_i - lam g x_i``, scaled per state."""
    lam = model.lam
    x = np.exp(lam * (np.asarray(h) - np.max(h)))
    out = []
    for i, vals in enumerate(_op_terms(model, x)):
        out.append((vals - lam * g * x[i]) / _op_scale(model, g, x, i))
    return out


def solve(model: CtmdpModel, z: int = 0, tol: float = DEFAULT_TOL) -> SolveReport:
    """Optimal risk-sensitive average cost, relative values and policy."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = model.n_states
    lo, hi = model.cost_range
    if n == 1:
        a = int(np.argmin(model.costs[0]))
        return SolveReport(float(model.costs[0][a]), np.zeros(1), DetPolicy((a,)), 0.0, 0.0, 0)
    if lo == hi:
        policy, res = extract_policy(model, lo, np.zeros(n))
        return SolveReport(lo, np.zeros(n), policy, res, 0.0, z)

    sign_hi, sol_hi = membership_in_G(model, hi, z)
    if sign_hi > 0 and not sol_hi.x[z] <= 1.0 + BRACKET_SLACK:
        raise BracketError(f"bracket invalid: g = max c = {hi} is not in G (x_z = {sol_hi.x[z]})")
    sign_lo, sol_lo = membership_in_G(model, lo, z, init=sol_hi.policy)
    trace = [(lo, hi)]
    if sign_lo <= 0:
        # Only possible when the minimum cost rate is attainable forever.
        sol_hi, hi = sol_lo, lo
    iterations = 0
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        sign, sol = membership_in_G(model, mid, z, init=sol_hi.policy)
        iterations += 1
        if sign <= 0:
            hi, sol_hi = mid, sol
        else:
            lo = mid
        trace.append((lo, hi))
    return _finish(model, hi, sol_hi, z, trace, iterations)


def _finish(model, g_star, sol: FirstPassageSolution, z, trace, iterations) -> SolveReport:
    if not sol.finite:
        raise SolverError("first-passage values at the upper bracket end are not finite")
    h_raw = sol.h
    h_star = h_raw - h_raw[z]
    policy, residual = extract_policy(model, g_star, h_star)
    return SolveReport(
        g_star=float(g_star),
        h_star=h_star,
        policy=policy,
        residual_op=residual,
        residual_hz=float(abs(h_raw[z])),
        z=z,
        bracket_trace=trace,
        iterations=iterations,
    )


# --- spectral evaluation --------------------------------------------------


def _shifted(Q: np.ndarray, c: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    s = 1.0 + float(np.max(lam * np.abs(c) + np.abs(np.diag(Q))))
    return Q + np.diag(lam * c + s), s


def perron_batch(mats: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Perron roots of a stack of primitive nonnegative matrices by power iteration.

    Stops per matrix once the Collatz-Wielandt bracket
    ``min_i (Av)_i / v_i <= rho <= max_i (Av)_i / v_i`` is narrower than
    ``tol * rho``. Returns ``(rho, vectors, iterations)``.
    """
    mats = np.asarray(mats, dtype=float)
    P, n, _ = mats.shape
    v = np.ones((P, n))
    rho = np.full(P, np.nan)
    its = np.zeros(P, dtype=int)
    active = np.arange(P)
    for k in range(1, max_iter + 1):
        w = np.einsum("pij,pj->pi", mats[active], v[active])
        ratios = w / v[active]
        lo, hi = ratios.min(axis=1), ratios.max(axis=1)
        v[active] = w / w.max(axis=1, keepdims=True)
        done = hi - lo <= tol * hi
        rho[active[done]] = 0.5 * (lo[done] + hi[done])
        its[active[done]] = k
        active = active[~done]
        if active.size == 0:
            break
    if active.size:
        raise ConvergenceError("power iteration did not converge")
    return rho, v / v.sum(axis=1, keepdims=True), its


def policy_value_spectral(model: CtmdpModel, f: Policy) -> EvalReport:
    """Risk-sensitive average cost of a stationary policy from its Perron root."""
    Q, c = induced_generator(model, f)
    if not strongly_connected(Q):
        raise NotIrreducibleError("policy not irreducible")
    A, s = _shifted(Q, c, model.lam)
    rho, vec, its = perron_batch(A[None])
    value = (rho[0] - s) / model.lam
    return EvalReport(f, float(value), "spectral", {"iterations": int(its[0]), "shift": s, "eigenvector": vec[0].tolist()})


@dataclass
class BruteForceResult:
    policy: DetPolicy
    value: float
    evaluated: int
    skipped: list[str] = field(default_factory=list)


def brute_force_optimal(model: CtmdpModel, max_policies: int = MAX_ENUMERATION, chunk: int = 4096) -> BruteForceResult:
    """Minimum spectral value over every irreducible deterministic policy.

    Ties go to the lexicographically smallest policy, so the answer does not
    depend on evaluation order.
    """
    if model.n_policies > max_policies:
        raise PolicySpaceTooLarge(f"policy space too large ({model.n_policies} > {max_policies})")
    lam = model.lam
    best_val, best_pol = math.inf, None
    skipped: list[str] = []
    evaluated = 0
    batch: list[tuple[DetPolicy, np.ndarray, float]] = []

    def flush():
        nonlocal best_val, best_pol
        if not batch:
            return
        rho, _, _ = perron_batch(np.stack([b[1] for b in batch]))
        for (pol, _, s), r in zip(batch, rho):
            val = (r - s) / lam
            # Strict improvement only: enumeration order is lexicographic.
            if val < best_val - TIE_TOL * max(1.0, abs(best_val)) or best_pol is None:
                best_val, best_pol = val, pol
        batch.clear()

    for pol in all_policies(model):
        Q, c = induced_generator(model, pol)
        if not strongly_connected(Q):
            skipped.append(f"policy {list(pol.choice)} skipped: not irreducible")
            continue
        A, s = _shifted(Q, c, lam)
        batch.append((pol, A, s))
        evaluated += 1
        if len(batch) >= chunk:
            flush()
    flush()
    if best_pol is None:
        raise NotIrreducibleError("no irreducible deterministic policy")
    return BruteForceResult(best_pol, float(best_val), evaluated, skipped)


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    n = Q.shape[0]
    A = np.vstack([Q.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def policy_value_risk_neutral(model: CtmdpModel, f: Policy) -> float:
    Q, c = induced_generator(model, f)
    if not strongly_connected(Q):
        raise NotIrreducibleError("policy not irreducible")
    return float(stationary_distribution(Q) @ c)
