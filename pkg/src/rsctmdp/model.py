"""Finite-state CTMDP instances, policies and the generators they induce.

A model stores, for every state ``i`` and admissible action ``a``, a row of
transition rates ``rates[i][a, j]`` and a cost rate ``costs[i][a]``. Action
sets may differ in size between states, so both are kept as per-state arrays
rather than one padded tensor.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
LOAD_ROW_SUM_TOL = 1e-9
PROB_ROW_TOL = 1e-12
OVERFLOW_WARN = 200.0


class ModelError(ValueError):
    """Raised when a model document cannot be turned into a valid model."""


class PolicyError(ValueError):
    """Raised when a policy does not fit the model it is applied to."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CtmdpModel:
    states: tuple[str, ...]
    actions: tuple[tuple[str, ...], ...]
    rates: tuple[np.ndarray, ...]  # rates[i] has shape (m_i, n)
    costs: tuple[np.ndarray, ...]  # costs[i] has shape (m_i,)
    lam: float

    @classmethod
    def from_arrays(
        cls,
        rates: Sequence[Any],
        costs: Sequence[Any],
        lam: float,
        states: Sequence[str] | None = None,
        actions: Sequence[Sequence[str]] | None = None,
    ) -> "CtmdpModel":
        n = len(rates)
        if states is None:
            states = [str(i) for i in range(n)]
        if actions is None:
            actions = [[f"a{k}" for k in range(len(rates[i]))] for i in range(n)]
        return cls(
            states=tuple(states),
            actions=tuple(tuple(a) for a in actions),
            rates=tuple(_frozen(np.atleast_2d(r)) for r in rates),
            costs=tuple(_frozen(np.atleast_1d(c)) for c in costs),
            lam=float(lam),
        )

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.actions)

    @property
    def n_policies(self) -> int:
        return int(np.prod([len(a) for a in self.actions], dtype=object))

    @property
    def cost_range(self) -> tuple[float, float]:
        flat = np.concatenate(self.costs)
        return float(flat.min()), float(flat.max())

    def state_index(self, label: str | int) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < self.n_states:
                raise IndexError(f"state index {label} out of range")
            return int(label)
        try:
            return self.states.index(label)
        except ValueError:
            raise KeyError(f"unknown state label {label!r}") from None

    def with_lambda(self, lam: float) -> "CtmdpModel":
        return replace(self, lam=float(lam))

    def with_costs(self, costs: Sequence[Any]) -> "CtmdpModel":
        return replace(self, costs=tuple(_frozen(np.atleast_1d(c)) for c in costs))

    def shift_costs(self, kappa: float) -> "CtmdpModel":
        return self.with_costs([c + kappa for c in self.costs])


@dataclass(frozen=True)
class DetPolicy:
    choice: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(a) for a in self.choice))

    def labels(self, model: CtmdpModel) -> dict[str, str]:
        return {model.states[i]: model.actions[i][a] for i, a in enumerate(self.choice)}


@dataclass(frozen=True)
class RandStationaryPolicy:
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        for i, w in enumerate(self.weights):
            if np.any(w < 0) or abs(w.sum() - 1.0) > PROB_ROW_TOL:
                raise PolicyError(f"weights of state {i} are not a probability vector")

    @classmethod
    def from_deterministic(cls, model: CtmdpModel, policy: DetPolicy) -> "RandStationaryPolicy":
        rows = []
        for i, a in enumerate(policy.choice):
            w = np.zeros(len(model.actions[i]))
            w[a] = 1.0
            rows.append(w)
        return cls(tuple(rows))


Policy = Union[DetPolicy, RandStationaryPolicy]


@dataclass(frozen=True)
class Violation:
    rule: str
    location: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule: str, location: str, message: str) -> None:
        self.violations.append(Violation(rule, location, message))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"rule": v.rule, "location": v.location, "message": v.message}
                for v in self.violations
            ],
        }


def validate_model(model: CtmdpModel) -> ValidationReport:
    """Check the structural assumptions the solver relies on.

    Violations are returned as data. Union-graph strong connectivity is a
    necessary condition for every deterministic policy being irreducible;
    the exact per-policy condition is checked when a policy is evaluated.
    """
    report = ValidationReport()
    n = model.n_states
    if n < 1:
        report.add("empty", "states", "model has no states")
        return report
    if len(model.actions) != n or len(model.rates) != n or len(model.costs) != n:
        report.add("shape", "model", "states, actions, rates and costs disagree in length")
        return report
    if not (np.isfinite(model.lam) and model.lam > 0):
        report.add("lambda", "lambda", f"risk coefficient must be positive, got {model.lam}")

    union = np.zeros((n, n), dtype=bool)
    for i in range(n):
        m = len(model.actions[i])
        loc = f"state {model.states[i]!r}"
        if m == 0:
            report.add("empty_actions", loc, "no admissible actions")
            continue
        r, c = model.rates[i], model.costs[i]
        if r.shape != (m, n) or c.shape != (m,):
            report.add("shape", loc, f"rates {r.shape} / costs {c.shape} do not match {m} actions, {n} states")
            continue
        for a in range(m):
            aloc = f"{loc}, action {model.actions[i][a]!r}"
            row = r[a]
            if not np.all(np.isfinite(row)) or not np.isfinite(c[a]):
                report.add("nonfinite", aloc, "non-finite rate or cost")
                continue
            off = np.delete(row, i)
            if np.any(off < 0):
                report.add("sign", aloc, "negative off-diagonal rate")
            s = row.sum()
            if abs(s) > ROW_SUM_TOL:
                report.add("row_sum", aloc, f"row sum = {s:.3g} != 0")
            if n >= 2 and not row[i] < 0:
                report.add("absorbing", aloc, "absorbing action (zero exit rate)")
            union[i] |= row > 0
    if report.ok and n >= 2:
        np.fill_diagonal(union, False)
        k, _ = connected_components(union, directed=True, connection="strong")
        if k != 1:
            report.add("connectivity", "model", "union support graph is not strongly connected")
    return report


def _check_policy(model: CtmdpModel, policy: Policy) -> None:
    n = model.n_states
    if isinstance(policy, DetPolicy):
        if len(policy.choice) != n or any(
            not 0 <= a < len(model.actions[i]) for i, a in enumerate(policy.choice)
        ):
            raise PolicyError("policy incompatible with model")
    elif isinstance(policy, RandStationaryPolicy):
        if len(policy.weights) != n or any(
            w.shape != (len(model.actions[i]),) for i, w in enumerate(policy.weights)
        ):
            raise PolicyError("policy incompatible with model")
    else:
        raise PolicyError(f"unsupported policy type {type(policy).__name__}")


def induced_generator(model: CtmdpModel, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Generator matrix and cost-rate vector of the chain run under ``policy``.

    Randomized rows are the action-weighted averages of the rate rows and
    cost rates.
    """
    _check_policy(model, policy)
    n = model.n_states
    Q = np.empty((n, n))
    c = np.empty(n)
    if isinstance(policy, DetPolicy):
        for i, a in enumerate(policy.choice):
            Q[i] = model.rates[i][a]
            c[i] = model.costs[i][a]
    else:
        for i, w in enumerate(policy.weights):
            Q[i] = w @ model.rates[i]
            c[i] = w @ model.costs[i]
            # Re-center so rows sum to zero despite the averaging round-off.
            Q[i, i] = -(Q[i].sum() - Q[i, i])
    return Q, c


def reachability(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a boolean adjacency matrix."""
    n = adj.shape[0]
    reach = adj.astype(bool) | np.eye(n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(max(n, 2)))))):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    return reach


def strongly_connected(Q: np.ndarray) -> bool:
    n = Q.shape[0]
    if n == 1:
        return True
    adj = Q > 0
    np.fill_diagonal(adj, False)
    if n > 64:
        k, _ = connected_components(adj, directed=True, connection="strong")
        return k == 1
    return bool(reachability(adj).all())


def irreducible_under(model: CtmdpModel, policy: Policy) -> bool:
    Q, _ = induced_generator(model, policy)
    return strongly_connected(Q)


def all_policies(model: CtmdpModel) -> Iterable[DetPolicy]:
    """Every deterministic stationary policy, in lexicographic order."""
    import itertools

    for choice in itertools.product(*(range(len(a)) for a in model.actions)):
        yield DetPolicy(choice)


# --- JSON model / policy files -------------------------------------------


def parse_model(doc: dict) -> tuple[CtmdpModel, list[str]]:
    """Build a model from a decoded JSON document.

    Rows whose sum is off by more than ``ROW_SUM_TOL`` but at most
    ``LOAD_ROW_SUM_TOL`` are re-centered on the diagonal and a warning is
    recorded; larger defects are left for :func:`validate_model` to report.
    """
    warnings: list[str] = []
    try:
        states = [str(s) for s in doc["states"]]
        actions = [[str(a) for a in acts] for acts in doc["actions"]]
        rates_raw = doc["rates"]
        costs_raw = doc["costs"]
        lam = float(doc["lambda"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model document: {exc}") from exc
    n = len(states)
    if len(set(states)) != n:
        raise ModelError("duplicate state labels")
    if not (len(actions) == len(rates_raw) == len(costs_raw) == n):
        raise ModelError("states, actions, rates and costs must have the same length")
    rates, costs = [], []
    for i in range(n):
        try:
            r = np.array(rates_raw[i], dtype=float).reshape(len(actions[i]), n)
            c = np.array(costs_raw[i], dtype=float).reshape(len(actions[i]))
        except (TypeError, ValueError) as exc:
            raise ModelError(f"state {states[i]!r}: {exc}") from exc
        for a in range(len(actions[i])):
            s = r[a].sum()
            # Defects within ROW_SUM_TOL already validate; leaving them keeps
            # serialization round trips bit-exact.
            if ROW_SUM_TOL < abs(s) <= LOAD_ROW_SUM_TOL:
                r[a, i] -= s
                warnings.append(
                    f"state {states[i]!r}, action {actions[i][a]!r}: row sum {s:.3g} re-centered"
                )
        rates.append(r)
        costs.append(c)
    model = CtmdpModel.from_arrays(rates, costs, lam, states, actions)
    flat = np.concatenate(model.costs) if n else np.zeros(0)
    if flat.size and lam * np.max(np.abs(flat)) > OVERFLOW_WARN:
        warnings.append(
            f"lambda*max|c| = {lam * np.max(np.abs(flat)):.3g} > {OVERFLOW_WARN}; "
            "exponential values may overflow"
        )
    for w in warnings:
        logger.warning(w)
    return model, warnings


def serialize_model(model: CtmdpModel) -> dict:
    return {
        "states": list(model.states),
        "actions": [list(a) for a in model.actions],
        "rates": [r.tolist() for r in model.rates],
        "costs": [c.tolist() for c in model.costs],
        "lambda": model.lam,
    }


def load_model(path: str | Path) -> tuple[CtmdpModel, list[str]]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelError(f"{path}: top-level JSON value must be an object")
    return parse_model(doc)


def save_model(model: CtmdpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize_model(model), indent=2), encoding="utf-8")


def parse_policy(model: CtmdpModel, doc: dict) -> Policy:
    """Policy from a ``{state: action}`` or ``{state: {action: weight}}`` map."""
    if not isinstance(doc, dict) or set(doc) != set(model.states):
        raise PolicyError("policy must map every state label to an action")
    values = [doc[s] for s in model.states]
    if all(isinstance(v, str) for v in values):
        choice = []
        for i, v in enumerate(values):
            if v not in model.actions[i]:
                raise PolicyError(f"unknown action {v!r} in state {model.states[i]!r}")
            choice.append(model.actions[i].index(v))
        return DetPolicy(tuple(choice))
    if all(isinstance(v, dict) for v in values):
        rows = []
        for i, v in enumerate(values):
            w = np.zeros(len(model.actions[i]))
            for label, p in v.items():
                if label not in model.actions[i]:
                    raise PolicyError(f"unknown action {label!r} in state {model.states[i]!r}")
                w[model.actions[i].index(label)] = float(p)
            rows.append(w)
        return RandStationaryPolicy(tuple(rows))
    raise PolicyError("policy entries must be all action labels or all weight maps")


def serialize_policy(model: CtmdpModel, policy: Policy) -> dict:
    if isinstance(policy, DetPolicy):
        return policy.labels(model)
    return {
        model.states[i]: {model.actions[i][a]: float(p) for a, p in enumerate(w)}
        for i, w in enumerate(policy.weights)
    }


def random_model(
    rng: np.random.Generator,
    n_states: int,
    n_actions: Sequence[int] | int,
    lam: float = 1.0,
    rate_range: tuple[float, float] = (0.1, 2.0),
    cost_range: tuple[float, float] = (-1.0, 1.0),
) -> CtmdpModel:
    """Random instance with every off-diagonal rate drawn from ``rate_range``.

    Full off-diagonal support makes every deterministic policy irreducible.
    """
    if isinstance(n_actions, int):
        n_actions = [n_actions] * n_states
    rates, costs = [], []
    for i in range(n_states):
        m = n_actions[i]
        r = rng.uniform(*rate_range, size=(m, n_states))
        r[:, i] = 0.0
        r[:, i] = -r.sum(axis=1)
        rates.append(r)
        costs.append(rng.uniform(*cost_range, size=m))
    return CtmdpModel.from_arrays(rates, costs, lam)
