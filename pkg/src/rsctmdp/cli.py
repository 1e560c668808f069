"""Command-line entry point.

Every invocation prints one JSON report on stdout, also on failure, and
logs human-readable messages on stderr. Exit codes: 0 success, 2 invalid
model, 3 solver error, 4 bad arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .average_solver import (
    DEFAULT_TOL,
    brute_force_optimal,
    policy_value_risk_neutral,
    policy_value_spectral,
    solve,
)
from .first_passage import SolverError
from .model import (
    CtmdpModel,
    ModelError,
    PolicyError,
    load_model,
    parse_policy,
    serialize_policy,
    validate_model,
)
from .simulator import estimate_average_cost, estimate_first_passage

log = logging.getLogger("rsctmdp")

SCHEMA_VERSION = "1.0"
COMMANDS = ("validate", "solve", "eval", "simulate", "brute", "sweep")
EXIT_OK, EXIT_MODEL, EXIT_SOLVER, EXIT_ARGS = 0, 2, 3, 4

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "command", "config", "ok", "exit_code", "results", "warnings", "error", "wall_time"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"type": ["string", "null"]},
        "config": {"type": "object"},
        "ok": {"type": "boolean"},
        "exit_code": {"enum": [EXIT_OK, EXIT_MODEL, EXIT_SOLVER, EXIT_ARGS]},
        "results": {"type": ["object", "null"]},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "error": {"type": ["string", "null"]},
        "wall_time": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}


class ArgumentError(Exception):
    pass


class InvalidModel(Exception):
    def __init__(self, message: str, validation: dict | None = None):
        super().__init__(message)
        self.validation = validation


@dataclass
class RunConfig:
    command: str
    model_path: str
    z: str | None = None
    tol: float = DEFAULT_TOL
    lambda_override: float | None = None
    policy_path: str | None = None
    state: str | None = None
    seed: int = 42
    n: int = 10_000
    horizon: float = 200.0
    g: float | None = None
    lambda_grid: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsctmdp", description="Risk-sensitive average-cost CTMDP solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, z=True, tol=True):
        p.add_argument("model_path", help="model JSON file")
        p.add_argument("--lambda", dest="lambda_override", type=float, help="override the risk coefficient")
        if z:
            p.add_argument("--z", help="reference state label (default: first state)")
        if tol:
            p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="bisection bracket width")

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model_path")
    p.add_argument("--lambda", dest="lambda_override", type=float)
    common(sub.add_parser("solve", help="optimal average cost, relative values and policy"))
    p = sub.add_parser("eval", help="spectral and risk-neutral value of a policy file")
    common(p, z=False, tol=False)
    p.add_argument("--policy", dest="policy_path", required=True)
    p = sub.add_parser("simulate", help="Monte Carlo estimate under a policy (default: solved optimum)")
    common(p)
    p.add_argument("--policy", dest="policy_path")
    p.add_argument("--state", help="initial state label (default: first state)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("-n", type=int, default=10_000, help="number of trajectories")
    p.add_argument("--horizon", type=float, default=200.0,
                   help="finite horizon standing in for the long-run limit (heuristic)")
    p.add_argument("--g", type=float, help="estimate the first-passage value at this g instead")
    common(sub.add_parser("brute", help="exhaustive policy enumeration vs solve"))
    p = sub.add_parser("sweep", help="solve over a grid of risk coefficients")
    common(p)
    p.add_argument("--grid", default="0.25,0.5,1,2,4", help="comma-separated lambda values")
    return parser


def parse_config(argv: Sequence[str]) -> RunConfig:
    ns = build_parser().parse_args(argv)
    kw = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    if ns.command == "sweep":
        try:
            kw["lambda_grid"] = [float(x) for x in ns.grid.split(",") if x.strip()]
        except ValueError:
            raise ArgumentError(f"bad --grid {ns.grid!r}") from None
        if not kw["lambda_grid"] or any(not (x > 0 and math.isfinite(x)) for x in kw["lambda_grid"]):
            raise ArgumentError("--grid needs positive lambda values")
    cfg = RunConfig(**kw)
    if not cfg.tol > 0:
        raise ArgumentError("--tol must be positive")
    if cfg.lambda_override is not None and not cfg.lambda_override > 0:
        raise ArgumentError("--lambda must be positive")
    if cfg.n < 2:
        raise ArgumentError("-n must be at least 2")
    if not cfg.horizon > 0:
        raise ArgumentError("--horizon must be positive")
    return cfg


def _load(cfg: RunConfig, warnings: list[str]) -> CtmdpModel:
    try:
        model, w = load_model(cfg.model_path)
    except OSError as exc:
        raise ArgumentError(f"cannot read model file: {exc}") from exc
    except ModelError as exc:
        raise InvalidModel(str(exc)) from exc
    warnings.extend(w)
    if cfg.lambda_override is not None:
        model = model.with_lambda(cfg.lambda_override)
    report = validate_model(model)
    if not report.ok and cfg.command != "validate":
        raise InvalidModel("model failed validation", report.to_dict())
    return model


def _state(model: CtmdpModel, label: str | None) -> int:
    if label is None:
        return 0
    if label not in model.states:
        raise ArgumentError(f"unknown state label {label!r}")
    return model.states.index(label)


def _policy(model: CtmdpModel, path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_policy(model, json.load(fh))
    except (OSError, json.JSONDecodeError, PolicyError) as exc:
        raise ArgumentError(f"bad policy file: {exc}") from exc


def _solve_dict(model, z, tol):
    return solve(model, z, tol).to_dict(model)


def execute(cfg: RunConfig, warnings: list[str]) -> dict[str, Any]:
    model = _load(cfg, warnings)
    if cfg.command == "validate":
        report = validate_model(model)
        if not report.ok:
            raise InvalidModel("model failed validation", report.to_dict())
        return report.to_dict()

    z = _state(model, cfg.z)
    if cfg.command == "solve":
        return _solve_dict(model, z, cfg.tol)

    if cfg.command == "eval":
        policy = _policy(model, cfg.policy_path)
        spec = policy_value_spectral(model, policy)
        return {
            "policy": serialize_policy(model, policy),
            "spectral": {"value": spec.value, "iterations": spec.details["iterations"]},
            "risk_neutral": {"value": policy_value_risk_neutral(model, policy)},
        }

    if cfg.command == "simulate":
        i0 = _state(model, cfg.state)
        if cfg.policy_path:
            policy = _policy(model, cfg.policy_path)
        else:
            policy = solve(model, z, cfg.tol).policy
        if cfg.g is not None:
            if not hasattr(policy, "choice"):
                raise ArgumentError("first-passage estimates need a deterministic policy")
            est = estimate_first_passage(model, policy, cfg.g, z, i0, cfg.n, cfg.seed)
            kind = "first_passage"
        else:
            est = estimate_average_cost(model, policy, i0, cfg.horizon, cfg.n, cfg.seed)
            kind = "average_cost"
        if est.flagged:
            warnings.append(f"{est.censored} of {est.n_trajectories} passages censored")
        return {"estimate": kind, "policy": serialize_policy(model, policy), **est.to_dict()}

    if cfg.command == "brute":
        res = brute_force_optimal(model)
        solved = solve(model, z, cfg.tol)
        return {
            "brute_force": {
                "value": res.value,
                "policy": res.policy.labels(model),
                "evaluated": res.evaluated,
                "skipped": res.skipped,
            },
            "solve": solved.to_dict(model),
            "delta": abs(res.value - solved.g_star),
        }

    if cfg.command == "sweep":
        rows = []
        for lam in cfg.lambda_grid:
            rep = solve(model.with_lambda(lam), z, cfg.tol)
            rows.append({"lambda": lam, "g_star": rep.g_star, "policy": rep.policy.labels(model)})
        gs = [r["g_star"] for r in rows]
        order = np.argsort(cfg.lambda_grid, kind="stable")
        mono = all(gs[order[k]] <= gs[order[k + 1]] + 1e-8 for k in range(len(gs) - 1))
        return {"rows": rows, "nondecreasing": mono}

    raise ArgumentError(f"unknown command {cfg.command!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run(argv: Sequence[str]) -> tuple[int, dict]:
    start = time.perf_counter()
    warnings: list[str] = []
    cfg = None
    results, error, code = None, None, EXIT_OK
    try:
        cfg = parse_config(argv)
        results = execute(cfg, warnings)
    except ArgumentError as exc:
        code, error = EXIT_ARGS, f"bad arguments: {exc}"
    except InvalidModel as exc:
        code, error, results = EXIT_MODEL, f"invalid model: {exc}", exc.validation
    except (SolverError, PolicyError) as exc:
        code, error = EXIT_SOLVER, f"solver error: {exc}"
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command if cfg else None,
        "config": asdict(cfg) if cfg else {"argv": list(argv)},
        "ok": code == EXIT_OK,
        "exit_code": code,
        "results": results,
        "warnings": warnings,
        "error": error,
        "wall_time": time.perf_counter() - start,
    }
    return code, _jsonable(report)


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr, format="%(levelname)s: %(message)s")
    code, report = run(sys.argv[1:] if argv is None else argv)
    if report["error"]:
        log.error(report["error"])
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
