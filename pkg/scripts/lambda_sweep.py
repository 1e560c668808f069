"""Optimal risk-sensitive average cost across a grid of risk coefficients.

Prints g_star and the optimal policy per lambda, next to the risk-neutral
optimum that the small-lambda end should approach.

    python3 scripts/lambda_sweep.py [MODEL.json] --grid 0.0001,0.25,0.5,1,2,4
"""
import argparse
from dataclasses import dataclass, field

from rsctmdp.average_solver import policy_value_risk_neutral, solve
from rsctmdp.instances import bundled
from rsctmdp.model import all_policies, induced_generator, load_model, strongly_connected


@dataclass
class Config:
    model: str | None = None
    grid: list[float] = field(default_factory=lambda: [1e-4, 0.25, 0.5, 1.0, 2.0, 4.0])


def main(cfg: Config) -> None:
    model = load_model(cfg.model)[0] if cfg.model else bundled("machine")
    neutral = min(
        policy_value_risk_neutral(model, f)
        for f in all_policies(model)
        if strongly_connected(induced_generator(model, f)[0])
    )
    print(f"risk-neutral optimum: {neutral:.8f}")
    for lam in sorted(cfg.grid):
        rep = solve(model.with_lambda(lam))
        print(f"lambda={lam:<8g} g_star={rep.g_star:.8f}  policy={rep.policy.labels(model)}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("model", nargs="?")
    p.add_argument("--grid", type=lambda s: [float(v) for v in s.split(",")])
    args = p.parse_args()
    cfg = Config(model=args.model)
    if args.grid:
        cfg.grid = args.grid
    main(cfg)
