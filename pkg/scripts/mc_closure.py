"""Monte Carlo check of g_star under the optimal policy, for growing horizons.

The estimate is the log of a sample mean, so it is biased low. At fixed n the
bias grows with the horizon, because the exponent's spread grows with it.

    python3 scripts/mc_closure.py --instance two_state --horizons 25,50,100,200
"""
import argparse
from dataclasses import dataclass

from rsctmdp.average_solver import solve
from rsctmdp.instances import BUNDLED, bundled
from rsctmdp.simulator import estimate_average_cost


@dataclass
class Config:
    instance: str = "machine"
    horizons: tuple[float, ...] = (25.0, 50.0, 100.0, 200.0)
    n: int = 10_000
    seed: int = 42


def main(cfg: Config) -> None:
    model = bundled(cfg.instance)
    rep = solve(model)
    print(f"{cfg.instance}: g_star={rep.g_star:.6f} policy={rep.policy.labels(model)}")
    for T in cfg.horizons:
        est = estimate_average_cost(model, rep.policy, 0, T, cfg.n, cfg.seed)
        print(f"  T={T:<6g} estimate={est.point:.6f} se={est.std_error:.4f} gap={est.point - rep.g_star:+.4f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--instance", choices=sorted(BUNDLED), default=Config.instance)
    p.add_argument("--horizons", type=lambda s: tuple(float(v) for v in s.split(",")), default=Config.horizons)
    p.add_argument("-n", type=int, default=Config.n)
    p.add_argument("--seed", type=int, default=Config.seed)
    main(Config(**vars(p.parse_args())))
