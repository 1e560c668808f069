"""Compare the bisection solver against exhaustive policy enumeration.

    python3 scripts/oracle_equivalence.py --count 50 --seed 2024
"""
import argparse
import time
from dataclasses import dataclass

from rsctmdp.average_solver import brute_force_optimal, policy_value_spectral, solve
from rsctmdp.instances import random_instance_set


@dataclass
class Config:
    count: int = 50
    seed: int = 2024
    tol: float = 1e-10


def main(cfg: Config) -> int:
    start = time.perf_counter()
    worst = 0.0
    print(f"{'#':>3} {'|S|':>3} {'lam':>4} {'g_star':>12} {'brute':>12} {'delta':>9} {'f* gap':>9}")
    for k, m in enumerate(random_instance_set(cfg.count, cfg.seed)):
        rep = solve(m, tol=cfg.tol)
        brute = brute_force_optimal(m).value
        f_val = policy_value_spectral(m, rep.policy).value
        delta = abs(rep.g_star - brute)
        worst = max(worst, delta)
        print(f"{k:3d} {m.n_states:3d} {m.lam:4.1f} {rep.g_star:12.8f} {brute:12.8f} "
              f"{delta:9.2e} {abs(f_val - rep.g_star):9.2e}")
    print(f"worst delta {worst:.2e} in {time.perf_counter() - start:.2f}s")
    return 0 if worst <= 1e-6 else 1


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=Config.count)
    p.add_argument("--seed", type=int, default=Config.seed)
    p.add_argument("--tol", type=float, default=Config.tol)
    raise SystemExit(main(Config(**vars(p.parse_args()))))
