"""Bundled example models and random instance families."""

from __future__ import annotations

import numpy as np

from .data import path as _data_path
from .model import CtmdpModel, load_model, random_model

BUNDLED = ("two_state", "two_state_passage", "constant_cost", "machine")


def bundled(name: str) -> CtmdpModel:
    if name not in BUNDLED:
        raise KeyError(f"no bundled model {name!r}; choose from {BUNDLED}")
    model, _ = load_model(_data_path(f"{name}.json"))
    return model


def random_instance_set(count: int = 50, seed: int = 2024) -> list[CtmdpModel]:
    """Random instances: 2-4 states, 1-3 actions per state, rates in [0.1, 2],
    costs in [-1, 1], lambda drawn from {0.5, 1, 2}."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(2, 5))
        acts = [int(a) for a in rng.integers(1, 4, size=n)]
        lam = float(rng.choice([0.5, 1.0, 2.0]))
        out.append(random_model(rng, n, acts, lam))
    return out
