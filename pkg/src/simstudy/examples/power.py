"""Simulation-based power for a two-arm randomized trial, checked against the
normal-approximation sample size formula.

Run with ``python -m simstudy.examples.power --dir out/``.
"""
from __future__ import annotations

import math

import numpy as np
import pandas as pd

from ..simulation import Simulation, new_sim
from .stats import normal_cdf, normal_ppf, reject_at, welch_t_test

MU_0, MU_1 = 17.0, 18.0
SIGMA_0, SIGMA_1 = 2.0, 2.0
SAMPLE_SIZES = (20, 40, 60, 80)
SEED = 24


def _check(mu_0, mu_1, sigma_0, sigma_1, alpha):
    if sigma_0 <= 0 or sigma_1 <= 0:
        raise ValueError("standard deviations must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def power_formula(n: float, mu_0: float = MU_0, mu_1: float = MU_1, sigma_0: float = SIGMA_0,
                  sigma_1: float = SIGMA_1, alpha: float = 0.05) -> float:
    """Approximate power with ``n`` per group: Phi(sqrt(n d^2 / (s0^2 + s1^2)) - z_{alpha/2})."""
    _check(mu_0, mu_1, sigma_0, sigma_1, alpha)
    z = normal_ppf(1.0 - alpha / 2.0)
    return normal_cdf(math.sqrt(n * (mu_0 - mu_1) ** 2 / (sigma_0 ** 2 + sigma_1 ** 2)) - z)


def required_n(alpha: float, beta: float, mu_0: float = MU_0, mu_1: float = MU_1,
               sigma_0: float = SIGMA_0, sigma_1: float = SIGMA_1, exact: bool = False):
    """Per-group sample size for power 1 - beta; rounded up unless ``exact``."""
    _check(mu_0, mu_1, sigma_0, sigma_1, alpha)
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if mu_0 == mu_1:
        raise ValueError("required_n needs mu_0 != mu_1")
    z_a = normal_ppf(1.0 - alpha / 2.0)
    z_b = normal_ppf(1.0 - beta)
    n = (z_a + z_b) ** 2 * (sigma_0 ** 2 + sigma_1 ** 2) / (mu_0 - mu_1) ** 2
    return n if exact else math.ceil(n)


def create_rct_data(n: int, mu_0: float, mu_1: float, sigma_0: float, sigma_1: float, rng) -> pd.DataFrame:
    """``n`` subjects per arm, arm labels randomly permuted.

    Every row gets its own outcome draw for each arm; the row's arm picks one.
    """
    group = rng.permutation(np.repeat([0, 1], n))
    y0 = rng.normal(mu_0, sigma_0, 2 * n)
    y1 = rng.normal(mu_1, sigma_1, 2 * n)
    outcome = (1 - group) * y0 + group * y1
    return pd.DataFrame({"group": group, "outcome": outcome})


def run_test(data: pd.DataFrame, alpha: float = 0.05) -> int:
    g = data["group"].to_numpy()
    y = data["outcome"].to_numpy()
    _, _, p = welch_t_test(y[g == 0], y[g == 1])
    return reject_at(p, alpha)


def script(ctx) -> dict:
    data = create_rct_data(ctx.L.n, MU_0, MU_1, SIGMA_0, SIGMA_1, ctx.rng)
    return {"reject": run_test(data)}


def power_sim(seed: int = SEED, num_sim: int = 1000, sizes=SAMPLE_SIZES, **config) -> Simulation:
    sim = new_sim(seed)
    sim.set_levels(n=list(sizes))
    sim.set_script(script)
    sim.set_config(num_sim=num_sim, **config)
    return sim


def summarize(sim: Simulation) -> pd.DataFrame:
    frame = sim.summarize({"stat": "mean", "name": "power", "x": "reject"})
    frame["power_formula"] = [power_formula(n) for n in frame["n"]]
    return frame


def main(argv=None) -> None:
    from ._program import run_program

    def no_update(sim):
        raise SystemExit("the power example has no update step")

    run_program("power_sim", power_sim, no_update, summarize, argv)


if __name__ == "__main__":
    main()
