"""Sample mean versus sample variance as estimators of a Poisson rate.

Run with ``python -m simstudy.examples.poisson --dir out/``; add ``--update``
afterwards to double the replicates and add n = 10000.
"""
from __future__ import annotations

import numpy as np

from ..simulation import Simulation, new_sim

LAMBDA = 20
SEED = 24
SPECS = (
    {"stat": "bias", "name": "bias_lambda", "estimate": "lambda_hat", "truth": LAMBDA},
    {"stat": "mse", "name": "mse_lambda", "estimate": "lambda_hat", "truth": LAMBDA},
)


def create_data(n: int, rng) -> np.ndarray:
    return rng.poisson(LAMBDA, n)


def est_lambda(dat: np.ndarray, kind: str) -> float:
    if kind == "M":
        return float(dat.mean())
    if kind == "V":
        return float(dat.var(ddof=1))
    raise ValueError(f"unknown estimator {kind!r}")


def script(ctx) -> dict:
    dat = create_data(ctx.L.n, ctx.rng)
    return {"lambda_hat": est_lambda(dat, ctx.L.estimator)}


def poisson_sim(seed: int = SEED, num_sim: int = 100, **config) -> Simulation:
    """Configured (not yet run) study: estimator x n = 2 x 3 combos."""
    sim = new_sim(seed)
    sim.set_levels(estimator=["M", "V"], n=[10, 100, 1000])
    sim.set_script(script)
    sim.set_config(num_sim=num_sim, **config)
    return sim


def poisson_update(sim: Simulation) -> Simulation:
    """Declare the follow-up: 200 replicates per combo and a larger sample size."""
    sim.set_script(script)
    sim.set_levels(estimator=["M", "V"], n=[10, 100, 1000, 10000])
    sim.set_config(num_sim=200)
    return sim


def summarize(sim: Simulation):
    return sim.summarize(*SPECS)


def main(argv=None) -> None:
    from ._program import run_program

    run_program("poisson_sim", poisson_sim, poisson_update, summarize, argv)


if __name__ == "__main__":
    main()
