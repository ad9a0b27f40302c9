"""Simulation fixtures shared by the test modules."""
from __future__ import annotations

import filecmp
import os
from pathlib import Path

import numpy as np

import simstudy as ss
from simstudy.examples.regression import ols_fit, vcov_model

# criterion number -> (passed, detail); filled by test_acceptance, printed by conftest
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def quiet_run(sim):
    return sim.run(quiet=True)


# -- batch fixtures ----------------------------------------------------------

def _mean_or_median(dat, kind):
    return float(np.mean(dat)) if kind == "est_mean" else float(np.median(dat))


def batch_script_simple(ctx):
    dat = ctx.batch(lambda rng: rng.normal(3.0, 1.0, 100))
    return {"mu_hat": round(_mean_or_median(dat, ctx.L.est), 2), "dat_1": float(dat[0])}


def batch_sim_simple(num_sim=3, seed=7):
    sim = ss.new_sim(seed)
    sim.set_levels(est=["est_mean", "est_median"])
    sim.set_config(num_sim=num_sim, batch_levels=[])
    return sim.set_script(batch_script_simple)


def batch_script_grid(ctx):
    dat = ctx.batch(lambda rng: rng.normal(ctx.L.mu, 1.0, ctx.L.n))
    return {"mu_hat": _mean_or_median(dat, ctx.L.est), "dat_1": float(dat[0])}


def batch_sim_grid(num_sim=2, seed=7, **config):
    sim = ss.new_sim(seed)
    sim.set_levels(n=[10, 100], mu=[3, 5], est=["est_mean", "est_median"])
    sim.set_config(num_sim=num_sim, batch_levels=["n", "mu"], return_batch_id=True, **config)
    return sim.set_script(batch_script_grid)


# -- complex return data -------------------------------------------------------

def complex_script(ctx):
    x = ctx.rng.uniform(0.0, 1.0, ctx.L.n)
    y = 3 + 2 * x + ctx.rng.normal(0.0, 1.0, ctx.L.n)
    fit = ols_fit({"x": x, "y": y})
    return {
        "beta0_hat": fit.coef[0],
        "beta1_hat": fit.coef[1],
        ".complex": {"model": fit, "cov_mtx": vcov_model(fit)},
    }


def complex_sim(seed=11):
    sim = ss.new_sim(seed)
    sim.set_levels(n=[10, 100, 1000])
    sim.set_config(num_sim=2)
    return sim.set_script(complex_script)


# -- structured levels --------------------------------------------------------

def distribution_script(ctx):
    d = ctx.L.distribution
    if d.type == "Beta":
        x = ctx.rng.beta(d.params[0], d.params[1], ctx.L.n)
    else:
        x = ctx.rng.normal(d.params[0], d.params[1], ctx.L.n)
    return {"y": float(np.mean(x))}


def distribution_sim(seed=5):
    sim = ss.new_sim(seed)
    sim.set_levels(n=[10, 100], distribution={
        "Beta 1": {"type": "Beta", "params": [0.3, 0.7]},
        "Beta 2": {"type": "Beta", "params": [1.5, 0.4]},
        "Normal": {"type": "Normal", "params": [3.0, 0.2]},
    })
    return sim.set_script(distribution_script)


# -- error containment --------------------------------------------------------

SIGMAS = {
    "s1": {"mtx": [[3, 1], [1, 2]]},
    "s3": {"mtx": [[4, 3], [3, 9]]},
    "s2": {"mtx": [[1, 2], [2, 1]]},
    "s4": {"mtx": [[8, 2], [2, 6]]},
}


def mvnorm_script(ctx):
    x = ctx.rng.mvnorm(mean=[0, 0], sigma=ctx.L.Sigma.mtx)
    return {"x1": x[0], "x2": x[1]}


def mvnorm_sim(seed=3, **config):
    sim = ss.new_sim(seed)
    sim.set_levels(Sigma=SIGMAS)
    sim.set_config(num_sim=2, **config)
    return sim.set_script(mvnorm_script)


# -- archive comparison -------------------------------------------------------

def archive_files(path) -> list[str]:
    root = Path(path)
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())


def archives_identical(a, b) -> bool:
    fa, fb = archive_files(a), archive_files(b)
    if fa != fb:
        return False
    return all(filecmp.cmp(os.path.join(a, f), os.path.join(b, f), shallow=False) for f in fa)


def results_bytes(sim, tmp_path, name) -> bytes:
    path = ss.save(sim, Path(tmp_path) / name)
    return (path / "results.jsonl").read_bytes()
