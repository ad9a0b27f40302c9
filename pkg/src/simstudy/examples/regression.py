"""Model-based, sandwich (HC0), and bootstrap standard errors for simple
linear regression under heteroskedastic noise.

Run with ``python -m simstudy.examples.regression --dir out/``; add
``--update`` afterwards to bring in the bootstrap estimator without rerunning
the first two.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..simulation import Simulation, new_sim

BETA = (-1.0, 10.0)
SEED = 24
N_BOOT = 100
SIZES = (50, 100, 500, 1000)
SPECS = (
    {"stat": "mean", "name": "mean_se_beta0", "x": "beta0_se_est"},
    {"stat": "mean", "name": "mean_se_beta1", "x": "beta1_se_est"},
    {"stat": "coverage", "name": "cov_beta0", "estimate": "beta0_est", "se": "beta0_se_est", "truth": BETA[0]},
    {"stat": "coverage", "name": "cov_beta1", "estimate": "beta1_est", "se": "beta1_se_est", "truth": BETA[1]},
)


def create_regression_data(n: int, rng) -> pd.DataFrame:
    """y = -1 + 10 x + e with x ~ N(0, 1) and Var(e | x) = exp(x)."""
    x = rng.normal(0.0, 1.0, n)
    y = BETA[0] + BETA[1] * x + np.sqrt(np.exp(x)) * rng.normal(0.0, 1.0, n)
    return pd.DataFrame({"x": x, "y": y})


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray       # (intercept, slope)
    resid: np.ndarray
    x: np.ndarray
    xtx_inv: np.ndarray    # (X'X)^-1 for X = [1, x]

    @property
    def n(self) -> int:
        return self.x.size


def ols_fit(data: pd.DataFrame) -> OlsFit:
    """Least squares for y ~ 1 + x via the 2x2 normal equations."""
    x = np.asarray(data["x"], dtype=float)
    y = np.asarray(data["y"], dtype=float)
    n = x.size
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if n < 3 or sxx <= 1e-12 * max(1.0, float(x @ x)):
        raise ValueError("singular design: need at least 3 observations and non-constant x")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    sx, sxx_raw = float(x.sum()), float(x @ x)
    xtx_inv = np.array([[sxx_raw, -sx], [-sx, n]]) / (n * sxx)
    resid = y - intercept - slope * x
    return OlsFit(np.array([intercept, slope]), resid, x, xtx_inv)


def vcov_model(fit: OlsFit) -> np.ndarray:
    """sigma^2 (X'X)^-1 with sigma^2 = RSS / (n - 2)."""
    s2 = float(fit.resid @ fit.resid) / (fit.n - 2)
    return s2 * fit.xtx_inv


def vcov_sandwich_hc0(fit: OlsFit) -> np.ndarray:
    """(X'X)^-1 X' diag(e^2) X (X'X)^-1."""
    e2 = fit.resid ** 2
    x = fit.x
    meat = np.array([[e2.sum(), (x * e2).sum()], [(x * e2).sum(), (x * x * e2).sum()]])
    return fit.xtx_inv @ meat @ fit.xtx_inv


def vcov_bootstrap(data: pd.DataFrame, rng, n_boot: int = N_BOOT) -> np.ndarray:
    """Sample variances of (intercept, slope) over ``n_boot`` case resamples."""
    x = np.asarray(data["x"], dtype=float)
    y = np.asarray(data["y"], dtype=float)
    n = x.size
    idx = rng.integers(0, n, size=(n_boot, n))
    xb, yb = x[idx], y[idx]
    xm, ym = xb.mean(axis=1, keepdims=True), yb.mean(axis=1, keepdims=True)
    slope = ((xb - xm) * (yb - ym)).sum(axis=1) / ((xb - xm) ** 2).sum(axis=1)
    intercept = ym[:, 0] - slope * xm[:, 0]
    return np.array([intercept.var(ddof=1), slope.var(ddof=1)])


def model_vcov(data: pd.DataFrame, rng=None) -> tuple[np.ndarray, np.ndarray]:
    fit = ols_fit(data)
    return fit.coef, np.diag(vcov_model(fit))


def sandwich_vcov(data: pd.DataFrame, rng=None) -> tuple[np.ndarray, np.ndarray]:
    fit = ols_fit(data)
    return fit.coef, np.diag(vcov_sandwich_hc0(fit))


def bootstrap_vcov(data: pd.DataFrame, rng) -> tuple[np.ndarray, np.ndarray]:
    return ols_fit(data).coef, vcov_bootstrap(data, rng)


ESTIMATORS = {"model_vcov": model_vcov, "sandwich_vcov": sandwich_vcov, "bootstrap_vcov": bootstrap_vcov}


def script(ctx) -> dict:
    data = create_regression_data(ctx.L.n, ctx.rng)
    coef, var = ESTIMATORS[ctx.L.estimator](data, ctx.rng)
    return {
        "beta0_est": coef[0],
        "beta1_est": coef[1],
        "beta0_se_est": float(np.sqrt(var[0])),
        "beta1_se_est": float(np.sqrt(var[1])),
    }


def vcov_sim(seed: int = SEED, num_sim: int = 500, sizes=SIZES, **config) -> Simulation:
    sim = new_sim(seed)
    sim.set_script(script)
    sim.set_levels(estimator=["model_vcov", "sandwich_vcov"], n=list(sizes))
    sim.set_config(num_sim=num_sim, **config)
    return sim


def vcov_update(sim: Simulation, n_workers: int = 2) -> Simulation:
    """Add the bootstrap estimator; existing replicates are kept as they are."""
    sim.set_script(script)
    sizes = list(sim.schema.values("n"))
    sim.set_levels(estimator=["model_vcov", "sandwich_vcov", "bootstrap_vcov"], n=sizes)
    sim.set_config(parallel=True, n_workers=n_workers)
    return sim


def summarize(sim: Simulation) -> pd.DataFrame:
    return sim.summarize(*SPECS)


def main(argv=None) -> None:
    from ._program import run_program

    run_program("vcov_sim", vcov_sim, vcov_update, summarize, argv)


if __name__ == "__main__":
    main()
