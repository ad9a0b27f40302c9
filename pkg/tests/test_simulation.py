import warnings

import numpy as np
import pytest

import simstudy as ss
from simstudy.errors import ConfigError, UpdateError, UsageError
from simstudy.executor import BatchCache, completion_report, execute_replicate
from simstudy.examples.poisson import poisson_sim, poisson_update
from simstudy.examples.poisson import script as poisson_script
from simstudy.levels import LevelCombo
from simstudy.plan import ReplicateId

import helpers


@pytest.fixture(scope="module")
def poisson_run():
    return poisson_sim().run(quiet=True)


def test_poisson_grid_results(poisson_run):
    sim = poisson_run
    res = sim.results
    assert len(res) == 600 and sim.errors.empty and sim.warnings.empty
    assert sim.last_report == "Done. No errors or warnings detected."
    assert list(res.columns) == ["sim_uid", "level_id", "rep_id", "estimator", "n", "runtime", "lambda_hat"]
    assert res["sim_uid"].tolist() == list(range(1, 601))
    assert (res["runtime"] >= 0).all()
    assert sim.vars("n_replicates") == 600 and sim.vars("n_level_combos") == 6
    assert sim.vars("seed") == 24 and sim.vars("total_runtime") > 0


def test_run_twice_and_update_before_run():
    sim = poisson_sim(num_sim=1)
    with pytest.raises(UsageError):
        sim.update()
    sim.run(quiet=True)
    with pytest.raises(UsageError):
        sim.run()


def test_missing_script():
    with pytest.raises(UsageError):
        ss.new_sim(1).set_levels(n=[1]).run()


def test_entropy_seed_is_reported():
    sim = ss.new_sim()
    seed = sim.vars("seed")
    assert isinstance(seed, int) and 0 <= seed < 2**64
    with pytest.raises(KeyError):
        sim.vars("nope")


def test_error_rows_and_report(capsys):
    sim = helpers.mvnorm_sim().run()
    out = capsys.readouterr().out
    assert "Done. Errors detected in 25% of replicates." in out
    err = sim.errors
    assert err["sim_uid"].tolist() == [5, 6]
    assert (err["Sigma"] == "s2").all() and (err["level_id"] == 3).all()
    assert (err["message"] == "'Sigma' is not positive definite").all()
    assert "mvnorm" in err["call"].iloc[0]
    assert len(sim.results) == 6 and set(sim.results["Sigma"]) == {"s1", "s3", "s4"}


def test_stop_at_error_reraises():
    sim = helpers.mvnorm_sim(stop_at_error=True)
    with pytest.raises(ValueError, match="not positive definite"):
        sim.run(quiet=True)
    assert not sim.has_run and sim.results.empty


def test_warnings_are_captured():
    def script(ctx):
        if ctx.rep_id == 1:
            warnings.warn("first")
            ctx.warn("second")
        return {"x": 1.0}

    sim = ss.new_sim(1).set_levels(n=[1, 2]).set_config(num_sim=2).set_script(script).run(quiet=True)
    assert sim.last_report == "Done. Warnings detected in 50% of replicates."
    w = sim.warnings
    assert w["sim_uid"].tolist() == [1, 3]
    assert w["message"].iloc[0] == "first; second"
    assert len(sim.results) == 4


def test_output_contract_errors():
    def script(ctx):
        if ctx.L.kind == "array":
            return {"x": np.zeros(3)}
        if ctx.L.kind == "reserved":
            return {"runtime": 1.0}
        if ctx.L.kind == "empty":
            return {}
        return {"x": np.float64(2.5), "flag": np.bool_(True), "label": "a", "k": np.int64(3)}

    sim = ss.new_sim(1).set_levels(kind=["array", "reserved", "empty", "ok"]).set_script(script)
    sim.run(quiet=True)
    err = sim.errors
    assert err["call"].tolist() == ["script return value"] * 3
    assert "not a scalar" in err["message"].iloc[0]
    row = sim.result_rows()[0]
    assert row["x"] == 2.5 and row["flag"] is True and row["label"] == "a" and row["k"] == 3
    assert type(row["k"]) is int


def test_complex_payload():
    sim = helpers.complex_sim().run(quiet=True)
    c5 = sim.get_complex(5)
    assert set(c5) == {"model", "cov_mtx"}
    assert c5["cov_mtx"].shape == (2, 2)
    assert np.allclose(c5["model"].coef, [sim.results.loc[4, "beta0_hat"], sim.results.loc[4, "beta1_hat"]])
    assert ".complex" not in sim.results.columns
    with pytest.raises(KeyError):
        sim.get_complex(99)


def test_structured_levels_in_tables():
    sim = helpers.distribution_sim().run(quiet=True)
    assert sim.results["distribution"].tolist() == ["Beta 1", "Beta 1", "Beta 2", "Beta 2", "Normal", "Normal"]
    summary = sim.summarize({"stat": "mean", "name": "mean_y", "x": "y"})
    assert summary["distribution"].tolist() == ["Beta 1", "Beta 1", "Beta 2", "Beta 2", "Normal", "Normal"]
    assert abs(summary["mean_y"].iloc[5] - 3.0) < 0.1


def test_batch_shares_dataset_within_batch():
    sim = helpers.batch_sim_simple().run(quiet=True)
    res = sim.results
    for rep in (1, 2, 3):
        d = res[res["rep_id"] == rep]["dat_1"]
        assert d.nunique() == 1
    assert res.groupby("rep_id")["dat_1"].first().nunique() == 3


def test_batch_requires_batch_levels():
    def script(ctx):
        return {"x": ctx.batch(lambda r: r.normal())}

    sim = ss.new_sim(1).set_levels(n=[1]).set_script(script).run(quiet=True)
    assert "batch_levels" in sim.errors["message"].iloc[0]


def test_batch_parallel_rules():
    with pytest.raises(ConfigError):
        helpers.batch_sim_grid(parallel=True).run(quiet=True)
    with pytest.raises(ConfigError):
        helpers.batch_sim_grid(parallel=True, n_workers=9).run(quiet=True)
    serial = helpers.batch_sim_grid().run(quiet=True)
    par = helpers.batch_sim_grid(parallel=True, n_workers=3).run(quiet=True)
    assert serial.result_rows() == par.result_rows()


def test_replicate_stream_unaffected_by_batch_cache():
    def script(ctx):
        shared = ctx.batch(lambda r: r.normal())
        return {"shared": shared, "own": ctx.rng.normal()}

    combo = LevelCombo(1, {"n": 1})
    rid = ReplicateId(1, 1, 1, 1)
    fresh = execute_replicate(rid, combo, script, 5, batch_levels=(), cache=BatchCache())
    cache = BatchCache()
    cache.get(1, 1, lambda: 123.0)
    cached = execute_replicate(rid, combo, script, 5, batch_levels=(), cache=cache)
    assert cached.result["shared"] == 123.0
    assert fresh.result["own"] == cached.result["own"]


def test_parallel_matches_serial(poisson_run):
    par = poisson_sim(parallel=True, n_workers=3).run(quiet=True)
    assert par.result_rows() == poisson_run.result_rows()


def test_update_adds_only_new_replicates(poisson_run, tmp_path):
    sim = ss.load(ss.save(poisson_run, tmp_path / "a"))
    calls = []

    def counting(ctx):
        calls.append(ctx.sim_uid)
        return poisson_script(ctx)

    poisson_update(sim)
    sim.set_script(counting)
    assert len(sim.pending().replicates) == 1000
    sim.update(quiet=True)
    assert len(calls) == 1000 and min(calls) == 601
    assert len(sim.results) == 1600
    kept = {r["sim_uid"]: r for r in poisson_run.result_rows()}
    assert all(sim._results[u] == row for u, row in kept.items())
    s = sim.summarize({"stat": "mean", "name": "m", "x": "lambda_hat"})
    assert len(s) == 8 and (s["n_reps"] == 200).all()


def test_update_removal_drops_rows(poisson_run, tmp_path):
    sim = ss.load(ss.save(poisson_run, tmp_path / "a"))
    sim.set_script(lambda ctx: {"x": 1.0})
    sim.set_levels(estimator=["M"], n=[10, 100, 1000]).set_config(num_sim=50)
    sim.update(quiet=True)
    assert len(sim.results) == 150
    assert set(sim.results["level_id"]) == {1, 3, 5}
    assert sim.vars("n_replicates") == 150


def test_update_rejects_seed_change(poisson_run, tmp_path):
    sim = ss.load(ss.save(poisson_run, tmp_path / "a"))
    sim.set_script(lambda ctx: {"x": 1.0}).set_config(seed=25)
    with pytest.raises(UpdateError):
        sim.update()


def test_completion_report_wording():
    assert completion_report(8, 2, 0) == "Done. Errors detected in 25% of replicates."
    assert completion_report(3, 1, 0) == "Done. Errors detected in 33.33% of replicates."
    assert completion_report(4, 0, 0) == "Done. No errors or warnings detected."
