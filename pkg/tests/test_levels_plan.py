import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simstudy.config import SimConfig
from simstudy.errors import ConfigError, SchemaError, UpdateError
from simstudy.executor import schedule
from simstudy.levels import LevelSchema, LevelView, Structured, assign_level_ids, decode_value, encode_value
from simstudy.plan import assign_batches, build_plan, plan_update


class _Old:
    """Minimal stand-in for an already-run simulation."""

    def __init__(self, schema, config):
        self.combos = assign_level_ids(schema)
        self.plan = build_plan(schema, config)
        self.config = self.run_config = config
        self.uid_counter = max(r.sim_uid for r in self.plan)


def test_enumeration_first_variable_fastest():
    schema = LevelSchema.from_mapping({"estimator": ["M", "V"], "n": [10, 100, 1000]})
    combos = assign_level_ids(schema)
    assert [(c.assignments["estimator"], c.assignments["n"]) for c in combos] == [
        ("M", 10), ("V", 10), ("M", 100), ("V", 100), ("M", 1000), ("V", 1000)]
    assert [c.level_id for c in combos] == [1, 2, 3, 4, 5, 6]


def test_schema_validation():
    with pytest.raises(SchemaError):
        LevelSchema.from_mapping({"n": [1, 1]})
    with pytest.raises(SchemaError):
        LevelSchema.from_mapping({"sim_uid": [1]})
    with pytest.raises(SchemaError):
        LevelSchema.from_mapping({"n": []})
    with pytest.raises(SchemaError):
        LevelSchema.from_mapping({"bad name": [1]})
    with pytest.raises((SchemaError, ValueError)):
        LevelSchema.from_mapping({"x": [float("nan")]})


def test_empty_schema_has_one_combo():
    combos = assign_level_ids(LevelSchema())
    assert len(combos) == 1 and combos[0].assignments == {}


def test_structured_levels():
    schema = LevelSchema.from_mapping({"Sigma": {"s1": {"mtx": np.eye(2)}, "s2": {"mtx": [[1, 2], [2, 1]]}}})
    combos = assign_level_ids(schema)
    s1 = combos[0].assignments["Sigma"]
    assert isinstance(s1, Structured) and s1.label == "s1"
    assert s1.mtx == [[1.0, 0.0], [0.0, 1.0]]
    assert combos[0].columns() == {"Sigma": "s1"}
    assert decode_value(encode_value(s1)) == s1
    view = LevelView(combos[1].assignments)
    assert view.Sigma["mtx"] == [[1, 2], [2, 1]]
    with pytest.raises(AttributeError):
        view.n = 3


def test_structured_identity_is_deep_value_equality():
    a = Structured("x", {"p": [1, 2]})
    assert a == Structured("x", {"p": [1, 2]})
    assert a != Structured("x", {"p": [1, 3]})
    assert a != Structured("y", {"p": [1, 2]})


def test_level_ids_stable_on_append_and_insert():
    old = assign_level_ids(LevelSchema.from_mapping({"n": [10, 100]}))
    new = assign_level_ids(LevelSchema.from_mapping({"n": [5, 10, 100, 1000]}), old)
    ids = {c.assignments["n"]: c.level_id for c in new}
    assert ids == {10: 1, 100: 2, 5: 3, 1000: 4}


def test_fresh_plan_uids_level_major():
    schema = LevelSchema.from_mapping({"estimator": ["M", "V"], "n": [10, 100, 1000]})
    plan = build_plan(schema, SimConfig(seed=1, num_sim=100))
    assert len(plan) == 600
    assert plan[0].sim_uid == 1 and plan[0].level_id == 1 and plan[0].rep_id == 1
    assert plan[100].level_id == 2 and plan[100].rep_id == 1
    assert [r.sim_uid for r in plan] == list(range(1, 601))
    # no batch blocks: each replicate is its own batch
    assert len({r.batch_id for r in plan}) == 600


def test_batch_assignment_examples():
    schema = LevelSchema.from_mapping({"est": ["est_mean", "est_median"]})
    plan = build_plan(schema, SimConfig(seed=1, num_sim=3, batch_levels=()))
    by_batch = {}
    for r in plan:
        by_batch.setdefault(r.batch_id, []).append(r)
    assert len(by_batch) == 3
    assert all({r.rep_id for r in m} == {m[0].rep_id} and len(m) == 2 for m in by_batch.values())

    schema = LevelSchema.from_mapping({"n": [10, 100], "mu": [3, 5], "est": ["est_mean", "est_median"]})
    plan = build_plan(schema, SimConfig(seed=1, num_sim=2, batch_levels=("n", "mu")))
    assert len({r.batch_id for r in plan}) == 8
    combos = {c.level_id: c.assignments for c in assign_level_ids(schema)}
    first = [r for r in plan if r.batch_id == 1]
    assert {combos[r.level_id]["est"] for r in first} == {"est_mean", "est_median"}
    assert all(combos[r.level_id]["n"] == 10 and combos[r.level_id]["mu"] == 3 for r in first)


def test_unknown_batch_level_rejected():
    schema = LevelSchema.from_mapping({"n": [1, 2]})
    with pytest.raises(ConfigError):
        build_plan(schema, SimConfig(seed=1, batch_levels=("mu",)))


levels_strategy = st.lists(st.integers(1, 4), min_size=0, max_size=3).map(
    lambda sizes: {f"v{i}": list(range(k)) for i, k in enumerate(sizes)})


@given(levels_strategy, st.integers(1, 5), st.data())
@settings(max_examples=60, deadline=None)
def test_batches_partition_plan(levels, num_sim, data):
    schema = LevelSchema.from_mapping(levels)
    names = schema.names
    batch_levels = tuple(sorted(data.draw(st.sets(st.sampled_from(names)) if names else st.just(set()))))
    plan = build_plan(schema, SimConfig(seed=1, num_sim=num_sim, batch_levels=batch_levels))
    combos = {c.level_id: c.assignments for c in assign_level_ids(schema)}
    n_combos = math.prod(len(v) for v in levels.values())
    assert len(plan) == n_combos * num_sim
    key = lambda r: (tuple(combos[r.level_id][n] for n in batch_levels), r.rep_id)
    groups = {}
    for r in plan:
        groups.setdefault(r.batch_id, set()).add(key(r))
    # one key per batch and one batch per key
    assert all(len(keys) == 1 for keys in groups.values())
    assert len({next(iter(k)) for k in groups.values()}) == len(groups)
    distinct_batch_values = math.prod(len(levels[n]) for n in batch_levels)
    assert len(groups) == distinct_batch_values * num_sim
    assert sorted(groups) == list(range(1, len(groups) + 1))


@given(st.integers(1, 40), st.integers(1, 8), st.integers(1, 4))
@settings(max_examples=80, deadline=None)
def test_schedule_partitions_and_colocates(n_batches, n_workers, per_batch):
    schema = LevelSchema.from_mapping({"k": list(range(per_batch))})
    plan = build_plan(schema, SimConfig(seed=1, num_sim=n_batches, batch_levels=()))
    if n_workers > n_batches:
        with pytest.raises(ConfigError):
            schedule(plan, n_workers, batches_in_use=True)
        return
    chunks = schedule(plan, n_workers, batches_in_use=True)
    assert len(chunks) == n_workers
    flat = [r for c in chunks for r in c]
    assert sorted(flat) == sorted(plan)
    owner = {}
    for w, chunk in enumerate(chunks):
        for r in chunk:
            assert owner.setdefault(r.batch_id, w) == w
    # deterministic and independent of input order
    assert schedule(list(reversed(plan)), n_workers, True) == chunks
    sizes = [len(c) for c in chunks]
    assert max(sizes) - min(sizes) <= 2 * per_batch


def test_schedule_chunk_rule():
    schema = LevelSchema.from_mapping({"k": [0]})
    plan = build_plan(schema, SimConfig(seed=1, num_sim=10))
    chunks = schedule(plan, 3)
    assert [[r.sim_uid for r in c] for c in chunks] == [[1, 2, 3, 4], [5, 6, 7], [8, 9, 10]]


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_update_plan_properties(n_old, n_new, sims_old, sims_new):
    old_schema = LevelSchema.from_mapping({"a": list(range(n_old)), "b": ["x", "y"]})
    new_schema = LevelSchema.from_mapping({"a": list(range(n_new)), "b": ["x", "y"]})
    old = _Old(old_schema, SimConfig(seed=3, num_sim=sims_old))
    up = plan_update(old, new_schema, SimConfig(seed=3, num_sim=sims_new))
    kept_uids = {r.sim_uid for r in up.to_keep}
    assert kept_uids | {r.sim_uid for r in up.to_drop} == {r.sim_uid for r in old.plan}
    assert not kept_uids & {r.sim_uid for r in up.to_drop}
    assert all(r.sim_uid > old.uid_counter for r in up.to_run)
    expected = 2 * n_new * sims_new
    assert len(up.to_keep) + len(up.to_run) == expected
    assert len(up.to_keep) == 2 * min(n_old, n_new) * min(sims_old, sims_new)
    run_keys = [(r.level_id, r.rep_id) for r in up.to_run]
    assert run_keys == sorted(run_keys)
    assert up.uid_counter == old.uid_counter + len(up.to_run)


def test_update_rejections():
    schema = LevelSchema.from_mapping({"n": [1, 2]})
    old = _Old(schema, SimConfig(seed=3, num_sim=2))
    with pytest.raises(UpdateError):
        plan_update(old, schema, SimConfig(seed=4, num_sim=2))
    with pytest.raises(UpdateError):
        plan_update(old, schema, SimConfig(seed=3, num_sim=2, batch_levels=()))
    batched = _Old(schema, SimConfig(seed=3, num_sim=2, batch_levels=()))
    with pytest.raises(UpdateError):
        plan_update(batched, schema, SimConfig(seed=3, num_sim=3, batch_levels=()))
    shrink = plan_update(batched, LevelSchema.from_mapping({"n": [1]}), SimConfig(seed=3, num_sim=1, batch_levels=()))
    assert not shrink.to_run and len(shrink.to_keep) == 1 and len(shrink.to_drop) == 3


def test_noop_update():
    schema = LevelSchema.from_mapping({"n": [1, 2]})
    old = _Old(schema, SimConfig(seed=3, num_sim=2))
    assert plan_update(old, schema, SimConfig(seed=3, num_sim=2)).is_noop


def test_assign_batches_keeps_existing_ids():
    schema = LevelSchema.from_mapping({"n": [1, 2]})
    combos = assign_level_ids(schema)
    plan = build_plan(schema, SimConfig(seed=1, num_sim=2, batch_levels=()))
    again = assign_batches(plan, combos, ())
    assert again == plan


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(seed=1, num_sim=0)
    with pytest.raises(ConfigError):
        SimConfig(seed=1).updated(bogus=1)
    cfg = SimConfig(seed=1, batch_levels=["b", "a"])
    assert cfg.batch_levels == ("a", "b")
    assert SimConfig.from_json(cfg.to_json()) == cfg
    assert SimConfig(seed=1).resolved_workers() >= 1
