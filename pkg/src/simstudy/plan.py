"""Replicate planning: identities, batch assignment, and incremental updates."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .config import SimConfig
from .errors import ConfigError, UpdateError
from .levels import LevelCombo, LevelSchema, assign_level_ids, value_key


@dataclass(frozen=True, order=True)
class ReplicateId:
    sim_uid: int
    level_id: int
    rep_id: int
    batch_id: int = 0  # 0 until assign_batches runs

    def to_json(self) -> list[int]:
        return [self.sim_uid, self.level_id, self.rep_id, self.batch_id]

    @classmethod
    def from_json(cls, data) -> "ReplicateId":
        return cls(*data)


def check_batch_levels(schema: LevelSchema, batch_levels) -> None:
    if batch_levels is None:
        return
    unknown = sorted(set(batch_levels) - set(schema.names))
    if unknown:
        raise ConfigError(f"batch_levels names unknown level(s): {', '.join(unknown)}")


def assign_batches(
    plan: Sequence[ReplicateId],
    combos: Sequence[LevelCombo],
    batch_levels,
    schema: LevelSchema | None = None,
) -> list[ReplicateId]:
    """Fill in ``batch_id`` for every replicate.

    Two replicates share a batch iff they agree on ``rep_id`` and on every
    variable in ``batch_levels`` (``None`` means every variable, i.e. each
    replicate is alone). Ids are 1-based in first-encounter order over the
    uid-sorted plan. Replicates that already carry a batch id keep it, and
    their keys seed the numbering so new members join existing batches.
    """
    if schema is not None:
        check_batch_levels(schema, batch_levels)
    by_level = {c.level_id: c for c in combos}

    def key(rid: ReplicateId):
        assignments = by_level[rid.level_id].assignments
        names = sorted(assignments) if batch_levels is None else sorted(batch_levels)
        return tuple(value_key(assignments[n]) for n in names), rid.rep_id

    ordered = sorted(plan, key=lambda r: r.sim_uid)
    ids: dict = {}
    for rid in ordered:
        if rid.batch_id:
            ids.setdefault(key(rid), rid.batch_id)
    next_id = max(ids.values(), default=0) + 1
    out = []
    for rid in ordered:
        if rid.batch_id:
            out.append(rid)
            continue
        k = key(rid)
        if k not in ids:
            ids[k] = next_id
            next_id += 1
        out.append(replace(rid, batch_id=ids[k]))
    return out


def build_plan(schema: LevelSchema, config: SimConfig, existing=None) -> list[ReplicateId]:
    """All replicates to be present for ``schema``/``config``.

    Without ``existing`` this is a fresh build: uids run level-major, then by
    rep. With an already-run simulation the result is the post-update plan
    (kept replicates plus newly planned ones).
    """
    if existing is not None:
        up = plan_update(existing, schema, config)
        return sorted(up.to_keep + up.to_run)
    combos = assign_level_ids(schema)
    check_batch_levels(schema, config.batch_levels)
    plan = []
    uid = 0
    for combo in combos:
        for rep in range(1, config.num_sim + 1):
            uid += 1
            plan.append(ReplicateId(uid, combo.level_id, rep))
    return assign_batches(plan, combos, config.batch_levels)


@dataclass
class UpdatePlan:
    combos: list[LevelCombo]
    to_keep: list[ReplicateId] = field(default_factory=list)
    to_run: list[ReplicateId] = field(default_factory=list)
    to_drop: list[ReplicateId] = field(default_factory=list)
    uid_counter: int = 0

    @property
    def is_noop(self) -> bool:
        return not self.to_run and not self.to_drop


def plan_update(old, new_schema: LevelSchema, new_config: SimConfig) -> UpdatePlan:
    """Work out which replicates survive, which are new, and which go away.

    ``old`` is an already-run simulation (anything with ``combos``, ``plan``,
    ``run_config`` and ``uid_counter``; ``run_config`` is the config the
    existing replicates ran under). Survival is by combo value equality and
    rep id; new replicates get uids after ``old.uid_counter``, level-major.
    """
    if not old.plan:
        raise UpdateError("nothing to update: the simulation has not been run")
    check_batch_levels(new_schema, new_config.batch_levels)
    if new_config.seed != old.run_config.seed:
        raise UpdateError("the seed cannot change on update; kept replicates used the old seed")
    if new_config.batch_levels != old.run_config.batch_levels:
        raise UpdateError("batch_levels cannot change on update")

    combos = assign_level_ids(new_schema, old.combos)
    existing = {(r.level_id, r.rep_id): r for r in old.plan}
    to_keep, fresh = [], []
    for combo in sorted(combos, key=lambda c: c.level_id):
        for rep in range(1, new_config.num_sim + 1):
            rid = existing.pop((combo.level_id, rep), None)
            if rid is None:
                fresh.append((combo.level_id, rep))
            else:
                to_keep.append(rid)
    to_drop = sorted(existing.values())

    if fresh and old.run_config.uses_batches:
        raise UpdateError(
            "simulations that use batch() can only be updated by removing replicates"
        )

    uid = old.uid_counter
    to_run = []
    for level_id, rep in fresh:
        uid += 1
        to_run.append(ReplicateId(uid, level_id, rep))
    planned = assign_batches(sorted(to_keep) + to_run, list(old.combos) + combos, new_config.batch_levels)
    new_ids = {r.sim_uid for r in to_run}
    to_run = [r for r in planned if r.sim_uid in new_ids]
    return UpdatePlan(combos, sorted(to_keep), to_run, to_drop, uid)
