"""The simulation object: levels, config, script, plan, and result tables."""
from __future__ import annotations

import pickle
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

import pandas as pd

from .config import SimConfig, entropy_seed
from .errors import ConfigError, UsageError
from .executor import ReplicateOutcome, completion_report, run_replicates, schedule
from .levels import LevelCombo, LevelSchema, assign_level_ids
from .plan import ReplicateId, UpdatePlan, build_plan, check_batch_levels, plan_update
from .summary import summarize as _summarize

VARS = ("seed", "total_runtime", "num_sim", "n_level_combos", "n_replicates", "uid_counter",
        "created_at", "start_time", "end_time")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


@dataclass
class TaskContext:
    """Set on a simulation while it executes as one job-array task."""

    task_id: int
    n_tasks: int
    results_dir: Path


@dataclass
class PendingWork:
    combos: list[LevelCombo]
    replicates: list[ReplicateId]  # what still has to execute
    update: UpdatePlan | None


class Simulation:
    """A simulation study: declare levels/config/script, then run and summarize."""

    def __init__(self, seed: int | None = None):
        self.schema = LevelSchema()
        self.config = SimConfig(seed=entropy_seed() if seed is None else seed)
        self.run_config: SimConfig | None = None  # config of the last completed run/update
        self.script: Callable | None = None
        self.combos: list[LevelCombo] = []
        self.plan: list[ReplicateId] = []
        self.uid_counter = 0
        self.has_run = False
        self.total_runtime = 0.0
        self.created_at = _now()
        self.start_time: str | None = None
        self.end_time: str | None = None
        self._results: dict[int, dict] = {}
        self._errors: dict[int, dict] = {}
        self._warnings: dict[int, dict] = {}
        self._runtimes: dict[int, float] = {}
        self._complex: dict[int, bytes] = {}
        self._task: TaskContext | None = None
        self.last_report: str | None = None

    # -- declaration -------------------------------------------------------
    def set_levels(self, levels: Mapping[str, Any] | None = None, **kwargs) -> "Simulation":
        merged = dict(levels or {})
        merged.update(kwargs)
        self.schema = LevelSchema.from_mapping(merged)
        return self

    def set_script(self, script: Callable) -> "Simulation":
        if not callable(script):
            raise UsageError("the script must be callable as script(ctx)")
        self.script = script
        return self

    def set_config(self, **options) -> "Simulation":
        self.config = self.config.updated(**options)
        return self

    # -- bookkeeping -------------------------------------------------------
    @property
    def combos_by_id(self) -> dict[int, LevelCombo]:
        return {c.level_id: c for c in self.combos}

    def current_combos(self) -> list[LevelCombo]:
        return assign_level_ids(self.schema, self.combos)

    def pending(self) -> PendingWork:
        """Replicates that run()/update() would execute now."""
        if not self.has_run:
            check_batch_levels(self.schema, self.config.batch_levels)
            combos = assign_level_ids(self.schema)
            return PendingWork(combos, build_plan(self.schema, self.config), None)
        up = plan_update(self, self.schema, self.config)
        return PendingWork(up.combos, up.to_run, up)

    def _check_parallel(self, replicates) -> None:
        cfg = self.config
        if not cfg.parallel or not cfg.uses_batches:
            return
        if cfg.n_workers == "auto":
            raise ConfigError("n_workers must be set explicitly when running batch() code in parallel")
        schedule(replicates, cfg.n_workers, batches_in_use=True)

    def _execute(self, work: PendingWork) -> list[ReplicateOutcome]:
        if self.script is None:
            raise UsageError("no script set; call set_script() first")
        combos = {c.level_id: c for c in work.combos}
        cfg = self.config
        if self._task is not None:
            chunks = schedule(work.replicates, self._task.n_tasks, cfg.uses_batches)
            mine = chunks[self._task.task_id - 1]
            return run_replicates(mine, combos, self.script, cfg.seed, batch_levels=cfg.batch_levels,
                                  stop_at_error=cfg.stop_at_error, with_batch_id=cfg.return_batch_id)
        self._check_parallel(work.replicates)
        return run_replicates(work.replicates, combos, self.script, cfg.seed,
                              batch_levels=cfg.batch_levels, stop_at_error=cfg.stop_at_error,
                              with_batch_id=cfg.return_batch_id, n_workers=cfg.resolved_workers(),
                              parallel=cfg.parallel)

    def _absorb(self, work: PendingWork, outcomes: list[ReplicateOutcome]) -> None:
        """Fold executed outcomes (and any update drops) into the tables."""
        if work.update is not None:
            for rid in work.update.to_drop:
                for table in (self._results, self._errors, self._warnings, self._runtimes, self._complex):
                    table.pop(rid.sim_uid, None)
            known = {c.level_id for c in self.combos}
            self.combos = self.combos + [c for c in work.combos if c.level_id not in known]
            self.plan = sorted(work.update.to_keep + work.update.to_run)
            self.uid_counter = max(self.uid_counter, work.update.uid_counter)
        else:
            self.combos = list(work.combos)
            self.plan = list(work.replicates)
            self.uid_counter = max((r.sim_uid for r in self.plan), default=0)
        self.run_config = self.config
        for o in outcomes:
            uid = o.rid.sim_uid
            self._runtimes[uid] = o.runtime
            if o.result is not None:
                self._results[uid] = o.result
            else:
                self._errors[uid] = o.error
            if o.warning is not None:
                self._warnings[uid] = o.warning
            if o.complex_blob is not None:
                self._complex[uid] = o.complex_blob
        for table in (self._results, self._errors, self._warnings, self._runtimes, self._complex):
            for uid in sorted(table):
                table[uid] = table.pop(uid)
        self.has_run = True

    def _report(self, outcomes: list[ReplicateOutcome], quiet: bool = False) -> None:
        n_err = sum(o.error is not None for o in outcomes)
        n_warn = sum(o.warning is not None for o in outcomes)
        self.last_report = completion_report(len(outcomes), n_err, n_warn)
        if not quiet:
            print(self.last_report)

    def _go(self, quiet: bool) -> "Simulation":
        work = self.pending()
        if self._task is not None:
            from .persistence import write_task_files

            write_task_files(self._task.results_dir, self._task.task_id, self._execute(work))
            return self
        self.start_time = _now()
        t0 = time.perf_counter()
        outcomes = self._execute(work)
        self.total_runtime = time.perf_counter() - t0
        self.end_time = _now()
        self._absorb(work, outcomes)
        self._report(outcomes, quiet)
        return self

    # -- execution ---------------------------------------------------------
    def run(self, quiet: bool = False) -> "Simulation":
        """Execute every planned replicate."""
        if self.has_run:
            raise UsageError("simulation already run; use update() to add levels or replicates")
        return self._go(quiet)

    def update(self, quiet: bool = False) -> "Simulation":
        """Apply changed levels/config: run only new replicates, drop removed ones."""
        if not self.has_run:
            raise UsageError("update() needs a simulation that has already been run")
        return self._go(quiet)

    # -- results -----------------------------------------------------------
    def _frame(self, table: dict[int, dict], tail: tuple[str, ...] = ()) -> pd.DataFrame:
        level_cols = self.schema.names
        head = ["sim_uid", "level_id", "rep_id"]
        if self.config.return_batch_id:
            head.append("batch_id")
        records = []
        outputs: list[str] = []
        for uid in sorted(table):
            row = dict(table[uid])
            row["runtime"] = self._runtimes.get(uid)
            for k in row:
                if k not in head and k not in level_cols and k != "runtime" and k not in outputs and k not in tail:
                    outputs.append(k)
            records.append(row)
        present_levels = [c for c in level_cols if any(c in r for r in records)] if records else level_cols
        columns = head + present_levels + ["runtime"] + outputs + list(tail)
        return pd.DataFrame.from_records(records, columns=columns)

    @property
    def results(self) -> pd.DataFrame:
        return self._frame(self._results)

    @property
    def errors(self) -> pd.DataFrame:
        return self._frame(self._errors, ("message", "call"))

    @property
    def warnings(self) -> pd.DataFrame:
        return self._frame(self._warnings, ("message", "call"))

    def result_rows(self) -> list[dict]:
        return [self._results[uid] for uid in sorted(self._results)]

    def summarize(self, *specs, mc_se: bool = False) -> pd.DataFrame:
        """Summary statistics per level combo; specs are dicts or SummarySpec."""
        combos = {c.level_id: c.columns() for c in self.combos}
        return _summarize(self.result_rows(), self.schema.names, specs, mc_se=mc_se, combos=combos)

    def get_complex(self, sim_uid: int) -> Any:
        try:
            blob = self._complex[sim_uid]
        except KeyError:
            raise KeyError(f"no complex data stored for sim_uid {sim_uid}") from None
        return pickle.loads(blob)

    def vars(self, name: str) -> Any:
        if name == "seed":
            return self.config.seed
        if name == "num_sim":
            return self.config.num_sim
        if name == "n_level_combos":
            return self.schema.n_combos()
        if name == "n_replicates":
            return len(self.plan)
        if name in ("total_runtime", "uid_counter", "created_at", "start_time", "end_time"):
            return getattr(self, name)
        raise KeyError(f"unknown variable {name!r}; available: {', '.join(VARS)}")

    # -- persistence -------------------------------------------------------
    def save(self, path) -> Path:
        from .persistence import save

        return save(self, path)

    @staticmethod
    def load(path) -> "Simulation":
        from .persistence import load

        return load(path)

    def manifest(self) -> dict:
        return {
            "seed": self.config.seed,
            "config": self.config.to_json(),
            "run_config": None if self.run_config is None else self.run_config.to_json(),
            "schema": self.schema.to_json(),
            "combos": [c.to_json() for c in self.combos],
            "plan": [r.to_json() for r in self.plan],
            "uid_counter": self.uid_counter,
            "has_run": self.has_run,
            "total_runtime": self.total_runtime,
            "created_at": self.created_at,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "complex_uids": sorted(self._complex),
        }

    @classmethod
    def from_manifest(cls, manifest: dict, results, errors, warnings, runtimes, blobs) -> "Simulation":
        sim = cls(seed=manifest["seed"])
        sim.config = SimConfig.from_json(manifest["config"])
        if manifest.get("run_config") is not None:
            sim.run_config = SimConfig.from_json(manifest["run_config"])
        sim.schema = LevelSchema.from_json(manifest["schema"])
        sim.combos = [LevelCombo.from_json(c) for c in manifest["combos"]]
        sim.plan = [ReplicateId.from_json(r) for r in manifest["plan"]]
        sim.uid_counter = manifest["uid_counter"]
        sim.has_run = manifest["has_run"]
        sim.total_runtime = manifest["total_runtime"]
        sim.created_at = manifest["created_at"]
        sim.start_time = manifest["start_time"]
        sim.end_time = manifest["end_time"]
        sim._results, sim._errors, sim._warnings = results, errors, warnings
        sim._runtimes, sim._complex = runtimes, blobs
        return sim


def new_sim(seed: int | None = None) -> Simulation:
    """Create an empty simulation; without ``seed`` one is drawn from OS entropy."""
    return Simulation(seed)
