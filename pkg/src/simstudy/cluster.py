"""Job-array execution: phase dispatch, task handoff, compile, emulation.

A simulation program wraps its code in three callables and hands them to
:func:`run_on_cluster`. The ``sim_run`` environment variable picks the
phase:

- ``first``: build the simulation, save it to ``<dir>/sim.state``, create
  ``<dir>/sim_results/``
- ``main``: load the state, run this task's share of the replicates, write
  ``sim_results/r_<tid>`` (and ``e_<tid>``/``c_<tid>`` when needed)
- ``last``: load the state, compile every task file, run ``last``, save the
  final state, delete ``sim_results/``
- unset: run all three blocks in-process and return the simulation
"""
from __future__ import annotations

import os
import shutil
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import ConfigError, ProtocolError
from .executor import schedule
from .persistence import load, read_task_files, save
from .simulation import Simulation, TaskContext

PHASE_VAR = "sim_run"
N_TASKS_VAR = "sim_n_tasks"
STATE_NAME = "sim.state"
RESULTS_NAME = "sim_results"
PHASES = ("first", "main", "last", "local")


@dataclass(frozen=True)
class SchedulerInfo:
    name: str
    js_code: str
    tid_var: str


_SCHEDULERS = (
    SchedulerInfo("Slurm", "slurm", "SLURM_ARRAY_TASK_ID"),
    SchedulerInfo("Grid Engine", "sge", "SGE_TASK_ID"),
)

_SUBMIT = {
    "slurm": (
        "sbatch --export=sim_run='first' {script}",
        "sbatch --export=sim_run='main' --array=1-{n} --depend=afterok:<JID1> {script}",
        "sbatch --export=sim_run='last' --depend=afterok:<JID2> {script}",
    ),
    "sge": (
        "qsub -v sim_run='first' {script}",
        "qsub -v sim_run='main' -t 1-{n} -hold_jid <JID1> {script}",
        "qsub -v sim_run='last' -hold_jid <JID2> {script}",
    ),
}


def js_support() -> list[SchedulerInfo]:
    return list(_SCHEDULERS)


def find_scheduler(js_code: str) -> SchedulerInfo | None:
    for info in _SCHEDULERS:
        if info.js_code == js_code:
            return info
    return None


def gen_submit(js_code: str, script_name: str = "run_sim.sh", n_tasks: int = 1) -> str:
    """The three submission commands (first, main array, last) for ``js_code``."""
    if js_code not in _SUBMIT:
        raise ConfigError(f"unsupported job scheduler {js_code!r}; see js_support()")
    if n_tasks < 1:
        raise ConfigError("n_tasks must be at least 1")
    return "\n".join(line.format(script=script_name, n=n_tasks) for line in _SUBMIT[js_code])


@dataclass(frozen=True)
class ClusterConfig:
    js: str | None = None
    tid_var: str | None = None
    dir: str | os.PathLike | None = None
    phase_var: str = PHASE_VAR
    n_tasks_var: str = N_TASKS_VAR

    @classmethod
    def coerce(cls, value) -> "ClusterConfig":
        if value is None:
            return cls()
        if isinstance(value, ClusterConfig):
            return value
        return cls(**dict(value))

    @property
    def workdir(self) -> Path:
        return Path(self.dir) if self.dir is not None else Path.cwd()

    def task_id_var(self) -> str:
        if self.tid_var:
            return self.tid_var
        if self.js:
            info = find_scheduler(self.js)
            if info is None:
                raise ConfigError(f"unsupported job scheduler {self.js!r}; set tid_var instead")
            return info.tid_var
        raise ConfigError("cluster_config needs 'js' or 'tid_var' to find the array task id")


def detect_phase(env: Mapping[str, str] | None = None, var: str = PHASE_VAR) -> str:
    env = os.environ if env is None else env
    value = env.get(var, "")
    if value == "":
        return "local"
    if value in ("first", "main", "last"):
        return value
    raise ConfigError(f"unrecognized {var} value {value!r}; expected first, main, or last")


def _n_tasks(sim: Simulation, work) -> int:
    if sim.config.n_workers != "auto":
        return sim.config.n_workers
    return max(1, len({r.batch_id for r in work.replicates}))


def _task_id(env: Mapping[str, str], cfg: ClusterConfig, n_tasks: int) -> int:
    var = cfg.task_id_var()
    raw = env.get(var)
    if raw is None or raw == "":
        raise ProtocolError(f"array task id variable {var} is not set")
    try:
        tid = int(raw)
    except ValueError:
        raise ProtocolError(f"array task id {var}={raw!r} is not an integer") from None
    if not 1 <= tid <= n_tasks:
        raise ProtocolError(f"task id {tid} is outside 1..{n_tasks}")
    return tid


def _load_state(cfg: ClusterConfig) -> Simulation:
    path = cfg.workdir / STATE_NAME
    if not (path / "manifest.json").is_file():
        raise ProtocolError(f"state file {path} not found; did the 'first' phase run?")
    return load(path)


def _phase_first(first: Callable, cfg: ClusterConfig, env: Mapping, updating: bool) -> Simulation:
    sim = first()
    _check_first(sim, updating)
    raw = env.get(cfg.n_tasks_var)
    if raw:
        sim.config = replace(sim.config, n_workers=int(raw))
    sim.pending()  # surface plan/update errors before any task starts
    save(sim, cfg.workdir / STATE_NAME)
    results = cfg.workdir / RESULTS_NAME
    if results.exists():
        shutil.rmtree(results)
    results.mkdir(parents=True)
    return sim


def _check_first(sim, updating: bool) -> None:
    if not isinstance(sim, Simulation):
        raise ProtocolError("the first block must return the Simulation")
    if updating and not sim.has_run:
        raise ProtocolError("update_sim_on_cluster needs a simulation that has already been run")
    if not updating and sim.has_run:
        raise ProtocolError("run_on_cluster got an already-run simulation; use update_sim_on_cluster")


def _phase_main(first: Callable, main: Callable, cfg: ClusterConfig, env: Mapping) -> Simulation:
    sim = _load_state(cfg)
    # user code is linked, not stored: take the script from a fresh first()
    sim.script = first().script
    work = sim.pending()
    n_tasks = _n_tasks(sim, work)
    tid = _task_id(env, cfg, n_tasks)
    results = cfg.workdir / RESULTS_NAME
    results.mkdir(exist_ok=True)
    sim._task = TaskContext(tid, n_tasks, results)
    try:
        main(sim)
    finally:
        sim._task = None
    if not any((results / f"{p}_{tid}").exists() for p in "re"):
        raise ProtocolError("the main block must call sim.run() (or sim.update() when updating)")
    return sim


def compile_results(sim: Simulation, results_dir) -> Simulation:
    """Fold every task's handoff files into ``sim``; missing tasks are an error."""
    work = sim.pending()
    n_tasks = _n_tasks(sim, work)
    chunks = schedule(work.replicates, n_tasks, sim.config.uses_batches)
    by_task = read_task_files(results_dir, range(1, n_tasks + 1))
    missing = []
    outcomes = []
    for tid, chunk in enumerate(chunks, 1):
        got = {o.rid.sim_uid: o for o in by_task.get(tid, [])}
        if set(got) != {r.sim_uid for r in chunk}:
            missing.append(tid)
            continue
        for rid in chunk:
            got[rid.sim_uid].rid = rid
            outcomes.append(got[rid.sim_uid])
    if missing:
        raise ProtocolError(f"missing output for task id(s): {', '.join(map(str, missing))}", missing)
    outcomes.sort(key=lambda o: o.rid.sim_uid)
    sim._absorb(work, outcomes)
    sim.total_runtime = sum(o.runtime for o in outcomes)
    sim._report(outcomes)
    return sim


def _phase_last(last: Callable, cfg: ClusterConfig) -> Simulation:
    sim = _load_state(cfg)
    results = cfg.workdir / RESULTS_NAME
    if not results.is_dir():
        raise ProtocolError(f"{results} not found; did the 'first' phase run?")
    compile_results(sim, results)
    last(sim)
    save(sim, cfg.workdir / STATE_NAME)
    shutil.rmtree(results)
    return sim


def _dispatch(first, main, last, cluster_config, env, updating) -> Simulation:
    cfg = ClusterConfig.coerce(cluster_config)
    env = os.environ if env is None else env
    phase = detect_phase(env, cfg.phase_var)
    if phase == "local":
        sim = first()
        _check_first(sim, updating)
        main(sim)
        last(sim)
        return sim
    if phase == "first":
        return _phase_first(first, cfg, env, updating)
    if phase == "main":
        return _phase_main(first, main, cfg, env)
    return _phase_last(last, cfg)


def run_on_cluster(first: Callable[[], Simulation], main: Callable[[Simulation], object],
                   last: Callable[[Simulation], object], cluster_config=None,
                   env: Mapping[str, str] | None = None) -> Simulation:
    """Run a simulation as a job array (or locally when ``sim_run`` is unset).

    ``first()`` returns the configured Simulation; ``main(sim)`` calls
    ``sim.run()``; ``last(sim)`` post-processes (summaries, exports).
    """
    return _dispatch(first, main, last, cluster_config, env, updating=False)


def update_sim_on_cluster(first: Callable[[], Simulation], main: Callable[[Simulation], object],
                          last: Callable[[Simulation], object], cluster_config=None,
                          env: Mapping[str, str] | None = None) -> Simulation:
    """Like :func:`run_on_cluster` for updates: ``first()`` loads a saved state
    and declares changes, ``main(sim)`` calls ``sim.update()``."""
    return _dispatch(first, main, last, cluster_config, env, updating=True)


# -- emulation ---------------------------------------------------------------

class ArrayEmulator:
    """Drive the three phases in-process with injected environments."""

    def __init__(self, first, main, last, n_tasks: int, cluster_config=None, updating: bool = False):
        if n_tasks < 1:
            raise ConfigError("n_tasks must be at least 1")
        self.first, self.main, self.last = first, main, last
        self.n_tasks = n_tasks
        cfg = ClusterConfig.coerce(cluster_config)
        if not cfg.tid_var and not cfg.js:
            cfg = replace(cfg, tid_var="SLURM_ARRAY_TASK_ID")
        self.cfg = cfg
        self.updating = updating

    def env(self, phase: str, task_id: int | None = None) -> dict:
        env = {self.cfg.phase_var: phase, self.cfg.n_tasks_var: str(self.n_tasks)}
        if task_id is not None:
            env[self.cfg.task_id_var()] = str(task_id)
        return env

    def _call(self, env):
        return _dispatch(self.first, self.main, self.last, self.cfg, env, self.updating)

    def run_first(self) -> Simulation:
        return self._call(self.env("first"))

    def run_task(self, task_id: int) -> Simulation:
        return self._call(self.env("main", task_id))

    def run_last(self) -> Simulation:
        return self._call(self.env("last"))

    def run(self) -> Simulation:
        self.run_first()
        for tid in range(1, self.n_tasks + 1):
            self.run_task(tid)
        return self.run_last()


def emulate(first, main, last, n_tasks: int, cluster_config=None, updating: bool = False) -> Simulation:
    """Run the full first/main x n_tasks/last protocol in-process."""
    return ArrayEmulator(first, main, last, n_tasks, cluster_config, updating).run()


def emulate_program(command: Sequence[str], n_tasks: int, workdir=None, tid_var: str | None = None,
                    concurrency: int | None = None, env: Mapping[str, str] | None = None) -> Path:
    """Run ``command`` through the protocol as child processes; return the archive path.

    Every supported scheduler's task id variable is injected (plus ``tid_var``
    if given), so the program may use any ``js`` setting. Main tasks run
    concurrently. The final archive is checked for the partition invariant.
    """
    if n_tasks < 1:
        raise ConfigError("n_tasks must be at least 1")
    workdir = Path(workdir) if workdir is not None else Path.cwd()
    base = dict(os.environ if env is None else env)
    base[N_TASKS_VAR] = str(n_tasks)
    tid_vars = {info.tid_var for info in _SCHEDULERS}
    if tid_var:
        tid_vars.add(tid_var)

    def child(phase, tid=None):
        e = dict(base, **{PHASE_VAR: phase})
        if tid is not None:
            e.update({v: str(tid) for v in tid_vars})
        proc = subprocess.run(list(command), cwd=workdir, env=e, capture_output=True, text=True)
        if proc.returncode != 0:
            where = phase if tid is None else f"{phase} task {tid}"
            raise ProtocolError(f"{where} exited with status {proc.returncode}:\n{proc.stderr.strip()}")
        return proc

    child("first")
    with ThreadPoolExecutor(max_workers=concurrency or min(n_tasks, 8)) as pool:
        failures = []
        for tid, fut in [(t, pool.submit(child, "main", t)) for t in range(1, n_tasks + 1)]:
            try:
                fut.result()
            except ProtocolError as exc:
                failures.append((tid, exc))
    if failures:
        raise ProtocolError("; ".join(str(e) for _, e in failures), [t for t, _ in failures])
    last = child("last")
    sys.stdout.write(last.stdout)
    archive = workdir / STATE_NAME
    load(archive)  # load() enforces the partition invariant
    return archive
