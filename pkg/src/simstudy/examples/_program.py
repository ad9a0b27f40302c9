"""Command-line wrapper shared by the example simulation programs.

Each example defines ``first``/``main``/``last`` blocks for a fresh run and
for an update. The wrapper hands them to the phase-aware entry points, so
the same program runs locally (``sim_run`` unset) or as a job array.
"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Callable

from ..cluster import STATE_NAME, ClusterConfig, detect_phase, run_on_cluster, update_sim_on_cluster
from ..persistence import load, save
from ..simulation import Simulation


def summary_writer(path: Path, summarize: Callable[[Simulation], object]) -> Callable[[Simulation], None]:
    def last(sim: Simulation) -> None:
        frame = summarize(sim)
        frame.to_csv(path, index=False)
        print(frame.to_string(index=False))
    return last


def run_program(prog: str, build: Callable[[], Simulation], apply_update: Callable[[Simulation], Simulation],
                summarize: Callable[[Simulation], object], argv=None) -> Simulation:
    parser = argparse.ArgumentParser(prog=prog, description=f"Run the {prog} example study.")
    parser.add_argument("--dir", default=".", help="working directory for the state and task files")
    parser.add_argument("--update", action="store_true", help="apply the example's update to a saved run")
    parser.add_argument("--js", default=None, help="job scheduler code (slurm, sge)")
    parser.add_argument("--tid-var", default=None, help="task id variable for other schedulers")
    parser.add_argument("--csv", default=None, help="summary CSV path (default <dir>/summary.csv)")
    args = parser.parse_args(argv)

    workdir = Path(args.dir)
    workdir.mkdir(parents=True, exist_ok=True)
    cfg = ClusterConfig(js=args.js, tid_var=args.tid_var or ("SLURM_ARRAY_TASK_ID" if not args.js else None),
                        dir=workdir)
    state = workdir / STATE_NAME
    last = summary_writer(Path(args.csv) if args.csv else workdir / "summary.csv", summarize)
    quiet = {"quiet": True}

    if args.update:
        sim = update_sim_on_cluster(
            first=lambda: apply_update(load(state)),
            main=lambda s: s.update(**quiet),
            last=last,
            cluster_config=cfg,
        )
    else:
        sim = run_on_cluster(first=build, main=lambda s: s.run(**quiet), last=last, cluster_config=cfg)
    if detect_phase() == "local":
        save(sim, state)
    return sim
