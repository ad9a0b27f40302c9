"""Run replicates: script context, error capture, batch sharing, worker pool."""
from __future__ import annotations

import copy
import linecache
import multiprocessing as mp
import pickle
import sys
import time
import traceback
import warnings
from collections.abc import Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .levels import RESERVED_COLUMNS, LevelCombo, LevelView
from .plan import ReplicateId
from .rng import RngStream, StreamKey, derive_seed

COMPLEX_KEY = ".complex"


@dataclass
class ReplicateOutcome:
    rid: ReplicateId
    runtime: float
    result: dict | None = None
    error: dict | None = None
    warning: dict | None = None
    complex_blob: bytes | None = None


class BatchCache:
    """Worker-local store of batch block values, keyed by (batch_id, block)."""

    def __init__(self):
        self._values: dict[tuple[int, int], Any] = {}
        self._block_counts: dict[int, int] = {}

    def get(self, batch_id: int, block: int, produce: Callable[[], Any]) -> Any:
        key = (batch_id, block)
        if key not in self._values:
            known = self._block_counts.get(batch_id)
            if known is not None and block > known:
                raise UsageError(
                    f"batch {batch_id}: replicate runs more batch blocks than other members ({known})"
                )
            self._values[key] = copy.deepcopy(produce())
        return copy.deepcopy(self._values[key])

    def finish(self, batch_id: int, blocks_used: int) -> None:
        known = self._block_counts.setdefault(batch_id, blocks_used)
        if known != blocks_used:
            raise UsageError(
                f"batch {batch_id}: replicate ran {blocks_used} batch block(s), "
                f"other members ran {known}"
            )


class ScriptContext:
    """What a running script sees: ``L``, ``rng``, ``batch()``, ``warn()``.

    ``L`` is the read-only view of the replicate's level values. ``rng`` is
    the replicate's own stream; code inside ``batch()`` gets a separate
    batch-scoped stream so that the replicate stream is unaffected by whether
    the block ran or was served from the cache.
    """

    def __init__(self, rid: ReplicateId, combo: LevelCombo, rng: RngStream,
                 global_seed: int = 0, batch_levels=None, cache: BatchCache | None = None):
        self.rid = rid
        self.L = LevelView(combo.assignments)
        self.rng = rng
        self._combo = combo
        self._seed = global_seed
        self._batch_levels = batch_levels
        self._cache = cache
        self._blocks = 0
        self._warnings: list[tuple[str, str]] = []
        self._active = True

    sim_uid = property(lambda self: self.rid.sim_uid)
    level_id = property(lambda self: self.rid.level_id)
    rep_id = property(lambda self: self.rid.rep_id)
    batch_id = property(lambda self: self.rid.batch_id)

    def batch(self, block: Callable[[RngStream], Any]) -> Any:
        """Run ``block(rng)`` once per batch and hand every member the same value.

        The block must only build and return values. Blocks are numbered by
        call order, so every member of a batch must call ``batch`` the same
        number of times.
        """
        if not self._active:
            raise UsageError("batch() can only be called while a script is running")
        if self._batch_levels is None:
            raise UsageError("batch() requires batch_levels to be set in the config")
        self._blocks += 1
        index = self._blocks
        shared = {n: self._combo.assignments[n] for n in self._batch_levels}

        def produce():
            seed = derive_seed(self._seed, StreamKey.batch(shared, self.rid.rep_id, index))
            return block(RngStream(seed))

        return self._cache.get(self.rid.batch_id, index, produce)

    def warn(self, message: str) -> None:
        warnings.warn(str(message), UserWarning, stacklevel=2)


def _scalar(value):
    if isinstance(value, np.ndarray) and value.ndim == 0:
        value = value.item()
    if isinstance(value, np.generic):
        value = value.item()
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    raise TypeError(type(value).__name__)


def _identity(rid: ReplicateId, combo: LevelCombo, with_batch: bool) -> dict:
    row = {"sim_uid": rid.sim_uid, "level_id": rid.level_id, "rep_id": rid.rep_id}
    if with_batch:
        row["batch_id"] = rid.batch_id
    row.update(combo.columns())
    return row


def _error_call(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    # frame 0 is the engine's call into the script; frame 1 is the script line that failed
    frame = frames[1] if len(frames) > 1 else frames[-1]
    return (frame.line or frame.name or "").strip()


def _validate_outputs(out, level_names) -> tuple[dict, Any]:
    if not isinstance(out, Mapping):
        raise TypeError("script must return a mapping of output names to values")
    payload = out.get(COMPLEX_KEY)
    has_complex = COMPLEX_KEY in out
    scalars = {}
    for name, value in out.items():
        if name == COMPLEX_KEY:
            continue
        if not isinstance(name, str) or not name.isidentifier():
            raise ValueError(f"invalid output name {name!r}")
        if name in RESERVED_COLUMNS or name in level_names:
            raise ValueError(f"output name {name!r} clashes with a reserved or level column")
        try:
            scalars[name] = _scalar(value)
        except TypeError:
            raise TypeError(
                f"output {name!r} is not a scalar ({type(value).__name__}); "
                f"return complex values under {COMPLEX_KEY!r}"
            ) from None
    if not scalars:
        raise ValueError("empty output")
    return scalars, (payload if has_complex else None)


class _ContractError(Exception):
    """Script returned something the engine cannot store."""


def execute_replicate(rid: ReplicateId, combo: LevelCombo, script: Callable,
                      global_seed: int, batch_levels=None, cache: BatchCache | None = None,
                      stop_at_error: bool = False, with_batch_id: bool = False) -> ReplicateOutcome:
    """Run one replicate, trapping failures into an error row."""
    rng = RngStream(derive_seed(global_seed, StreamKey.replicate(combo.assignments, rid.rep_id)))
    ctx = ScriptContext(rid, combo, rng, global_seed, batch_levels, cache if cache is not None else BatchCache())
    ident = _identity(rid, combo, with_batch_id)
    level_names = set(combo.assignments)
    start = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = script(ctx)
        runtime = time.perf_counter() - start
        ctx._active = False
        for w in caught:
            line = linecache.getline(w.filename, w.lineno).strip()
            ctx._warnings.append((str(w.message), line or f"{w.filename}:{w.lineno}"))
        if batch_levels is not None:
            ctx._cache.finish(rid.batch_id, ctx._blocks)
        try:
            scalars, payload = _validate_outputs(out, level_names)
        except (TypeError, ValueError) as exc:
            raise _ContractError(str(exc)) from None
    except Exception as exc:
        runtime = time.perf_counter() - start
        ctx._active = False
        if stop_at_error:
            raise
        call = "script return value" if isinstance(exc, _ContractError) else _error_call(exc)
        return ReplicateOutcome(rid, runtime, error={**ident, "message": str(exc), "call": call})

    outcome = ReplicateOutcome(rid, runtime, result={**ident, **scalars})
    if payload is not None:
        outcome.complex_blob = pickle.dumps(payload, protocol=4)
    if ctx._warnings:
        outcome.warning = {
            **ident,
            "message": "; ".join(m for m, _ in ctx._warnings),
            "call": "; ".join(c for _, c in ctx._warnings),
        }
    return outcome


def schedule(plan: Sequence[ReplicateId], n_workers: int, batches_in_use: bool = False) -> list[list[ReplicateId]]:
    """Split batches into ``n_workers`` contiguous chunks of similar replicate count.

    Batches are taken in batch_id order; the batch whose first replicate sits
    at cumulative position ``c`` (of ``R`` replicates) goes to chunk
    ``floor(c * n_workers / R)``. Every member of a batch lands in the same
    chunk.
    """
    if n_workers < 1:
        raise ConfigError("n_workers must be at least 1")
    members: dict[int, list[ReplicateId]] = {}
    for rid in sorted(plan, key=lambda r: r.sim_uid):
        members.setdefault(rid.batch_id, []).append(rid)
    if batches_in_use and n_workers > len(members):
        raise ConfigError(
            f"n_workers ({n_workers}) cannot exceed the number of batches ({len(members)}) "
            "when batch() is used"
        )
    total = sum(len(m) for m in members.values())
    chunks: list[list[ReplicateId]] = [[] for _ in range(n_workers)]
    seen = 0
    for batch_id in sorted(members):
        w = seen * n_workers // total
        chunks[w].extend(members[batch_id])
        seen += len(members[batch_id])
    return chunks


class _Progress:
    def __init__(self, total: int, stream=None):
        self.total = total
        self.done = 0
        self.stream = stream if stream is not None else sys.stderr
        self.enabled = total > 0 and hasattr(self.stream, "isatty") and self.stream.isatty()

    def advance(self, k: int = 1):
        self.done += k
        if self.enabled:
            width = 40
            filled = width * self.done // self.total
            pct = 100 * self.done // self.total
            self.stream.write(f"\r  |{'#' * filled}{' ' * (width - filled)}| {pct}%")
            if self.done >= self.total:
                self.stream.write("\n")
            self.stream.flush()


# Job description inherited by forked workers; avoids pickling the script.
_JOB: dict = {}


def _run_chunk(chunk: list[ReplicateId], job: dict | None = None) -> list[ReplicateOutcome]:
    job = job if job is not None else _JOB
    cache = BatchCache()
    combos = job["combos"]
    return [
        execute_replicate(rid, combos[rid.level_id], job["script"], job["seed"], job["batch_levels"],
                          cache, job["stop_at_error"], job["with_batch_id"])
        for rid in chunk
    ]


def run_replicates(replicates: Sequence[ReplicateId], combos: Mapping[int, LevelCombo], script: Callable,
                   seed: int, *, batch_levels=None, stop_at_error=False, with_batch_id=False,
                   n_workers: int = 1, parallel: bool = False) -> list[ReplicateOutcome]:
    """Execute ``replicates`` and return outcomes sorted by sim_uid."""
    job = {"combos": dict(combos), "script": script, "seed": seed, "batch_levels": batch_levels,
           "stop_at_error": stop_at_error, "with_batch_id": with_batch_id}
    progress = _Progress(len(replicates))
    outcomes: list[ReplicateOutcome] = []
    if not parallel or n_workers == 1:
        cache = BatchCache()
        for rid in sorted(replicates):
            outcomes.append(execute_replicate(rid, job["combos"][rid.level_id], script, seed,
                                              batch_levels, cache, stop_at_error, with_batch_id))
            progress.advance()
    else:
        chunks = [c for c in schedule(replicates, n_workers, batch_levels is not None) if c]
        outcomes = _run_pool(chunks, job, progress)
    return sorted(outcomes, key=lambda o: o.rid.sim_uid)


def _run_pool(chunks, job, progress) -> list[ReplicateOutcome]:
    global _JOB
    if "fork" in mp.get_all_start_methods():
        ctx, payload = mp.get_context("fork"), None
        _JOB = job
    else:
        ctx, payload = mp.get_context("spawn"), job  # script must be importable/picklable
    outcomes = []
    try:
        with ProcessPoolExecutor(max_workers=len(chunks), mp_context=ctx) as pool:
            futures = [pool.submit(_run_chunk, chunk, payload) for chunk in chunks]
            try:
                for fut in futures:
                    res = fut.result()
                    outcomes.extend(res)
                    progress.advance(len(res))
            except BaseException:
                for fut in futures:
                    fut.cancel()
                raise
    finally:
        _JOB = {}
    return outcomes


def completion_report(n_total: int, n_errors: int, n_warnings: int) -> str:
    if n_errors == 0 and n_warnings == 0:
        return "Done. No errors or warnings detected."
    parts = []
    if n_errors:
        parts.append(f"Errors detected in {_pct(n_errors, n_total)}% of replicates.")
    if n_warnings:
        parts.append(f"Warnings detected in {_pct(n_warnings, n_total)}% of replicates.")
    return "Done. " + " ".join(parts)


def _pct(k: int, n: int) -> str:
    value = 100.0 * k / n if n else 0.0
    return f"{value:.4g}"
