"""On-disk archive of a simulation plus the per-task handoff files.

Archive layout (a directory)::

    manifest.json      format_version, seed, config, schema, combos, plan, ...
    results.jsonl      one JSON object per result row, ordered by sim_uid
    errors.jsonl       same, for error rows
    warnings.jsonl     same, for warning rows
    runtimes.jsonl     {"sim_uid": .., "runtime": ..} for every executed replicate
    complex/<sim_uid>  raw pickled payload attached under ".complex"

Row files never contain runtimes, so two runs of the same simulation in
different execution modes produce byte-identical row files. Numbers are
written with Python's shortest round-trip repr.

Task handoff files in ``sim_results/``::

    r_<tid>   JSON lines {"kind": "result", "row": {...}, "runtime": x[, "warning": {...}]}
    e_<tid>   JSON lines {"kind": "error", "row": {...}, "runtime": x[, "warning": {...}]}
    c_<tid>   JSON lines {"sim_uid": n, "blob": base64}
"""
from __future__ import annotations

import base64
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterable

from .errors import ArchiveError
from .executor import ReplicateOutcome
from .plan import ReplicateId

FORMAT_VERSION = "1.0"
SUPPORTED_MAJOR = 1
TABLES = ("results", "errors", "warnings")


def dump_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def _write_lines(path: Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dump_record(rec))
            fh.write("\n")


def read_records(path: Path) -> list[dict]:
    records = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ArchiveError(f"{path}: corrupt record at line {lineno}: {exc.msg}") from None
                if not isinstance(rec, dict):
                    raise ArchiveError(f"{path}: corrupt record at line {lineno}: not an object")
                records.append(rec)
    except OSError as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from None
    return records


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _lines_bytes(records: Iterable[dict]) -> bytes:
    return "".join(dump_record(r) + "\n" for r in records).encode("utf-8")


def save(sim, path) -> Path:
    """Write ``sim`` to the archive directory ``path`` (replacing it if present)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        manifest = sim.manifest()
        manifest["format_version"] = FORMAT_VERSION
        with open(staging / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        for name in TABLES:
            table = getattr(sim, f"_{name}")
            _write_lines(staging / f"{name}.jsonl", (table[uid] for uid in sorted(table)))
        _write_lines(staging / "runtimes.jsonl",
                     ({"sim_uid": uid, "runtime": sim._runtimes[uid]} for uid in sorted(sim._runtimes)))
        (staging / "complex").mkdir()
        for uid, blob in sorted(sim._complex.items()):
            (staging / "complex" / str(uid)).write_bytes(blob)
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
            os.replace(staging, path)
            shutil.rmtree(old)
        else:
            os.replace(staging, path)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return path


def load(path):
    """Read an archive written by :func:`save` into a new Simulation (no script)."""
    from .simulation import Simulation

    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise ArchiveError(f"{path} is not a simulation archive (no manifest.json)")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot read {manifest_path}: {exc}") from None
    version = str(manifest.get("format_version", ""))
    try:
        major = int(version.split(".")[0])
    except ValueError:
        raise ArchiveError(f"archive has no valid format_version ({version!r})") from None
    if major > SUPPORTED_MAJOR:
        raise ArchiveError(f"unsupported archive format version {version} (this build reads {FORMAT_VERSION})")

    tables = {}
    for name in TABLES:
        rows = read_records(path / f"{name}.jsonl")
        table = {}
        for row in rows:
            uid = row.get("sim_uid")
            if uid in table:
                raise ArchiveError(f"{name}.jsonl: duplicate sim_uid {uid}")
            table[uid] = row
        tables[name] = table
    runtimes = {r["sim_uid"]: r["runtime"] for r in read_records(path / "runtimes.jsonl")}
    blobs = {}
    for uid in manifest.get("complex_uids", []):
        blob_path = path / "complex" / str(uid)
        if not blob_path.is_file():
            raise ArchiveError(f"missing complex payload for sim_uid {uid}")
        blobs[uid] = blob_path.read_bytes()

    sim = Simulation.from_manifest(manifest, tables["results"], tables["errors"], tables["warnings"],
                                   runtimes, blobs)
    if sim.has_run:
        planned = {r.sim_uid for r in sim.plan}
        res, err = set(tables["results"]), set(tables["errors"])
        if res & err or (res | err) != planned:
            raise ArchiveError("archive violates the partition invariant: results and errors "
                               "must cover the plan exactly once")
    return sim


# -- task handoff ----------------------------------------------------------

def write_task_files(results_dir, task_id: int, outcomes: list[ReplicateOutcome]) -> None:
    """Write one array task's outcomes (only ever this task's own files)."""
    results_dir = Path(results_dir)
    good, bad, blobs = [], [], []
    for o in sorted(outcomes, key=lambda o: o.rid.sim_uid):
        if o.result is not None:
            rec = {"kind": "result", "row": o.result, "runtime": o.runtime}
            good.append(rec)
            if o.complex_blob is not None:
                blobs.append({"sim_uid": o.rid.sim_uid,
                              "blob": base64.b64encode(o.complex_blob).decode("ascii")})
        else:
            rec = {"kind": "error", "row": o.error, "runtime": o.runtime}
            bad.append(rec)
        if o.warning is not None:
            rec["warning"] = o.warning
    if bad:
        atomic_write_bytes(results_dir / f"e_{task_id}", _lines_bytes(bad))
    if blobs:
        atomic_write_bytes(results_dir / f"c_{task_id}", _lines_bytes(blobs))
    # r_ last: its presence marks the task as finished
    atomic_write_bytes(results_dir / f"r_{task_id}", _lines_bytes(good))


def read_task_files(results_dir, task_ids: Iterable[int]) -> dict[int, list[ReplicateOutcome]]:
    """Collect outcomes per task id; absent tasks map to no entry.

    Raises ArchiveError if a sim_uid appears in more than one file.
    """
    results_dir = Path(results_dir)
    seen: dict[int, str] = {}
    out: dict[int, list[ReplicateOutcome]] = {}
    for tid in task_ids:
        r_path, e_path, c_path = (results_dir / f"{p}_{tid}" for p in "rec")
        if not r_path.exists() and not e_path.exists():
            continue
        by_uid: dict[int, ReplicateOutcome] = {}
        for p in (r_path, e_path):
            if not p.exists():
                continue
            for rec in read_records(p):
                row = rec["row"]
                uid = row["sim_uid"]
                rid = ReplicateId(uid, row["level_id"], row["rep_id"], row.get("batch_id", 0))
                if uid in seen:
                    raise ArchiveError(f"sim_uid {uid} appears in both {seen[uid]} and {p.name}")
                seen[uid] = p.name
                o = ReplicateOutcome(rid, rec["runtime"])
                o.warning = rec.get("warning")
                if rec["kind"] == "result":
                    o.result = row
                else:
                    o.error = row
                by_uid[uid] = o
        if c_path.exists():
            for rec in read_records(c_path):
                by_uid[rec["sim_uid"]].complex_blob = base64.b64decode(rec["blob"])
        out[tid] = list(by_uid.values())
    return out
