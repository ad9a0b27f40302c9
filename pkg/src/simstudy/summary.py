"""Per-combo performance summaries with Monte Carlo standard errors.

MCSE formulas (n successful replicates, S the sample SD with divisor n-1):

    mean, bias   S / sqrt(n)
    mse          sqrt(sum(((est - truth)**2 - mse)**2) / (n * (n - 1)))
    coverage     sqrt(p * (1 - p) / n)
    sd           S / sqrt(2 * (n - 1))
    var          S**2 * sqrt(2 / (n - 1))

Confidence limits are value -/+ Z * MCSE with Z = 1.959964. Median has no
MCSE and gets no MC columns.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import SummaryError

Z_975 = 1.959964
STATS = ("mean", "median", "var", "sd", "bias", "mse", "coverage")
_NEEDS_TWO = {"mean", "bias", "mse", "var", "sd"}
_NO_MCSE = {"median"}

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SummarySpec:
    stat: str
    name: str
    x: str | None = None
    estimate: str | None = None
    truth: float | str | None = None
    se: str | None = None
    lower: str | None = None
    upper: str | None = None

    def __post_init__(self):
        if self.stat not in STATS:
            raise SummaryError(f"unknown statistic {self.stat!r}; choose from {', '.join(STATS)}")
        if not isinstance(self.name, str) or not self.name.isidentifier():
            raise SummaryError(f"invalid summary name {self.name!r}")
        if self.stat in ("mean", "median", "var", "sd"):
            if not self.x:
                raise SummaryError(f"{self.stat} needs 'x'")
        elif self.stat in ("bias", "mse"):
            if not self.estimate or self.truth is None:
                raise SummaryError(f"{self.stat} needs 'estimate' and 'truth'")
        else:
            if self.truth is None:
                raise SummaryError("coverage needs 'truth'")
            by_se = bool(self.estimate and self.se)
            by_ci = bool(self.lower and self.upper)
            if by_se == by_ci:
                raise SummaryError("coverage needs either (estimate, se) or (lower, upper)")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SummarySpec":
        allowed = {"stat", "name", "x", "estimate", "truth", "se", "lower", "upper"}
        extra = set(d) - allowed
        if extra:
            raise SummaryError(f"unknown summary field(s): {', '.join(sorted(extra))}")
        if "stat" not in d or "name" not in d:
            raise SummaryError("summary specs need 'stat' and 'name'")
        return cls(**d)

    def columns(self) -> list[str]:
        cols = [self.x, self.estimate, self.se, self.lower, self.upper]
        if isinstance(self.truth, str):
            cols.append(self.truth)
        return [c for c in cols if c]


def _numeric(rows: Sequence[Mapping], col: str) -> np.ndarray:
    vals = []
    for row in rows:
        v = row.get(col)
        if v is None:
            vals.append(np.nan)
        elif isinstance(v, (bool, int, float)):
            vals.append(float(v))
        else:
            raise SummaryError(f"column {col!r} is not numeric (found {v!r})")
    return np.asarray(vals, dtype=float)


def mcse_mean(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def mse_and_mcse(est: np.ndarray, truth) -> tuple[float, float]:
    sq = (est - truth) ** 2
    n = sq.size
    mse = float(sq.mean())
    se = math.sqrt(float(((sq - mse) ** 2).sum()) / (n * (n - 1))) if n > 1 else math.nan
    return mse, se


def coverage_mcse(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def _lower_median(x: np.ndarray) -> float:
    s = np.sort(x)
    return float(s[(s.size - 1) // 2])


def _evaluate(spec: SummarySpec, rows: Sequence[Mapping]) -> tuple[float, float, int, int]:
    """(value, mcse, n_used, n_excluded) for one spec over one combo's rows."""
    cols = {c: _numeric(rows, c) for c in spec.columns()}
    if isinstance(spec.truth, str):
        truth = cols[spec.truth]
    else:
        truth = np.full(len(rows), 0.0 if spec.truth is None else float(spec.truth))
    keep = np.isfinite(truth)
    for arr in cols.values():
        keep &= np.isfinite(arr)
    n = int(keep.sum())
    excluded = len(rows) - n
    if n == 0:
        return math.nan, math.nan, 0, excluded
    t = truth[keep]
    stat = spec.stat
    if stat in ("mean", "median", "var", "sd"):
        x = cols[spec.x][keep]
        if stat == "mean":
            return float(x.mean()), (mcse_mean(x) if n > 1 else math.nan), n, excluded
        if stat == "median":
            return _lower_median(x), math.nan, n, excluded
        if n < 2:
            return math.nan, math.nan, n, excluded
        s = float(np.std(x, ddof=1))
        if stat == "var":
            return s * s, s * s * math.sqrt(2.0 / (n - 1)), n, excluded
        return s, s / math.sqrt(2.0 * (n - 1)), n, excluded
    if stat == "bias":
        e = cols[spec.estimate][keep]
        return float((e - t).mean()), (mcse_mean(e - t) if n > 1 else math.nan), n, excluded
    if stat == "mse":
        e = cols[spec.estimate][keep]
        mse, se = mse_and_mcse(e, t)
        return mse, se, n, excluded
    if spec.se:
        e, se_est = cols[spec.estimate][keep], cols[spec.se][keep]
        covered = np.abs(e - t) <= Z_975 * se_est
    else:
        covered = (cols[spec.lower][keep] <= t) & (t <= cols[spec.upper][keep])
    p = float(covered.mean())
    return p, coverage_mcse(p, n), n, excluded


def summarize(rows: Sequence[Mapping], level_columns: Sequence[str], specs: Sequence, mc_se: bool = False,
              combos: Mapping[int, Mapping] | None = None) -> pd.DataFrame:
    """One row per level combo present in ``rows``.

    ``rows`` are result rows (dicts with level_id, level columns, outputs).
    The frame's ``attrs["excluded"]`` maps each spec name to the number of
    replicates dropped for missing or non-finite inputs.
    """
    specs = [s if isinstance(s, SummarySpec) else SummarySpec.from_dict(s) for s in specs]
    names = [s.name for s in specs]
    reserved = {"level_id", "n_reps", *level_columns}
    dupes = {n for n in names if names.count(n) > 1} | (set(names) & reserved)
    if dupes:
        raise SummaryError(f"summary name collision: {', '.join(sorted(dupes))}")
    present = set()
    for row in rows:
        present.update(row)
    for spec in specs:
        missing = [c for c in spec.columns() if c not in present] if rows else []
        if missing:
            raise SummaryError(f"{spec.name}: unknown column(s) {', '.join(missing)}")

    groups: dict[int, list[Mapping]] = {}
    for row in rows:
        groups.setdefault(row["level_id"], []).append(row)

    records = []
    excluded = {s.name: 0 for s in specs}
    for level_id in sorted(groups):
        members = groups[level_id]
        rec: dict[str, Any] = {"level_id": level_id}
        first = combos[level_id] if combos else members[0]
        for col in level_columns:
            rec[col] = first[col]
        rec["n_reps"] = len(members)
        extra = {}
        for spec in specs:
            if mc_se and spec.stat in _NEEDS_TWO and len(members) < 2:
                raise SummaryError(f"{spec.name}: Monte Carlo SE needs at least 2 replicates "
                                   f"(level_id {level_id} has {len(members)})")
            value, se, n_used, n_excl = _evaluate(spec, members)
            if mc_se and spec.stat in _NEEDS_TWO and n_used < 2:
                raise SummaryError(f"{spec.name}: fewer than 2 usable values at level_id {level_id}")
            excluded[spec.name] += n_excl
            rec[spec.name] = value
            if mc_se and spec.stat not in _NO_MCSE:
                extra[f"{spec.name}_mc_se"] = se
                extra[f"{spec.name}_mc_ci_l"] = value - Z_975 * se
                extra[f"{spec.name}_mc_ci_u"] = value + Z_975 * se
        rec.update(extra)
        records.append(rec)

    columns = ["level_id", *level_columns, "n_reps", *names]
    if mc_se:
        for s in specs:
            if s.stat not in _NO_MCSE:
                columns += [f"{s.name}_mc_se", f"{s.name}_mc_ci_l", f"{s.name}_mc_ci_u"]
    frame = pd.DataFrame.from_records(records, columns=columns)
    frame.attrs["excluded"] = excluded
    for name, k in excluded.items():
        if k:
            log.warning("summary %s: excluded %d replicate(s) with missing or non-finite values", name, k)
    return frame
