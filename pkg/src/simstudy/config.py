from __future__ import annotations

import os
import secrets
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError

MAX_SEED = (1 << 64) - 1


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not on Linux
        return os.cpu_count() or 1


def entropy_seed() -> int:
    return secrets.randbits(64)


@dataclass(frozen=True)
class SimConfig:
    """Options that apply to the whole simulation.

    ``batch_levels=None`` means the script does not use ``batch()``; an empty
    tuple means it does, with batches defined by ``rep_id`` alone.
    """

    num_sim: int = 1
    seed: int = 0
    parallel: bool = False
    n_workers: int | str = "auto"
    stop_at_error: bool = False
    batch_levels: tuple[str, ...] | None = None
    return_batch_id: bool = False

    def __post_init__(self):
        if isinstance(self.num_sim, bool) or not isinstance(self.num_sim, int) or self.num_sim < 1:
            raise ConfigError(f"num_sim must be a positive integer, got {self.num_sim!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        for flag in ("parallel", "stop_at_error", "return_batch_id"):
            if not isinstance(getattr(self, flag), bool):
                raise ConfigError(f"{flag} must be a boolean")
        if self.n_workers != "auto":
            if isinstance(self.n_workers, bool) or not isinstance(self.n_workers, int) or self.n_workers < 1:
                raise ConfigError(f"n_workers must be a positive integer or 'auto', got {self.n_workers!r}")
        if self.batch_levels is not None:
            if isinstance(self.batch_levels, str):
                raise ConfigError("batch_levels must be a collection of level names")
            names = tuple(sorted(set(self.batch_levels)))
            if not all(isinstance(n, str) for n in names):
                raise ConfigError("batch_levels must contain level names")
            object.__setattr__(self, "batch_levels", names)

    @property
    def uses_batches(self) -> bool:
        return self.batch_levels is not None

    def resolved_workers(self) -> int:
        if self.n_workers == "auto":
            return max(1, available_cores() - 1)
        return self.n_workers

    def updated(self, **changes) -> "SimConfig":
        known = {f.name for f in fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ConfigError(f"unknown config option(s): {', '.join(sorted(unknown))}")
        return replace(self, **changes)

    def to_json(self) -> dict:
        data = asdict(self)
        if data["batch_levels"] is not None:
            data["batch_levels"] = list(data["batch_levels"])
        return data

    @classmethod
    def from_json(cls, data: dict) -> "SimConfig":
        data = dict(data)
        if data.get("batch_levels") is not None:
            data["batch_levels"] = tuple(data["batch_levels"])
        return cls(**data)
