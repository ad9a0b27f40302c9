"""Reproducible simulation studies: levels, scripts, seeded streams, summaries."""
from .cluster import (ArrayEmulator, ClusterConfig, compile_results, emulate, emulate_program,
                      gen_submit, js_support, run_on_cluster, update_sim_on_cluster)
from .config import SimConfig
from .errors import (ArchiveError, ConfigError, ProtocolError, SchemaError, SimError, SummaryError,
                     UpdateError, UsageError)
from .levels import Structured
from .persistence import load, save
from .rng import RngStream, derive_seed
from .simulation import Simulation, new_sim
from .summary import SummarySpec

__all__ = [
    "ArchiveError", "ArrayEmulator", "ClusterConfig", "ConfigError", "ProtocolError", "RngStream",
    "SchemaError", "SimConfig", "SimError", "Simulation", "Structured", "SummaryError", "SummarySpec",
    "UpdateError", "UsageError", "compile_results", "derive_seed", "emulate", "emulate_program",
    "gen_submit", "js_support", "load", "new_sim", "run_on_cluster", "save", "update_sim_on_cluster",
]
