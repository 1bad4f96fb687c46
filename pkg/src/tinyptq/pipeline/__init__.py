from .cle import cle_equalize, find_pairs, pair_ranges
from .config import ConfigError, PipelineConfig
from .optimize import Unit, bias_tune, make_units, optimize, run_pipeline
from .qgraph import QuantizedGraph, attach_and_init, recalibrate_activations

__all__ = [
    "PipelineConfig",
    "ConfigError",
    "QuantizedGraph",
    "attach_and_init",
    "recalibrate_activations",
    "cle_equalize",
    "find_pairs",
    "pair_ranges",
    "Unit",
    "make_units",
    "optimize",
    "bias_tune",
    "run_pipeline",
]
