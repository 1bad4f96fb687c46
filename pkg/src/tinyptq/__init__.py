"""tinyptq: post-training quantization for tinyML CNNs.

A self-contained numpy inference/backprop engine for four reference
architectures, simulated low-bit quantization, cross-layer equalization,
four reconstruction-optimization strategies, bias tuning, and a
BOP/peak-memory cost model.
"""

from . import container, metrics, quant, surrogates
from .engine import Graph, LayerSpec, build_model, fold_batchnorm, forward, backward
from .pipeline import PipelineConfig, QuantizedGraph, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "LayerSpec",
    "build_model",
    "forward",
    "backward",
    "fold_batchnorm",
    "PipelineConfig",
    "QuantizedGraph",
    "run_pipeline",
    "quant",
    "surrogates",
    "metrics",
    "container",
]
