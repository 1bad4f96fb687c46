from .graph import (
    Graph,
    LayerSpec,
    backward,
    fold_batchnorm,
    forward,
    layer_backward,
    layer_forward,
)
from .layers import EngineError, ShapeError, StateError
from .models import MODEL_NAMES, build_model, graph_params

__all__ = [
    "Graph",
    "LayerSpec",
    "forward",
    "backward",
    "fold_batchnorm",
    "layer_forward",
    "layer_backward",
    "build_model",
    "graph_params",
    "MODEL_NAMES",
    "EngineError",
    "ShapeError",
    "StateError",
]
