"""Layer graph: specification, shape inference, forward/backward execution
and batchnorm folding.

Edges are numbered 0..L where edge 0 is the network input and edge i+1 is
the output of layer i. A layer's `inputs` list names edge ids that must
precede it, which keeps every graph acyclic by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as K
from .layers import EngineError, ShapeError, StateError

WEIGHTED_KINDS = ("conv2d", "dwconv2d", "conv1d", "fc")
KINDS = WEIGHTED_KINDS + ("avgpool", "maxpool", "relu", "batchnorm", "add", "flatten")


@dataclass
class LayerSpec:
    kind: str
    name: str
    inputs: list[int]
    params: dict = field(default_factory=dict)
    kernel: tuple = ()
    stride: tuple = ()
    padding: str = "valid"
    eps: float = 1e-5

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    def copy(self) -> "LayerSpec":
        return replace(
            self,
            inputs=list(self.inputs),
            params={k: v.copy() for k, v in self.params.items()},
        )


@dataclass
class Graph:
    layers: list[LayerSpec]
    input_shape: tuple  # per-sample shape, no batch dimension
    blocks: list = field(default_factory=list)  # (name, [layer ids]) covering all layers

    def __post_init__(self):
        self.validate()

    @property
    def output_edge(self) -> int:
        return len(self.layers)

    def out_edge(self, layer_id: int) -> int:
        return layer_id + 1

    def edge_shapes(self) -> list[tuple]:
        """Per-sample shape of every edge; raises ShapeError naming the layer."""
        shapes = [tuple(self.input_shape)]
        for li, layer in enumerate(self.layers):
            try:
                shapes.append(_infer_shape(layer, [shapes[e] for e in layer.inputs]))
            except EngineError as exc:
                raise ShapeError(f"layer {li} ({layer.name}): {exc}") from exc
        return shapes

    def consumers(self) -> list[list[int]]:
        """consumers[edge] = ids of layers reading that edge."""
        cons = [[] for _ in range(len(self.layers) + 1)]
        for li, layer in enumerate(self.layers):
            for e in layer.inputs:
                cons[e].append(li)
        return cons

    def validate(self) -> None:
        names = set()
        for li, layer in enumerate(self.layers):
            if layer.kind not in KINDS:
                raise ShapeError(f"layer {li}: unknown kind {layer.kind!r}")
            if layer.name in names:
                raise ShapeError(f"duplicate layer name {layer.name!r}")
            names.add(layer.name)
            for e in layer.inputs:
                if not 0 <= e <= li:
                    raise ShapeError(f"layer {li} ({layer.name}): input edge {e} does not precede it")
            if layer.kernel and any(k < 1 for k in layer.kernel):
                raise ShapeError(f"layer {li} ({layer.name}): kernel extents must be >= 1")
            if layer.stride and any(s < 1 for s in layer.stride):
                raise ShapeError(f"layer {li} ({layer.name}): stride must be >= 1")
            if layer.padding not in ("same", "valid"):
                raise ShapeError(f"layer {li} ({layer.name}): bad padding {layer.padding!r}")
        if self.blocks:
            covered = [li for _, ids in self.blocks for li in ids]
            if sorted(covered) != list(range(len(self.layers))):
                raise ShapeError("block partition must cover every layer exactly once")
        self.edge_shapes()  # raises on any inconsistency

    def copy(self) -> "Graph":
        return Graph(
            layers=[l.copy() for l in self.layers],
            input_shape=tuple(self.input_shape),
            blocks=[(n, list(ids)) for n, ids in self.blocks],
        )


def _infer_shape(layer: LayerSpec, in_shapes: list[tuple]) -> tuple:
    kind = layer.kind
    x = in_shapes[0]
    if kind == "conv2d":
        kh, kw, cin, cout = layer.params["weight"].shape
        if len(x) != 3 or x[2] != cin:
            raise ShapeError(f"expected (H,W,{cin}), got {x}")
        sh, sw = layer.stride
        return (
            K.conv_out_size(x[0], kh, sh, layer.padding),
            K.conv_out_size(x[1], kw, sw, layer.padding),
            cout,
        )
    if kind == "dwconv2d":
        kh, kw, c = layer.params["weight"].shape
        if len(x) != 3 or x[2] != c:
            raise ShapeError(f"expected (H,W,{c}), got {x}")
        sh, sw = layer.stride
        return (
            K.conv_out_size(x[0], kh, sh, layer.padding),
            K.conv_out_size(x[1], kw, sw, layer.padding),
            c,
        )
    if kind == "conv1d":
        k, cin, cout = layer.params["weight"].shape
        if len(x) != 2 or x[1] != cin:
            raise ShapeError(f"expected (L,{cin}), got {x}")
        (s,) = layer.stride
        return (K.conv_out_size(x[0], k, s, layer.padding), cout)
    if kind == "fc":
        cin, cout = layer.params["weight"].shape
        if len(x) != 1 or x[0] != cin:
            raise ShapeError(f"expected ({cin},), got {x}")
        return (cout,)
    if kind in ("avgpool", "maxpool"):
        if len(x) - 1 != len(layer.kernel):
            raise ShapeError(f"pool kernel rank {len(layer.kernel)} vs input {x}")
        spatial = tuple(
            K.conv_out_size(x[i], layer.kernel[i], layer.stride[i], "valid")
            for i in range(len(layer.kernel))
        )
        return spatial + (x[-1],)
    if kind == "relu":
        return x
    if kind == "batchnorm":
        c = layer.params["gamma"].shape[0]
        if x[-1] != c:
            raise ShapeError(f"batchnorm over {c} channels, input {x}")
        return x
    if kind == "add":
        if in_shapes[0] != in_shapes[1]:
            raise ShapeError(f"add operands differ: {in_shapes[0]} vs {in_shapes[1]}")
        return x
    if kind == "flatten":
        return (int(np.prod(x)),)
    raise ShapeError(f"unknown kind {kind!r}")


def layer_forward(layer: LayerSpec, ins: list[np.ndarray], weight=None) -> np.ndarray:
    """Run one layer; `weight` overrides the stored weight tensor (used for
    simulated quantization)."""
    kind = layer.kind
    p = layer.params
    w = weight if weight is not None else p.get("weight")
    if kind == "conv2d":
        return K.conv2d_forward(ins[0], w, p["bias"], layer.stride, layer.padding)
    if kind == "dwconv2d":
        return K.dwconv2d_forward(ins[0], w, p["bias"], layer.stride, layer.padding)
    if kind == "conv1d":
        return K.conv1d_forward(ins[0], w, p["bias"], layer.stride, layer.padding)
    if kind == "fc":
        return K.fc_forward(ins[0], w, p["bias"])
    if kind == "avgpool":
        return K.avgpool_forward(ins[0], layer.kernel, layer.stride)
    if kind == "maxpool":
        return K.maxpool_forward(ins[0], layer.kernel, layer.stride)
    if kind == "relu":
        return K.relu_forward(ins[0])
    if kind == "batchnorm":
        return K.batchnorm_forward(ins[0], p["gamma"], p["beta"], p["mean"], p["var"], layer.eps)
    if kind == "add":
        return K.add_forward(ins[0], ins[1])
    if kind == "flatten":
        return K.flatten_forward(ins[0])
    raise ShapeError(f"unknown kind {kind!r}")


def layer_backward(layer: LayerSpec, ins: list[np.ndarray], dy: np.ndarray, weight=None, need_dx=True):
    """Gradients of one layer: returns (list of dx per input edge, dw, db)."""
    kind = layer.kind
    p = layer.params
    w = weight if weight is not None else p.get("weight")
    if kind == "conv2d":
        dx, dw, db = K.conv2d_backward(ins[0], w, layer.stride, layer.padding, dy, need_dx)
        return [dx], dw, db
    if kind == "dwconv2d":
        dx, dw, db = K.dwconv2d_backward(ins[0], w, layer.stride, layer.padding, dy, need_dx)
        return [dx], dw, db
    if kind == "conv1d":
        dx, dw, db = K.conv1d_backward(ins[0], w, layer.stride, layer.padding, dy, need_dx)
        return [dx], dw, db
    if kind == "fc":
        dx, dw, db = K.fc_backward(ins[0], w, dy, need_dx)
        return [dx], dw, db
    if kind == "avgpool":
        return [K.avgpool_backward(ins[0], layer.kernel, layer.stride, dy)], None, None
    if kind == "maxpool":
        return [K.maxpool_backward(ins[0], layer.kernel, layer.stride, dy)], None, None
    if kind == "relu":
        return [K.relu_backward(ins[0], dy)], None, None
    if kind == "batchnorm":
        return [K.batchnorm_backward(ins[0], p["gamma"], p["var"], layer.eps, dy)], None, None
    if kind == "add":
        return [dy, dy], None, None
    if kind == "flatten":
        return [K.flatten_backward(ins[0].shape, dy)], None, None
    raise ShapeError(f"unknown kind {kind!r}")


def forward(graph: Graph, x: np.ndarray, record: bool = False):
    """Evaluate the graph on a batch.

    With record=True returns the list of all edge values (input included at
    index 0); otherwise returns only the final output tensor.
    """
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != tuple(graph.input_shape):
        raise ShapeError(
            f"input shape {tuple(x.shape[1:])} != graph input {tuple(graph.input_shape)}"
        )
    acts = [x]
    for li, layer in enumerate(graph.layers):
        try:
            y = layer_forward(layer, [acts[e] for e in layer.inputs])
        except EngineError as exc:
            raise ShapeError(f"layer {li} ({layer.name}): {exc}") from exc
        acts.append(y)
    if record:
        return acts
    return acts[-1]


def backward(graph: Graph, acts, out_grad: np.ndarray, wrt=("weights", "biases", "inputs")):
    """Reverse-mode gradients of a scalar loss whose output-gradient is
    `out_grad`, restricted to the selector.

    `acts` must be the record=True result of forward() on this graph.
    Returns a dict with keys (layer_id, "weight"), (layer_id, "bias") and
    "input" depending on the selector.
    """
    if acts is None or len(acts) != len(graph.layers) + 1:
        raise StateError("backward requires the recorded activations of a prior forward")
    if out_grad.shape != acts[-1].shape:
        raise ShapeError(f"output grad shape {out_grad.shape} != output {acts[-1].shape}")
    need_w = "weights" in wrt
    need_b = "biases" in wrt
    edge_grads = {graph.output_edge: out_grad}
    grads = {}
    for li in range(len(graph.layers) - 1, -1, -1):
        layer = graph.layers[li]
        dy = edge_grads.pop(graph.out_edge(li), None)
        if dy is None:
            continue
        ins = [acts[e] for e in layer.inputs]
        dxs, dw, db = layer_backward(layer, ins, dy)
        if layer.weighted:
            if need_w:
                grads[(li, "weight")] = dw
            if need_b:
                grads[(li, "bias")] = db
        for e, dx in zip(layer.inputs, dxs):
            if e in edge_grads:
                edge_grads[e] = edge_grads[e] + dx
            else:
                edge_grads[e] = dx
    if "inputs" in wrt:
        grads["input"] = edge_grads.get(0, np.zeros_like(acts[0]))
    return grads


def fold_batchnorm(graph: Graph) -> Graph:
    """Fold every batchnorm into the weighted layer immediately before it.

    The producing layer must be conv2d/dwconv2d/conv1d/fc and the batchnorm
    must be its only consumer. Returns a new graph; block partitions are
    remapped.
    """
    cons = graph.consumers()
    fold_of = {}  # bn layer id -> producer layer id
    for li, layer in enumerate(graph.layers):
        if layer.kind != "batchnorm":
            continue
        src_edge = layer.inputs[0]
        producer = src_edge - 1
        if producer < 0 or not graph.layers[producer].weighted:
            raise ShapeError(f"layer {li} ({layer.name}): batchnorm has no foldable predecessor")
        if cons[src_edge] != [li]:
            raise ShapeError(
                f"layer {li} ({layer.name}): producing edge has other consumers, cannot fold"
            )
        fold_of[li] = producer

    keep = [li for li in range(len(graph.layers)) if li not in fold_of]
    # old edge id -> new edge id (bn output collapses onto producer output)
    edge_map = {0: 0}
    new_id = {}
    for new_li, old_li in enumerate(keep):
        new_id[old_li] = new_li
        edge_map[old_li + 1] = new_li + 1
    for bn_li, producer in fold_of.items():
        edge_map[bn_li + 1] = new_id[producer] + 1

    new_layers = []
    for old_li in keep:
        layer = graph.layers[old_li].copy()
        layer.inputs = [edge_map[e] for e in layer.inputs]
        new_layers.append(layer)

    for bn_li, producer in fold_of.items():
        bn = graph.layers[bn_li]
        scale = bn.params["gamma"] / np.sqrt(bn.params["var"] + bn.eps)
        shift = bn.params["beta"] - bn.params["mean"] * scale
        tgt = new_layers[new_id[producer]]
        tgt.params["weight"] = tgt.params["weight"] * scale  # out-channel is last axis
        tgt.params["bias"] = tgt.params["bias"] * scale + shift

    new_blocks = []
    for name, ids in graph.blocks:
        remapped = [new_id[li] for li in ids if li in new_id]
        new_blocks.append((name, remapped))
    return Graph(new_layers, tuple(graph.input_shape), new_blocks)
