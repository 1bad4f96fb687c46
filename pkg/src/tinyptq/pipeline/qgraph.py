"""Quantizer attachment, initialization and quantized execution.

Policy (fixed): weights use symmetric per-channel quantizers over the
output-channel axis; activations use asymmetric per-tensor quantizers.
Every activation edge carries a quantizer (the network input included)
except flatten outputs, which are pure reshapes of an already-quantized
buffer. Biases stay in full precision.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..engine.graph import Graph, layer_forward, layer_backward
from ..engine.layers import ShapeError
from ..quant import (
    ASYMMETRIC,
    PER_CHANNEL,
    PER_TENSOR,
    SYMMETRIC,
    MSERangeTracker,
    QuantizerState,
    QuantizerTemplate,
    RangeTracker,
    init_minmax,
    init_mse,
    quantize,
)
from .config import PipelineConfig


def weight_template(bits: int) -> QuantizerTemplate:
    return QuantizerTemplate(SYMMETRIC, PER_CHANNEL, bits, axis=-1)


def act_template(bits: int) -> QuantizerTemplate:
    return QuantizerTemplate(ASYMMETRIC, PER_TENSOR, bits)


@dataclass
class QuantizedGraph:
    graph: Graph
    weight_q: dict = field(default_factory=dict)  # layer id -> QuantizerState
    act_q: dict = field(default_factory=dict)     # edge id -> QuantizerState
    frozen: set = field(default_factory=set)

    def effective_weight(self, li: int) -> np.ndarray:
        return quantize(self.graph.layers[li].params["weight"], self.weight_q.get(li))

    def run_recorded(self, x: np.ndarray, want_masks: bool = False, want_pre: bool = False):
        """Quantized forward keeping all edges: returns (acts, pre, masks)
        where `pre` holds pre-quantization edge values and `masks` the
        in-grid masks used by straight-through backward."""
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != tuple(self.graph.input_shape):
            raise ShapeError(
                f"input shape {tuple(x.shape[1:])} != graph input {tuple(self.graph.input_shape)}"
            )
        acts = [None] * (len(self.graph.layers) + 1)
        pre, masks = {}, {}
        q0 = self.act_q.get(0)
        acts[0] = quantize(x, q0)
        if q0 is not None and not q0.disabled:
            if want_pre:
                pre[0] = x
            if want_masks:
                masks[0] = _in_grid_mask(x, q0)
        for li, layer in enumerate(self.graph.layers):
            ins = [acts[e] for e in layer.inputs]
            w = self.effective_weight(li) if layer.weighted else None
            y = layer_forward(layer, ins, weight=w)
            e = self.graph.out_edge(li)
            q = self.act_q.get(e)
            if q is not None and not q.disabled:
                if want_pre:
                    pre[e] = y
                if want_masks:
                    masks[e] = _in_grid_mask(y, q)
                y = quantize(y, q)
            acts[e] = y
        return acts, pre, masks

    def forward(self, x: np.ndarray, record: bool = False, with_masks: bool = False):
        """Simulated-quantization forward pass.

        record=False returns the final output; record=True returns the edge
        value list; with_masks additionally returns the per-edge in-grid
        masks needed for straight-through backward.
        """
        acts, _, masks = self.run_recorded(x, want_masks=with_masks)
        if not record:
            return acts[-1]
        return (acts, masks) if with_masks else acts

    def bias_grads(self, acts, masks, out_grad: np.ndarray) -> dict:
        """d loss / d bias for every weighted layer, straight-through at
        quantized edges, with the quantized weights in the backward path."""
        edge_grads = {self.graph.output_edge: out_grad}
        grads = {}
        for li in range(len(self.graph.layers) - 1, -1, -1):
            layer = self.graph.layers[li]
            e = self.graph.out_edge(li)
            dy = edge_grads.pop(e, None)
            if dy is None:
                continue
            if e in masks:
                dy = dy * masks[e]
            ins = [acts[k] for k in layer.inputs]
            w = self.effective_weight(li) if layer.weighted else None
            dxs, _, db = layer_backward(layer, ins, dy, weight=w, need_dx=any(k > 0 for k in layer.inputs))
            if layer.weighted:
                grads[li] = db
            for k, dx in zip(layer.inputs, dxs):
                if k in edge_grads:
                    edge_grads[k] = edge_grads[k] + dx
                else:
                    edge_grads[k] = dx
        return grads

    def quantized_edges(self) -> list:
        return sorted(e for e, q in self.act_q.items() if not q.disabled)

    def state_hash(self, layer_ids=None) -> str:
        """Digest of quantized weights and quantizer parameters (biases are
        deliberately excluded: bias tuning is allowed to change them)."""
        ids = sorted(layer_ids) if layer_ids is not None else range(len(self.graph.layers))
        h = hashlib.sha256()
        for li in ids:
            layer = self.graph.layers[li]
            if layer.weighted:
                h.update(np.ascontiguousarray(self.effective_weight(li)).tobytes())
                wq = self.weight_q.get(li)
                if wq is not None:
                    h.update(np.ascontiguousarray(wq.scale).tobytes())
                    h.update(np.ascontiguousarray(wq.zero_point).tobytes())
            q = self.act_q.get(self.graph.out_edge(li))
            if q is not None:
                h.update(np.ascontiguousarray(q.scale).tobytes())
                h.update(np.ascontiguousarray(q.zero_point).tobytes())
        return h.hexdigest()

    def copy(self) -> "QuantizedGraph":
        return QuantizedGraph(
            graph=self.graph.copy(),
            weight_q={k: v.copy() for k, v in self.weight_q.items()},
            act_q={k: v.copy() for k, v in self.act_q.items()},
            frozen=set(self.frozen),
        )


def _in_grid_mask(x: np.ndarray, q: QuantizerState) -> np.ndarray:
    s = q.scale_for(x)
    z = q.zero_for(x)
    u = np.rint(x / s) + z
    return (u >= q.n) & (u <= q.p)


def quantized_activation_edges(graph: Graph) -> list:
    """Edges carrying an activation quantizer: all except flatten outputs."""
    edges = [0]
    for li, layer in enumerate(graph.layers):
        if layer.kind != "flatten":
            edges.append(graph.out_edge(li))
    return edges


def _iter_batches(n: int, batch_size: int):
    for i in range(0, n, batch_size):
        yield i, min(i + batch_size, n)


def attach_and_init(graph: Graph, calib: np.ndarray, config: PipelineConfig) -> QuantizedGraph:
    """Attach weight and activation quantizers and initialize their ranges.

    Weight quantizers are initialized from the weight tensors; activation
    quantizers from the full-precision activations recorded over the whole
    calibration set (all batches concatenated).
    """
    if len(calib) == 0:
        raise ValueError("calibration set is empty")
    if tuple(calib.shape[1:]) != tuple(graph.input_shape):
        raise ShapeError(
            f"calibration shape {tuple(calib.shape[1:])} != graph input {tuple(graph.input_shape)}"
        )
    qg = QuantizedGraph(graph=graph.copy())

    wt = weight_template(config.b_w)
    for li, layer in enumerate(qg.graph.layers):
        if not layer.weighted:
            continue
        if config.b_w >= 32:
            qg.weight_q[li] = wt.disabled_state()
        elif config.w_init == "mse":
            qg.weight_q[li] = init_mse([layer.params["weight"]], wt, config.mse_grid_steps)
        else:
            qg.weight_q[li] = init_minmax([layer.params["weight"]], wt)

    at = act_template(config.b_a)
    edges = quantized_activation_edges(qg.graph)
    if config.b_a >= 32:
        for e in edges:
            qg.act_q[e] = at.disabled_state()
        return qg

    from ..engine.graph import forward as fp_forward

    trackers = {e: RangeTracker(at) for e in edges}
    for lo, hi in _iter_batches(len(calib), config.batch_size):
        acts = fp_forward(qg.graph, calib[lo:hi], record=True)
        for e in edges:
            trackers[e].update(acts[e])
    ranges = {e: trackers[e].result() for e in edges}

    if config.a_init == "mse":
        mse_trackers = {
            e: MSERangeTracker(at, *ranges[e], grid_steps=config.mse_grid_steps) for e in edges
        }
        for lo, hi in _iter_batches(len(calib), config.batch_size):
            acts = fp_forward(qg.graph, calib[lo:hi], record=True)
            for e in edges:
                mse_trackers[e].update(acts[e])
        ranges = {e: mse_trackers[e].result() for e in edges}

    for e in edges:
        qg.act_q[e] = at.from_range(*ranges[e])
    return qg


def recalibrate_activations(qg: QuantizedGraph, calib: np.ndarray, config: PipelineConfig) -> None:
    """Re-initialize activation quantizers from the quantized model's own
    activations (optional post-optimization step)."""
    if config.b_a >= 32:
        return
    at = act_template(config.b_a)
    edges = qg.quantized_edges()
    trackers = {e: RangeTracker(at) for e in edges}
    for lo, hi in _iter_batches(len(calib), config.batch_size):
        _, pre, _ = qg.run_recorded(calib[lo:hi], want_pre=True)
        for e in edges:
            trackers[e].update(pre[e])
    for e in edges:
        qg.act_q[e] = at.from_range(*trackers[e].result())
