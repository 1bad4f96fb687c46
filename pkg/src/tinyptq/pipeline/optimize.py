"""Unit scheduling, reconstruction optimization, bias tuning and the
four-step pipeline driver.

Units (single layers, or blocks) are visited in topological order. Each
unit sees inputs from the already-quantized, frozen predecessor chain and
is optimized against the full-precision model's activations at its output
edge; the best iterate on the full calibration set (initial state
included) is kept, so a unit's final reconstruction error can never exceed
its initial one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..engine.graph import Graph, fold_batchnorm, forward as fp_forward, layer_forward, layer_backward
from ..engine.layers import _pad1d, _patches2d
from ..quant import integer_codes, quantize
from .cle import cle_equalize
from .config import BIAS_LR, PipelineConfig
from .qgraph import QuantizedGraph, attach_and_init, recalibrate_activations, _in_grid_mask
from .strategies import Adam, BitDescent, make_strategy


@dataclass
class Unit:
    name: str
    layer_ids: list
    in_edges: list
    out_edge: int
    weighted_ids: list

    def quantized_edges(self, qg: QuantizedGraph) -> list:
        """Edges produced inside the unit that carry an active quantizer."""
        out = []
        for li in self.layer_ids:
            e = li + 1
            q = qg.act_q.get(e)
            if q is not None and not q.disabled:
                out.append(e)
        return out


def make_units(graph: Graph, granularity: str) -> list:
    """Partition the graph into optimization units."""
    if granularity == "blockwise":
        groups = [(name, list(ids)) for name, ids in graph.blocks]
    else:
        groups = []
        current = []
        for li, layer in enumerate(graph.layers):
            if layer.weighted and any(graph.layers[x].weighted for x in current):
                groups.append((graph.layers[current[0]].name, current))
                current = [li]
            else:
                current.append(li)
        if current:
            if any(graph.layers[x].weighted for x in current):
                groups.append((graph.layers[current[0]].name, current))
            elif groups:
                groups[-1] = (groups[-1][0], groups[-1][1] + current)
            else:
                groups.append((graph.layers[current[0]].name, current))
    units = []
    for name, ids in groups:
        members = set(ids)
        in_edges = sorted(
            {e for li in ids for e in graph.layers[li].inputs if e == 0 or (e - 1) not in members}
        )
        units.append(
            Unit(
                name=name,
                layer_ids=list(ids),
                in_edges=in_edges,
                out_edge=ids[-1] + 1,
                weighted_ids=[li for li in ids if graph.layers[li].weighted],
            )
        )
    return units


def _unit_forward(qg: QuantizedGraph, unit: Unit, in_vals: dict, strategy=None, hard=False, record=False):
    """Run the unit's layers on the given input-edge values.

    Weights and activation quantizers are supplied by `strategy` when
    given (training state), else taken from the quantized graph. Returns
    the output value, and with record=True also (vals, pre, masks).
    """
    vals = dict(in_vals)
    pre, masks = {}, {}
    for li in unit.layer_ids:
        layer = qg.graph.layers[li]
        ins = [vals[e] for e in layer.inputs]
        w = None
        if layer.weighted:
            w = strategy.weight(li, hard=hard) if strategy is not None else qg.effective_weight(li)
        y = layer_forward(layer, ins, weight=w)
        e = li + 1
        q = strategy.act_q(e) if strategy is not None else qg.act_q.get(e)
        if q is not None and not q.disabled:
            if record:
                pre[e] = y
                masks[e] = _in_grid_mask(y, q)
            y = quantize(y, q)
        vals[e] = y
    out = vals[unit.out_edge]
    if record:
        return out, vals, pre, masks
    return out


def _unit_backward(qg: QuantizedGraph, unit: Unit, strategy, vals, pre, masks, dy_out):
    """Backward through the unit: returns (dW, act_grads).

    dW[li] is the loss gradient at the effective (quantized) weight;
    act_grads[e] is (pre-quant value, upstream gradient at the quantized
    output) for every trainable activation quantizer edge.
    """
    edge_grads = {unit.out_edge: dy_out}
    dW, act_grads = {}, {}
    for li in reversed(unit.layer_ids):
        layer = qg.graph.layers[li]
        e = li + 1
        dy = edge_grads.pop(e, None)
        if dy is None:
            continue
        if e in masks:
            act_grads[e] = (pre[e], dy)
            dy = dy * masks[e]
        ins = [vals[k] for k in layer.inputs]
        w = strategy.weight(li) if layer.weighted else None
        dxs, dw, _ = layer_backward(layer, ins, dy, weight=w, need_dx=True)
        if layer.weighted:
            dW[li] = dw
        for k, dx in zip(layer.inputs, dxs):
            if k in unit.in_edges:
                continue  # frozen upstream
            if k in edge_grads:
                edge_grads[k] = edge_grads[k] + dx
            else:
                edge_grads[k] = dx
    return dW, act_grads


def _batched_unit_mse(qg, unit, in_vals, target, strategy, batch_size, hard=True) -> float:
    n = len(target)
    sse = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        sl = {e: v[lo:hi] for e, v in in_vals.items()}
        out = _unit_forward(qg, unit, sl, strategy=strategy, hard=hard)
        d = out - target[lo:hi]
        sse += float((d * d).sum())
    return sse / target.size


class _BatchSampler:
    """Cyclic seeded batches; reshuffles at every epoch boundary."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.bs = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.bs > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.bs]
        self.pos += self.bs
        return idx


def _optimize_unit_gradient(qg, unit, in_vals, target, config, rng, log, unit_name):
    strategy = make_strategy(config.strategy, qg, unit, config)
    sampler = _BatchSampler(len(target), config.batch_size, rng)

    def checkpoint(it):
        return _batched_unit_mse(qg, unit, in_vals, target, strategy, config.batch_size, hard=True)

    best_loss = checkpoint(0)
    best_snap = strategy.snapshot()
    log.append({"step": "optimize", "unit": unit_name, "iteration": 0, "loss": best_loss})
    for it in range(1, config.iters + 1):
        idx = sampler.next()
        batch_in = {e: v[idx] for e, v in in_vals.items()}
        batch_t = target[idx]
        out, vals, pre, masks = _unit_forward(qg, unit, batch_in, strategy=strategy, record=True)
        diff = out - batch_t
        dy = (2.0 / diff.size) * diff
        dW, act_grads = _unit_backward(qg, unit, strategy, vals, pre, masks, dy)
        strategy.step(dW, act_grads, it)
        if it % config.eval_every == 0 or it == config.iters:
            loss = checkpoint(it)
            log.append({"step": "optimize", "unit": unit_name, "iteration": it, "loss": loss})
            if loss < best_loss:
                best_loss = loss
                best_snap = strategy.snapshot()
    strategy.restore(best_snap)
    strategy.finalize()
    log.append({"step": "optimize", "unit": unit_name, "iteration": "final", "loss": best_loss})
    return best_loss


# -- bit-plane strategy plumbing ----------------------------------------------

def _linearize(layer, x):
    """Design matrix of a weighted layer: (X, shared, out_spatial_shape)."""
    if layer.kind == "conv2d":
        kh, kw, cin, cout = layer.params["weight"].shape
        win, _, _ = _patches2d(x, kh, kw, *layer.stride, layer.padding)
        X = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * cin)
        return X, True
    if layer.kind == "dwconv2d":
        kh, kw, c = layer.params["weight"].shape
        win, _, _ = _patches2d(x, kh, kw, *layer.stride, layer.padding)
        X = win.reshape(-1, c, kh * kw)
        return X, False
    if layer.kind == "conv1d":
        k, cin, cout = layer.params["weight"].shape
        xp, _ = _pad1d(x, k, layer.stride[0], layer.padding)
        win = sliding_window_view(xp, k, axis=1)[:, :: layer.stride[0]]
        X = win.transpose(0, 1, 3, 2).reshape(-1, k * cin)
        return X, True
    if layer.kind == "fc":
        return x, True
    raise ValueError(f"bit descent does not apply to {layer.kind!r}")


def _optimize_unit_bits(qg, unit, in_vals, lin_target, config, log, unit_name):
    """Coordinate descent on the codes of the unit's weighted layer."""
    li = unit.weighted_ids[0]
    layer = qg.graph.layers[li]
    q = qg.weight_q[li]
    # input of the weighted layer: run any leading unit layers first
    vals = dict(in_vals)
    for lj in unit.layer_ids:
        if lj == li:
            break
        lay = qg.graph.layers[lj]
        y = layer_forward(lay, [vals[e] for e in lay.inputs])
        aq = qg.act_q.get(lj + 1)
        vals[lj + 1] = quantize(y, aq) if aq is not None else y
    x = vals[layer.inputs[0]]

    w = layer.params["weight"]
    cshape = w.shape
    groups = cshape[-1]
    X, shared = _linearize(layer, x)
    target = lin_target.reshape(-1, groups)
    if q.disabled:
        wf = w.reshape(-1, groups)
        lin = X @ wf if shared else np.einsum("mck,kc->mc", X, wf)
        d = lin + layer.params["bias"][None, :] - target
        mse = float((d * d).sum()) / target.size
        log.append({"step": "optimize", "unit": unit_name, "iteration": 0, "loss": mse})
        return mse
    codes = integer_codes(w, q).reshape(-1, groups)
    bd = BitDescent(X, target, layer.params["bias"], codes, q.scale, q.bits, shared_x=shared)
    init_mse = bd.sse() / target.size
    log.append({"step": "optimize", "unit": unit_name, "iteration": 0, "loss": init_mse})
    sse, codes, scale = bd.run(config.bit_sweeps, refit=config.bit_scale_refit)
    final_mse = sse / target.size
    log.append({"step": "optimize", "unit": unit_name, "iteration": config.bit_sweeps, "loss": final_mse})

    new_q = q.copy()
    new_q.scale = scale
    qg.weight_q[li] = new_q
    qg.graph.layers[li].params["weight"] = (codes.astype(np.float64) * scale[None, :]).reshape(cshape)
    return final_mse


def optimize(qg: QuantizedGraph, fp_graph: Graph, calib: np.ndarray, config: PipelineConfig):
    """Layerwise/blockwise reconstruction optimization (pipeline step 3)."""
    log = []
    if config.iters == 0:
        return qg, log
    units = make_units(qg.graph, config.granularity)
    rng = np.random.default_rng(config.seed + 1)

    # full-precision targets at every unit output (and at the weighted
    # layer's own output for bit descent), recorded once
    needed = {u.out_edge for u in units}
    if config.strategy == "bits":
        needed |= {li + 1 for u in units for li in u.weighted_ids[:1]}
    fp_targets = {e: [] for e in needed}
    for lo in range(0, len(calib), config.batch_size):
        acts = fp_forward(fp_graph, calib[lo : lo + config.batch_size], record=True)
        for e in needed:
            fp_targets[e].append(acts[e])
    fp_targets = {e: np.concatenate(v, axis=0) for e, v in fp_targets.items()}

    cons = qg.graph.consumers()
    last_use = [max(c) if c else -1 for c in cons]

    frontier = {0: quantize(calib, qg.act_q.get(0))}
    for unit in units:
        in_vals = {e: frontier[e] for e in unit.in_edges}
        if config.strategy == "bits" and unit.weighted_ids:
            lin_edge = unit.weighted_ids[0] + 1
            _optimize_unit_bits(qg, unit, in_vals, fp_targets[lin_edge], config, log, unit.name)
        elif unit.weighted_ids:
            _optimize_unit_gradient(
                qg, unit, in_vals, fp_targets[unit.out_edge], config, rng, log, unit.name
            )
        qg.frozen.update(unit.weighted_ids)
        # materialize the frozen unit's outputs for downstream units
        outs = []
        n = len(calib)
        for lo in range(0, n, config.batch_size):
            hi = min(lo + config.batch_size, n)
            sl = {e: v[lo:hi] for e, v in in_vals.items()}
            out = _unit_forward(qg, unit, sl, strategy=None)
            outs.append(out)
        frontier[unit.out_edge] = np.concatenate(outs, axis=0)
        for e in list(frontier):
            if last_use[e] <= unit.layer_ids[-1] and e != qg.graph.output_edge:
                del frontier[e]
    return qg, log


def bias_tune(qg: QuantizedGraph, fp_graph: Graph, calib: np.ndarray, config: PipelineConfig):
    """End-to-end gradient descent on bias vectors only (pipeline step 4)."""
    log = []
    iters = config.bias_tune_iters
    fp_out = []
    for lo in range(0, len(calib), config.batch_size):
        fp_out.append(fp_forward(fp_graph, calib[lo : lo + config.batch_size]))
    fp_out = np.concatenate(fp_out, axis=0)

    bias_ids = [li for li, l in enumerate(qg.graph.layers) if l.weighted]
    biases = [qg.graph.layers[li].params["bias"] for li in bias_ids]
    adam = Adam(biases, BIAS_LR if config.lr is None else config.lr)
    rng = np.random.default_rng(config.seed + 2)
    sampler = _BatchSampler(len(calib), config.batch_size, rng)

    def full_loss() -> float:
        sse = 0.0
        for lo in range(0, len(calib), config.batch_size):
            hi = min(lo + config.batch_size, len(calib))
            d = qg.forward(calib[lo:hi]) - fp_out[lo:hi]
            sse += float((d * d).sum())
        return sse / fp_out.size

    best_loss = full_loss()
    best = [b.copy() for b in biases]
    log.append({"step": "bias_tune", "unit": "all", "iteration": 0, "loss": best_loss})
    for it in range(1, iters + 1):
        idx = sampler.next()
        x = calib[idx]
        acts, masks = qg.forward(x, record=True, with_masks=True)
        diff = acts[-1] - fp_out[idx]
        dy = (2.0 / diff.size) * diff
        grads_map = qg.bias_grads(acts, masks, dy)
        adam.step([grads_map.get(li) for li in bias_ids])
        if it % config.eval_every == 0 or it == iters:
            loss = full_loss()
            log.append({"step": "bias_tune", "unit": "all", "iteration": it, "loss": loss})
            if loss < best_loss:
                best_loss = loss
                best = [b.copy() for b in biases]
    for li, b in zip(bias_ids, best):
        qg.graph.layers[li].params["bias"][:] = b
    log.append({"step": "bias_tune", "unit": "all", "iteration": "final", "loss": best_loss})
    return qg, log


def run_pipeline(fp_graph: Graph, calib: np.ndarray, config: PipelineConfig):
    """Execute the four pipeline steps and return (QuantizedGraph, run log)."""
    rng = np.random.default_rng(config.seed)
    calib = np.asarray(calib, dtype=np.float64)
    if len(calib) > config.calib_size:
        calib = calib[rng.permutation(len(calib))[: config.calib_size]]
    log = {"config": config.to_dict(), "records": [], "steps": []}

    g = fp_graph
    if any(l.kind == "batchnorm" for l in g.layers):
        g = fold_batchnorm(g)
        log["steps"].append("fold_batchnorm")
    else:
        g = g.copy()
    if config.cle:
        g = cle_equalize(g)
        log["steps"].append("cle")

    qg = attach_and_init(g, calib, config)
    log["steps"].append("attach_and_init")

    qg, records = optimize(qg, g, calib, config)
    log["records"].extend(records)
    log["steps"].append("optimize")

    if config.recalibrate_acts:
        recalibrate_activations(qg, calib, config)
        log["steps"].append("recalibrate_acts")

    if config.bias_tune:
        qg, records = bias_tune(qg, g, calib, config)
        log["records"].extend(records)
        log["steps"].append("bias_tune")
    return qg, log
