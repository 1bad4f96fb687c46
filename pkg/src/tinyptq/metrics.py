"""Model statistics (MACs, parameters, peak activation), the BOP /
peak-memory cost model, accuracy evaluation and report emission.

Counting conventions (documented because published totals do not state
theirs):
  * MACs: weighted layers count kernel-size multiply-accumulates per
    output element; batchnorm counts 1 MAC per element (its folded form is
    one scale-and-shift); average pooling counts (window + 1) MACs per
    output (window additions plus the divide); ReLU, maxpool, add and
    flatten count 0. This reproduces the published DS-CNN and MobileNetV1
    totals exactly and the others within 2%.
  * Parameters: every tensor in the graph as given (batchnorm contributes
    4 per channel pre-fold). `stats` reports the folded count alongside,
    which is what the published table uses.
  * Peak activation: a buffer is live from its producer until its last
    consumer, elementwise outputs do not alias their inputs, and the input
    buffer is counted while live; the peak is the largest sum of
    simultaneously live buffers (batch size 1).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .engine.graph import Graph, forward

BITS_PER_BYTE = 8


@dataclass
class LayerStat:
    name: str
    kind: str
    out_shape: tuple
    macs: int
    params: int


@dataclass
class ModelStats:
    per_layer: list
    macs: int
    params: int
    params_folded: int
    peak_activation: int


@dataclass
class CostReport:
    model: str
    b_w: int
    b_a: int
    strategy: str = ""
    init: str = ""
    cle: bool = False
    bias_tune: bool = False
    seed: int = 0
    accuracy: float = float("nan")
    macs: int = 0
    params: int = 0
    peak_activation: int = 0
    bop: int = 0
    peak_memory_bits: int = 0
    config: dict = field(default_factory=dict)

    @property
    def peak_memory_bytes(self) -> float:
        b = self.peak_memory_bits
        return b // BITS_PER_BYTE if b % BITS_PER_BYTE == 0 else b / BITS_PER_BYTE


def _layer_macs(layer, out_shape) -> int:
    out_elems = int(np.prod(out_shape))
    if layer.kind == "conv2d":
        kh, kw, cin, _ = layer.params["weight"].shape
        return out_elems * kh * kw * cin
    if layer.kind == "dwconv2d":
        kh, kw, _ = layer.params["weight"].shape
        return out_elems * kh * kw
    if layer.kind == "conv1d":
        k, cin, _ = layer.params["weight"].shape
        return out_elems * k * cin
    if layer.kind == "fc":
        cin, _ = layer.params["weight"].shape
        return out_elems * cin
    if layer.kind == "batchnorm":
        return out_elems
    if layer.kind == "avgpool":
        return out_elems * (int(np.prod(layer.kernel)) + 1)
    return 0


def _peak_activation(graph: Graph, shapes) -> int:
    sizes = [int(np.prod(s)) for s in shapes]
    cons = graph.consumers()
    last_use = [max(c) if c else -1 for c in cons]
    last_use[graph.output_edge] = len(graph.layers)  # final output lives to the end
    peak = 0
    for li in range(len(graph.layers)):
        live = sizes[graph.out_edge(li)]  # the buffer being produced
        for e in range(graph.out_edge(li)):
            if e == graph.out_edge(li):
                continue
            produced = e - 1  # edge 0 exists from the start
            if produced < li and last_use[e] >= li:
                live += sizes[e]
        peak = max(peak, live)
    return peak


def model_stats(graph: Graph) -> ModelStats:
    """MAC / parameter / peak-activation statistics of a graph."""
    from .engine.graph import fold_batchnorm

    shapes = graph.edge_shapes()
    per_layer = []
    for li, layer in enumerate(graph.layers):
        out_shape = shapes[graph.out_edge(li)]
        params = sum(int(a.size) for a in layer.params.values())
        per_layer.append(LayerStat(layer.name, layer.kind, out_shape, _layer_macs(layer, out_shape), params))
    has_bn = any(l.kind == "batchnorm" for l in graph.layers)
    folded = fold_batchnorm(graph) if has_bn else graph
    params_folded = sum(int(a.size) for l in folded.layers for a in l.params.values())
    return ModelStats(
        per_layer=per_layer,
        macs=sum(ls.macs for ls in per_layer),
        params=sum(ls.params for ls in per_layer),
        params_folded=params_folded,
        peak_activation=_peak_activation(folded, folded.edge_shapes()),
    )


def bop_count(graph_or_macs, b_w: int, b_a: int) -> int:
    """Bit-operation count: total MACs * b_w * b_a (exact integers)."""
    macs = graph_or_macs if isinstance(graph_or_macs, int) else model_stats(graph_or_macs).macs
    return macs * b_w * b_a


def peak_memory_bits(total_weight: int, peak_activation: int, b_w: int, b_a: int) -> int:
    """Peak memory in bits: weights at b_w plus peak live activations at b_a."""
    return total_weight * b_w + peak_activation * b_a


def peak_memory(graph: Graph, b_w: int, b_a: int) -> int:
    st = model_stats(graph)
    return peak_memory_bits(st.params_folded, st.peak_activation, b_w, b_a)


def evaluate(model, inputs, labels, batch_size: int = 256) -> float:
    """Top-1 accuracy of a Graph or QuantizedGraph over (inputs, labels)."""
    labels = np.asarray(labels).reshape(-1)
    if len(inputs) != len(labels):
        raise ValueError(f"{len(inputs)} inputs vs {len(labels)} labels")
    if len(labels) == 0:
        return float("nan")
    run = model.forward if hasattr(model, "forward") else (lambda x: forward(model, x))
    correct = 0
    for i in range(0, len(labels), batch_size):
        logits = run(np.asarray(inputs[i : i + batch_size], dtype=np.float64))
        if np.any(labels[i : i + batch_size] < 0) or np.any(labels[i : i + batch_size] >= logits.shape[1]):
            raise ValueError("label outside the model's class range")
        correct += int((np.argmax(logits, axis=1) == labels[i : i + batch_size]).sum())
    return correct / len(labels)


# -- report emission ---------------------------------------------------------

CSV_COLUMNS = [
    "model", "b_w", "b_a", "strategy", "init", "cle", "bias_tune", "seed",
    "accuracy", "macs", "params", "peak_activation", "bop", "peak_memory_bytes",
]


def _mean_std(values) -> tuple[float, float]:
    m = sum(values) / len(values)
    if len(values) < 2:
        return m, 0.0
    var = sum((v - m) ** 2 for v in values) / (len(values) - 1)
    return m, math.sqrt(var)


def emit_report(runs: list, fp_accuracy: float | None = None) -> tuple[str, dict]:
    """Render runs as (csv_text, summary_dict).

    The summary aggregates seeds into accuracy mean +/- std (sample std) per
    configuration and adds (accuracy drop vs FP, BOP saving, memory saving)
    triples per bitwidth, with the 8W8A run of the same configuration as
    the savings baseline.
    """
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in runs:
        row = {c: getattr(r, c) for c in CSV_COLUMNS if c != "peak_memory_bytes"}
        row["peak_memory_bytes"] = r.peak_memory_bytes
        writer.writerow(row)

    groups: dict[tuple, list[CostReport]] = {}
    for r in runs:
        groups.setdefault((r.model, r.b_w, r.b_a, r.strategy, r.init, r.cle, r.bias_tune), []).append(r)

    if fp_accuracy is None:
        fp = [r for r in runs if r.b_w >= 32 and r.b_a >= 32 and not math.isnan(r.accuracy)]
        fp_accuracy = _mean_std([r.accuracy for r in fp])[0] if fp else None

    summary = []
    for key, rs in groups.items():
        model, b_w, b_a, strategy, init_, cle, bias_tune = key
        accs = [r.accuracy for r in rs if not math.isnan(r.accuracy)]
        mean, std = _mean_std(accs) if accs else (float("nan"), float("nan"))
        base = next(
            (g for k, g in groups.items() if k[0] == model and k[1] == 8 and k[2] == 8),
            None,
        )
        entry = {
            "model": model,
            "b_w": b_w,
            "b_a": b_a,
            "strategy": strategy,
            "init": init_,
            "cle": cle,
            "bias_tune": bias_tune,
            "seeds": sorted(r.seed for r in rs),
            "accuracy_mean": mean,
            "accuracy_std": std,
            "bop": rs[0].bop,
            "peak_memory_bytes": rs[0].peak_memory_bytes,
        }
        if fp_accuracy is not None and accs:
            entry["accuracy_drop_vs_fp"] = fp_accuracy - mean
        if base is not None and base[0].bop:
            entry["bop_saving"] = 1.0 - rs[0].bop / base[0].bop
            entry["memory_saving"] = 1.0 - rs[0].peak_memory_bits / base[0].peak_memory_bits
        summary.append(entry)
    summary.sort(key=lambda e: (e["model"], -e["b_w"], -e["b_a"], e["strategy"]))
    report = {"fp_accuracy": fp_accuracy, "configurations": summary}
    return buf.getvalue(), report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False)
