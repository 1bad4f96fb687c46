"""Saving/loading quantized models on top of the TQT1 container.

A quantized model file holds the folded graph's parameters plus one
scale/zero/meta entry triple per quantizer, and a tiny metadata block
naming the source architecture so the graph can be rebuilt.
"""

from __future__ import annotations

import numpy as np

from .container import FormatError, load, save
from .engine import build_model, fold_batchnorm, graph_params
from .pipeline.qgraph import QuantizedGraph
from .quant import ASYMMETRIC, PER_CHANNEL, PER_TENSOR, SYMMETRIC, QuantizerState

_SCHEMES = [SYMMETRIC, ASYMMETRIC]
_GRANULARITIES = [PER_TENSOR, PER_CHANNEL]


def _q_entries(prefix: str, q: QuantizerState) -> dict:
    meta = np.array(
        [q.bits, q.n, q.p, _SCHEMES.index(q.scheme), _GRANULARITIES.index(q.granularity), q.axis],
        dtype=np.int32,
    )
    return {
        f"{prefix}.scale": q.scale.astype(np.float32),
        f"{prefix}.zero": q.zero_point.astype(np.int32),
        f"{prefix}.meta": meta,
    }


def _q_from_entries(entries: dict, prefix: str) -> QuantizerState:
    meta = entries[f"{prefix}.meta"]
    bits, n, p, scheme_i, gran_i, axis = (int(v) for v in meta)
    return QuantizerState(
        scheme=_SCHEMES[scheme_i],
        granularity=_GRANULARITIES[gran_i],
        bits=bits,
        scale=entries[f"{prefix}.scale"].astype(np.float64),
        zero_point=entries[f"{prefix}.zero"].astype(np.int64),
        n=n,
        p=p,
        axis=axis,
    )


def save_quantized_model(qg: QuantizedGraph, model_name: str, path) -> None:
    entries = {"meta.model": np.frombuffer(model_name.encode("utf-8"), dtype=np.uint8).copy()}
    for name, arr in graph_params(qg.graph).items():
        entries[name] = arr.astype(np.float32)
    for li, q in sorted(qg.weight_q.items()):
        entries.update(_q_entries(f"quant.w.{qg.graph.layers[li].name}", q))
    for e, q in sorted(qg.act_q.items()):
        entries.update(_q_entries(f"quant.a.{e}", q))
    save(path, entries)


def load_quantized_model(path) -> tuple[QuantizedGraph, str]:
    entries = load(path)
    if "meta.model" not in entries:
        raise FormatError(0, "not a quantized model file (missing meta.model)")
    model_name = bytes(entries["meta.model"]).decode("utf-8")
    graph = fold_batchnorm(build_model(model_name, seed=0))
    name_to_id = {l.name: li for li, l in enumerate(graph.layers)}
    for li, layer in enumerate(graph.layers):
        for pname in layer.params:
            key = f"{layer.name}.{pname}"
            if key not in entries:
                raise FormatError(0, f"missing parameter {key!r}")
            arr = entries[key].astype(np.float64)
            if arr.shape != layer.params[pname].shape:
                raise FormatError(0, f"{key}: shape {arr.shape} != {layer.params[pname].shape}")
            layer.params[pname] = arr
    qg = QuantizedGraph(graph=graph)
    for key in entries:
        if key.startswith("quant.w.") and key.endswith(".meta"):
            lname = key[len("quant.w.") : -len(".meta")]
            if lname not in name_to_id:
                raise FormatError(0, f"quantizer for unknown layer {lname!r}")
            qg.weight_q[name_to_id[lname]] = _q_from_entries(entries, f"quant.w.{lname}")
        elif key.startswith("quant.a.") and key.endswith(".meta"):
            edge = int(key[len("quant.a.") : -len(".meta")])
            qg.act_q[edge] = _q_from_entries(entries, f"quant.a.{edge}")
    return qg, model_name
