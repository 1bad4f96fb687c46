"""Cross-layer range equalization.

Rescales paired 2-d convolution channels through the ReLU between them so
both layers see balanced per-channel weight ranges; ReLU's positive
homogeneity keeps the network function unchanged. Pairs sharing a layer
(conv -> dw -> pw chains) are swept repeatedly until every pair reaches
its range fixed point.
"""

from __future__ import annotations

import numpy as np

from ..engine.graph import Graph

PAIR_KINDS = {"conv2d", "dwconv2d"}


def _channel_ranges_out(layer) -> np.ndarray:
    """Max |w| per output channel (output channels live on the last axis)."""
    w = layer.params["weight"]
    return np.abs(w).reshape(-1, w.shape[-1]).max(axis=0)


def _channel_ranges_in(layer) -> np.ndarray:
    """Max |w| per input channel of the second layer of a pair."""
    w = layer.params["weight"]
    if layer.kind == "dwconv2d":  # (Kh, Kw, C): channel i is its own input
        return np.abs(w).reshape(-1, w.shape[-1]).max(axis=0)
    return np.abs(w).transpose(0, 1, 3, 2).reshape(-1, w.shape[2]).max(axis=0)


def _scale_pair(first, second, s: np.ndarray) -> None:
    first.params["weight"] = first.params["weight"] / s
    first.params["bias"] = first.params["bias"] / s
    w2 = second.params["weight"]
    if second.kind == "dwconv2d":
        second.params["weight"] = w2 * s
    else:
        second.params["weight"] = w2 * s[None, None, :, None]


def find_pairs(graph: Graph) -> list[tuple[int, int]]:
    """(first, second) layer-id pairs joined only by a ReLU, no branching."""
    cons = graph.consumers()
    pairs = []
    for li, layer in enumerate(graph.layers):
        if layer.kind not in PAIR_KINDS:
            continue
        out_edge = graph.out_edge(li)
        if len(cons[out_edge]) != 1:
            continue
        mid = graph.layers[cons[out_edge][0]]
        if mid.kind != "relu":
            continue
        mid_edge = graph.out_edge(cons[out_edge][0])
        if len(cons[mid_edge]) != 1:
            continue
        nxt_id = cons[mid_edge][0]
        nxt = graph.layers[nxt_id]
        if nxt.kind not in PAIR_KINDS:
            continue
        if layer.kind == "dwconv2d" and nxt.kind == "dwconv2d":
            continue  # no channel mixing on either side; nothing to balance
        pairs.append((li, nxt_id))
    return pairs


def cle_equalize(graph: Graph, max_sweeps: int = 5000, tol: float = 1e-9) -> Graph:
    """Equalize every eligible pair; returns a new, function-equivalent graph.

    Requires batchnorm to be folded already. Graphs without eligible pairs
    are returned unchanged (as a copy).
    """
    if any(l.kind == "batchnorm" for l in graph.layers):
        raise ValueError("fold batchnorm before cross-layer equalization")
    g = graph.copy()
    pairs = find_pairs(g)
    if not pairs:
        return g
    for _ in range(max_sweeps):
        # converged when no pair needs rescaling (all s == 1): then every
        # pair simultaneously sits at its range fixed point r1' == r2'
        worst = 0.0
        for a, b in pairs:
            first, second = g.layers[a], g.layers[b]
            r1 = _channel_ranges_out(first)
            r2 = _channel_ranges_in(second)
            ok = (r1 > 0) & (r2 > 0)
            s = np.ones_like(r1)
            s[ok] = np.sqrt(r1[ok] * r2[ok]) / r2[ok]
            _scale_pair(first, second, s)
            worst = max(worst, float(np.abs(s - 1.0).max(initial=0.0)))
        if worst <= tol:
            break
    return g


def pair_ranges(graph: Graph, pair: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Current (r1, r2) per-channel ranges of a pair, for diagnostics."""
    return _channel_ranges_out(graph.layers[pair[0]]), _channel_ranges_in(graph.layers[pair[1]])
