import re

import numpy as np
import pytest

from tinyptq.engine import Graph, LayerSpec

CRITERIA = {
    "A1": "model statistics vs published totals (2% per cell)",
    "A2": "quantizer property suite, 10k tensors, zero violations",
    "A3": "BN-fold <=1e-5 / CLE <=1e-4 function preservation + range fixed point",
    "A4": "gradient checks vs central finite differences (rel 1e-3)",
    "A5": "optimization contracts at 4W4A (all strategies, oracle, bias tune)",
    "A6": "BOP/peak-memory identities (exact)",
    "A7": "byte-identical determinism + 5-seed mean/std protocol",
    "A8": "forward parity vs converter fixtures (rel 1e-4)",
    "A9": "trained-checkpoint accuracy spot checks",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    buckets = {}
    for status in ("passed", "failed", "error", "skipped", "xfailed", "xpassed"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance\.py::test_(A\d+)", nodeid)
            if m:
                buckets.setdefault(m.group(1), []).append(status)
    if not buckets:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(buckets):
        statuses = buckets[crit]
        if any(s in ("failed", "error") for s in statuses):
            verdict = "FAIL"
        elif all(s == "skipped" for s in statuses):
            verdict = "SKIP (environment lacks required fixtures)"
        elif any(s == "xfailed" for s in statuses):
            verdict = "PASS with documented deviation (xfailed sub-check, see ledger)"
        elif any(s == "skipped" for s in statuses):
            verdict = "PASS (some sub-checks skipped)"
        else:
            verdict = "PASS"
        tr.write_line(f"{crit}: {verdict} - {CRITERIA.get(crit, '')}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_conv_net(seed=0, cin=2, hw=8):
    """3-layer conv net used by the optimization-contract tests."""
    r = np.random.default_rng(seed)
    layers = [
        LayerSpec("conv2d", "c1", [0],
                  {"weight": r.normal(0, 0.4, (3, 3, cin, 4)), "bias": r.normal(0, 0.1, 4)},
                  (3, 3), (1, 1), "same"),
        LayerSpec("relu", "r1", [1]),
        LayerSpec("conv2d", "c2", [2],
                  {"weight": r.normal(0, 0.3, (3, 3, 4, 4)), "bias": r.normal(0, 0.1, 4)},
                  (3, 3), (2, 2), "same"),
        LayerSpec("relu", "r2", [3]),
        LayerSpec("conv2d", "c3", [4],
                  {"weight": r.normal(0, 0.3, (3, 3, 4, 3)), "bias": r.normal(0, 0.1, 3)},
                  (3, 3), (1, 1), "same"),
    ]
    return Graph(layers, (hw, hw, cin), [("c1", [0, 1]), ("c2", [2, 3]), ("c3", [4])])


def central_differences(f, x, step=1e-3):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return np.abs(a - b).max(initial=0.0) / denom
