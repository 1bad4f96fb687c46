"""Builders for the four tinyML reference architectures.

Shapes follow the published architecture tables; deviations discovered
while reconciling them with the published model statistics:
  * har_cnn includes the hidden fully-connected layer of 128 units (the
    flat parameter count only matches with it present) and flattens to
    62*64 = 3968 features,
  * mobilenetv1 has five stride-1 DSConv(128) blocks (13 DSConv total).

Padding: all 2-d convolutions use "same"; har_cnn's conv1d uses "valid".
The stride-2 residual block carries a 1x1 stride-2 convolution (no
batchnorm) on the skip path.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, LayerSpec, ShapeError

MODEL_NAMES = ("res8", "dscnn", "mobilenetv1", "har_cnn")


class _Builder:
    def __init__(self, input_shape, weights, seed):
        self.input_shape = tuple(input_shape)
        self.layers: list[LayerSpec] = []
        self.blocks: list[tuple[str, list[int]]] = []
        self._block_ids: list[int] = []
        self._block_name = None
        self.weights = weights
        self.rng = np.random.default_rng(seed)

    # -- parameter sourcing ------------------------------------------------
    def _param(self, lname, pname, shape, init):
        key = f"{lname}.{pname}"
        if self.weights is not None:
            if key not in self.weights:
                raise ShapeError(f"missing parameter {key!r}")
            arr = np.asarray(self.weights[key], dtype=np.float64)
            if tuple(arr.shape) != tuple(shape):
                raise ShapeError(f"{key}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")
            return arr.copy()
        return init(shape)

    def _he(self, shape, fan_in):
        return lambda s: self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=s)

    def _zeros(self, shape):
        return lambda s: np.zeros(s)

    def _bn_params(self, lname, c):
        return {
            "gamma": self._param(lname, "gamma", (c,), lambda s: self.rng.uniform(0.8, 1.2, s)),
            "beta": self._param(lname, "beta", (c,), lambda s: self.rng.normal(0.0, 0.1, s)),
            "mean": self._param(lname, "mean", (c,), lambda s: self.rng.normal(0.0, 0.1, s)),
            "var": self._param(lname, "var", (c,), lambda s: self.rng.uniform(0.5, 1.5, s)),
        }

    # -- graph assembly ----------------------------------------------------
    def block(self, name):
        if self._block_name is not None:
            self.blocks.append((self._block_name, self._block_ids))
        self._block_name = name
        self._block_ids = []
        return self

    def _push(self, layer) -> int:
        self.layers.append(layer)
        lid = len(self.layers) - 1
        self._block_ids.append(lid)
        return lid + 1  # output edge id

    @property
    def top(self) -> int:
        return len(self.layers)

    def conv2d(self, name, src, cin, cout, kernel, stride, padding="same"):
        kh, kw = kernel
        if isinstance(stride, int):
            stride = (stride, stride)
        w = self._param(name, "weight", (kh, kw, cin, cout), self._he(None, kh * kw * cin))
        b = self._param(name, "bias", (cout,), self._zeros(None))
        return self._push(
            LayerSpec("conv2d", name, [src], {"weight": w, "bias": b}, (kh, kw), stride, padding)
        )

    def dwconv2d(self, name, src, c, kernel, stride, padding="same"):
        kh, kw = kernel
        if isinstance(stride, int):
            stride = (stride, stride)
        w = self._param(name, "weight", (kh, kw, c), self._he(None, kh * kw))
        b = self._param(name, "bias", (c,), self._zeros(None))
        return self._push(
            LayerSpec("dwconv2d", name, [src], {"weight": w, "bias": b}, (kh, kw), stride, padding)
        )

    def conv1d(self, name, src, cin, cout, k, stride=1, padding="valid"):
        w = self._param(name, "weight", (k, cin, cout), self._he(None, k * cin))
        b = self._param(name, "bias", (cout,), self._zeros(None))
        return self._push(
            LayerSpec("conv1d", name, [src], {"weight": w, "bias": b}, (k,), (stride,), padding)
        )

    def fc(self, name, src, cin, cout):
        w = self._param(name, "weight", (cin, cout), self._he(None, cin))
        b = self._param(name, "bias", (cout,), self._zeros(None))
        return self._push(LayerSpec("fc", name, [src], {"weight": w, "bias": b}))

    def bn(self, name, src, c):
        return self._push(LayerSpec("batchnorm", name, [src], self._bn_params(name, c)))

    def relu(self, name, src):
        return self._push(LayerSpec("relu", name, [src]))

    def add(self, name, a, b):
        return self._push(LayerSpec("add", name, [a, b]))

    def avgpool(self, name, src, kernel):
        return self._push(LayerSpec("avgpool", name, [src], kernel=kernel, stride=kernel))

    def maxpool(self, name, src, kernel, stride):
        return self._push(LayerSpec("maxpool", name, [src], kernel=kernel, stride=stride))

    def flatten(self, name, src):
        return self._push(LayerSpec("flatten", name, [src]))

    def conv_bn_relu(self, name, src, cin, cout, kernel, stride):
        e = self.conv2d(name, src, cin, cout, kernel, stride)
        e = self.bn(f"{name}_bn", e, cout)
        return self.relu(f"{name}_relu", e)

    def finish(self, unexpected_ok=False) -> Graph:
        if self._block_name is not None:
            self.blocks.append((self._block_name, self._block_ids))
        g = Graph(self.layers, self.input_shape, self.blocks)
        if self.weights is not None and not unexpected_ok:
            known = set()
            for layer in g.layers:
                for pname in layer.params:
                    known.add(f"{layer.name}.{pname}")
            extra = [k for k in self.weights if k not in known and not k.startswith("quant.")]
            if extra:
                raise ShapeError(f"unexpected parameters: {sorted(extra)[:4]}")
        return g


def _res_block(b, name, src, cin, cout, stride):
    e = b.conv2d(f"{name}_conv1", src, cin, cout, (3, 3), (stride, stride))
    e = b.bn(f"{name}_bn1", e, cout)
    e = b.relu(f"{name}_relu1", e)
    e = b.conv2d(f"{name}_conv2", e, cout, cout, (3, 3), (1, 1))
    e = b.bn(f"{name}_bn2", e, cout)
    if stride == 1:
        skip = src
    else:
        skip = b.conv2d(f"{name}_skip", src, cin, cout, (1, 1), (stride, stride))
    e = b.add(f"{name}_add", e, skip)
    return b.relu(f"{name}_relu2", e)


def _ds_block(b, name, src, cin, cout, stride):
    e = b.dwconv2d(f"{name}_dw", src, cin, (3, 3), (stride, stride))
    e = b.bn(f"{name}_dw_bn", e, cin)
    e = b.relu(f"{name}_dw_relu", e)
    e = b.conv2d(f"{name}_pw", e, cin, cout, (1, 1), (1, 1))
    e = b.bn(f"{name}_pw_bn", e, cout)
    return b.relu(f"{name}_pw_relu", e)


def _build_res8(weights, seed):
    b = _Builder((32, 32, 3), weights, seed)
    b.block("stem")
    e = b.conv_bn_relu("stem", 0, 3, 16, (3, 3), 1)
    for i, (cin, cout, stride) in enumerate([(16, 16, 1), (16, 32, 2), (32, 64, 2)], start=1):
        b.block(f"block{i}")
        e = _res_block(b, f"b{i}", e, cin, cout, stride)
    b.block("head")
    e = b.avgpool("avgpool", e, (8, 8))
    e = b.flatten("flatten", e)
    b.fc("fc", e, 64, 10)
    return b.finish()


def _build_dscnn(weights, seed):
    b = _Builder((10, 49, 1), weights, seed)
    b.block("stem")
    e = b.conv_bn_relu("stem", 0, 1, 64, (4, 10), 2)
    for i in range(1, 5):
        b.block(f"block{i}")
        e = _ds_block(b, f"ds{i}", e, 64, 64, 1)
    b.block("head")
    e = b.avgpool("avgpool", e, (5, 25))
    e = b.flatten("flatten", e)
    b.fc("fc", e, 64, 12)
    return b.finish()


_MOBILENET_BLOCKS = [
    (16, 1), (32, 2), (32, 1), (64, 2), (64, 1), (128, 2),
    (128, 1), (128, 1), (128, 1), (128, 1), (128, 1), (256, 2), (256, 1),
]


def _build_mobilenetv1(weights, seed):
    b = _Builder((96, 96, 3), weights, seed)
    b.block("stem")
    e = b.conv_bn_relu("stem", 0, 3, 8, (3, 3), 2)
    cin = 8
    for i, (cout, stride) in enumerate(_MOBILENET_BLOCKS, start=1):
        b.block(f"block{i}")
        e = _ds_block(b, f"ds{i}", e, cin, cout, stride)
        cin = cout
    b.block("head")
    e = b.avgpool("avgpool", e, (3, 3))
    e = b.flatten("flatten", e)
    b.fc("fc", e, 256, 2)
    return b.finish()


def _build_har_cnn(weights, seed):
    b = _Builder((128, 9), weights, seed)
    b.block("conv1")
    e = b.conv1d("conv1", 0, 9, 64, 3)
    e = b.bn("conv1_bn", e, 64)
    e = b.relu("conv1_relu", e)
    b.block("conv2")
    e = b.conv1d("conv2", e, 64, 64, 3)
    e = b.bn("conv2_bn", e, 64)
    e = b.relu("conv2_relu", e)
    e = b.maxpool("maxpool", e, (2,), (2,))
    e = b.flatten("flatten", e)
    b.block("fc1")
    e = b.fc("fc1", e, 3968, 128)
    e = b.relu("fc1_relu", e)
    b.block("fc2")
    b.fc("fc2", e, 128, 6)
    return b.finish()


_BUILDERS = {
    "res8": _build_res8,
    "dscnn": _build_dscnn,
    "mobilenetv1": _build_mobilenetv1,
    "har_cnn": _build_har_cnn,
}


def build_model(name: str, weights: dict | None = None, seed: int = 0) -> Graph:
    """Construct one of the four reference models.

    With `weights` omitted, parameters are He-initialized deterministically
    from `seed`. With `weights` given (a name->array mapping as produced by
    the container loader), shapes are validated against the architecture.
    """
    if name not in _BUILDERS:
        raise ShapeError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    return _BUILDERS[name](weights, seed)


def graph_params(graph: Graph) -> dict:
    """Flat name->array view of every parameter tensor in the graph."""
    out = {}
    for layer in graph.layers:
        for pname, arr in layer.params.items():
            out[f"{layer.name}.{pname}"] = arr
    return out
