"""Declarative network specs, presets, and a small sequential/two-stream runner.

A network is up to two parallel input streams whose outputs are concatenated
along axis 1 (features or channels), followed by a trunk. With no streams the
input views are concatenated directly. At most one fc/conv node may carry
``corrreg=True``; that node is where view regularizers act.
"""
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .exceptions import ConfigError, DimensionError
from .tensor import rng

LAYER_KINDS = ("fc", "conv", "relu", "maxpool", "avgpool", "bn", "flatten")


@dataclass
class LayerNode:
    kind: str
    geometry: dict = field(default_factory=dict)
    corrreg: bool = False
    dropout: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.corrreg and self.kind not in ("fc", "conv"):
            raise ConfigError(f"only fc/conv layers can carry CorrReg, not {self.kind}")


@dataclass
class NetworkSpec:
    name: str
    trunk: list
    stream1: list = field(default_factory=list)
    stream2: list = field(default_factory=list)

    def __post_init__(self):
        if bool(self.stream1) != bool(self.stream2):
            raise ConfigError("two-stream networks need both streams")
        flagged = [n for n in self.stream1 + self.stream2 + self.trunk if n.corrreg]
        if len(flagged) > 1:
            raise ConfigError("at most one layer may carry CorrReg")


def _fc(n, **kw):
    return LayerNode("fc", {"n_out": n}, **kw)


def _conv(c, k, stride=1, padding=0, **kw):
    return LayerNode("conv", {"c_out": c, "k": k, "stride": stride, "padding": padding}, **kw)


def _pool(kind, k, stride, padding=0):
    return LayerNode(kind, {"k": k, "stride": stride, "padding": padding})


RELU = LayerNode("relu")

PRESETS = ("lenet_fc", "lenet_mini", "two_stream_low", "two_stream_mid", "two_stream_high")


def preset(name, n_classes, width=64):
    """Built-in topologies at desk scale.

    ``lenet_fc``: the three FC layers of the LeNet variant on flattened input,
    CorrReg on the middle one. ``lenet_mini``: three 5x5 conv layers with
    max/avg pooling, then those FC layers. ``two_stream_*``: fc streams fused
    at low/mid/high height, CorrReg on the fusion layer.
    """
    h1, h2 = width, width // 2
    if name == "lenet_fc":
        return NetworkSpec(name, [LayerNode("flatten"), _fc(h1), RELU,
                                  _fc(h2, corrreg=True, dropout=True), RELU, _fc(n_classes)])
    if name == "lenet_mini":
        return NetworkSpec(name, [
            _conv(8, 5, padding=2), RELU, _pool("maxpool", 3, 2, 1),
            _conv(8, 5, padding=2), RELU, _pool("avgpool", 3, 2, 1),
            _conv(16, 5, padding=2), RELU, _pool("avgpool", 3, 2, 1),
            LayerNode("flatten"), _fc(h1), RELU,
            _fc(h2, corrreg=True, dropout=True), RELU, _fc(n_classes),
        ])
    if name == "two_stream_low":
        return NetworkSpec(name, [LayerNode("flatten"), _fc(h1, corrreg=True, dropout=True), RELU,
                                  _fc(h2), RELU, _fc(n_classes)])
    if name == "two_stream_mid":
        s = lambda: [LayerNode("flatten"), _fc(h2), RELU]  # noqa: E731
        return NetworkSpec(name, [_fc(h1, corrreg=True, dropout=True), RELU, _fc(h2), RELU,
                                  _fc(n_classes)], s(), s())
    if name == "two_stream_high":
        s = lambda: [LayerNode("flatten"), _fc(h2), RELU, _fc(h2), RELU]  # noqa: E731
        return NetworkSpec(name, [_fc(h2, corrreg=True, dropout=True), RELU, _fc(n_classes)], s(), s())
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# runtime layers
# ---------------------------------------------------------------------------

class _Layer:
    params = ()
    decay = ()

    def __init__(self, node):
        self.node = node

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, g, reg=None):
        raise NotImplementedError


class Linear(_Layer):
    params = ("W", "b")
    decay = ("W",)

    def __init__(self, node, in_shape, g):
        super().__init__(node)
        n_in = int(np.prod(in_shape))
        n_out = node.geometry["n_out"]
        self.p = L.FcParams(g.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out)), np.zeros(n_out))
        self.out_shape = (n_out,)

    def forward(self, x, train):
        self.in_shape = x.shape
        self.x = x.reshape(x.shape[0], -1)
        return L.fc_forward(self.x, self.p)

    def backward(self, g, reg=None):
        if reg is None:
            gx, gw, gb = L.fc_backward(self.x, self.p, g)
        else:
            gx, gw, gb = reg(self.x, self.p, g)
        self.grads = {"W": gw, "b": gb}
        return gx.reshape(self.in_shape)

    def get(self, name):
        return getattr(self.p, name)

    def set(self, name, value):
        setattr(self.p, name, value)


class Conv(_Layer):
    params = ("filters", "bias")
    decay = ("filters",)

    def __init__(self, node, in_shape, g):
        super().__init__(node)
        if len(in_shape) != 3:
            raise ConfigError(f"conv layer needs (c, H, W) input, got {in_shape}")
        c_in, h, w = in_shape
        geo = node.geometry
        k = geo["k"]
        fan_in = c_in * k * k
        self.p = L.ConvParams(g.normal(0.0, np.sqrt(2.0 / fan_in), (geo["c_out"], c_in, k, k)),
                              np.zeros(geo["c_out"]), geo.get("stride", 1), geo.get("padding", 0))
        self.out_shape = (geo["c_out"],) + self.p.out_size(h, w)

    def forward(self, x, train):
        self.x = x
        y, self.cols = L.conv2d_forward(x, self.p, return_cols=True)
        return y

    def backward(self, g, reg=None):
        if reg is None:
            gx, gf, gb = L.conv2d_backward(self.x, self.p, g, self.cols)
        else:
            gx, gf, gb = reg(self.x, self.p, g)
        self.grads = {"filters": gf, "bias": gb}
        return gx

    def get(self, name):
        return getattr(self.p, name)

    def set(self, name, value):
        setattr(self.p, name, value)


class ReLU(_Layer):
    def __init__(self, node, in_shape, g):
        super().__init__(node)
        self.out_shape = in_shape

    def forward(self, x, train):
        self.x = x
        return L.relu(x)

    def backward(self, g, reg=None):
        return L.relu_backward(self.x, g)


class Pool(_Layer):
    def __init__(self, node, in_shape, g):
        super().__init__(node)
        geo = node.geometry
        self.kind = "max" if node.kind == "maxpool" else "avg"
        self.k, self.stride, self.padding = geo["k"], geo["stride"], geo.get("padding", 0)
        probe, _ = L.pool2d_forward(np.zeros((1,) + tuple(in_shape)), self.kind, self.k, self.stride, self.padding)
        self.out_shape = probe.shape[1:]

    def forward(self, x, train):
        y, self.cache = L.pool2d_forward(x, self.kind, self.k, self.stride, self.padding)
        return y

    def backward(self, g, reg=None):
        return L.pool2d_backward(g, self.cache)


class BatchNorm(_Layer):
    params = ("gamma", "beta")

    def __init__(self, node, in_shape, g):
        super().__init__(node)
        self.state = L.BatchNormState.fresh(in_shape[0])
        self.out_shape = in_shape

    def forward(self, x, train):
        y, self.cache = L.batchnorm_forward(x, self.state, "train" if train else "eval")
        return y

    def backward(self, g, reg=None):
        gx, gg, gb = L.batchnorm_backward(g, self.state, self.cache)
        self.grads = {"gamma": gg, "beta": gb}
        return gx

    def get(self, name):
        return getattr(self.state, name)

    def set(self, name, value):
        setattr(self.state, name, value)


class Flatten(_Layer):
    def __init__(self, node, in_shape, g):
        super().__init__(node)
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x, train):
        self.in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g, reg=None):
        return g.reshape(self.in_shape)


_BUILDERS = {"fc": Linear, "conv": Conv, "relu": ReLU, "maxpool": Pool, "avgpool": Pool,
             "bn": BatchNorm, "flatten": Flatten}


def _build_chain(nodes, in_shape, prefix, g):
    out, shape = [], tuple(in_shape)
    for i, node in enumerate(nodes):
        layer = _BUILDERS[node.kind](node, shape, g)
        layer.name = f"{prefix}{i}"
        out.append(layer)
        shape = tuple(layer.out_shape)
    return out, shape


def _concat_shape(a, b):
    if len(a) != len(b) or a[1:] != b[1:]:
        raise DimensionError(f"cannot concatenate views of shapes {a} and {b}")
    return (a[0] + b[0],) + tuple(a[1:])


class Network:
    """Runnable network built from a NetworkSpec with seeded Gaussian (He) init.

    ``input_shapes`` holds the per-sample shape of each input view.
    """

    def __init__(self, spec, input_shapes, seed=0):
        self.spec = spec
        self.input_shapes = [tuple(s) for s in input_shapes]
        g = rng(seed)
        if spec.stream1:
            if len(self.input_shapes) != 2:
                raise ConfigError(f"{spec.name} needs two input views")
            self.stream1, o1 = _build_chain(spec.stream1, self.input_shapes[0], "s1.", g)
            self.stream2, o2 = _build_chain(spec.stream2, self.input_shapes[1], "s2.", g)
            self.split = o1[0]
            trunk_in = _concat_shape(o1, o2)
        else:
            self.stream1 = self.stream2 = []
            shape = self.input_shapes[0]
            for s in self.input_shapes[1:]:
                shape = _concat_shape(shape, s)
            trunk_in = shape
        self.trunk, self.out_shape = _build_chain(spec.trunk, trunk_in, "t.", g)
        self.layers = self.stream1 + self.stream2 + self.trunk
        for i, layer in enumerate(self.layers):
            layer.uid = i
            layer.mask = None
        flagged = [layer for layer in self.layers if layer.node.corrreg]
        self.reg_layer = flagged[0] if flagged else None

    # -- parameters ----------------------------------------------------------

    def param_names(self):
        return [f"{layer.name}.{p}" for layer in self.layers for p in layer.params]

    def decay_names(self):
        return {f"{layer.name}.{p}" for layer in self.layers for p in layer.decay}

    def _lookup(self, full):
        lname, pname = full.rsplit(".", 1)
        for layer in self.layers:
            if layer.name == lname:
                return layer, pname
        raise KeyError(full)

    def get_params(self):
        out = {}
        for name in self.param_names():
            layer, p = self._lookup(name)
            out[name] = layer.get(p)
        return out

    def set_params(self, values):
        for name, v in values.items():
            layer, p = self._lookup(name)
            cur = layer.get(p)
            if cur.shape != np.shape(v):
                raise DimensionError(f"{name}: expected shape {cur.shape}, got {np.shape(v)}")
            layer.set(p, np.array(v, dtype=np.float64))

    def get_grads(self):
        out = {}
        for layer in self.layers:
            for p in layer.params:
                out[f"{layer.name}.{p}"] = layer.grads[p]
        return out

    def buffers(self):
        """Non-trainable state (batch-norm running statistics)."""
        out = {}
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                out[f"{layer.name}.running_mean"] = layer.state.running_mean
                out[f"{layer.name}.running_var"] = layer.state.running_var
        return out

    def set_buffers(self, values):
        for name, v in values.items():
            layer, p = self._lookup(name)
            setattr(layer.state, p, np.array(v, dtype=np.float64))

    # -- passes ------------------------------------------------------------------

    def _run(self, chain, x, train, dropout_rate, seed):
        for layer in chain:
            if train and dropout_rate > 0 and layer.node.dropout:
                layer.mask = L.dropout_mask(x.shape, dropout_rate, (seed, layer.uid))
                x = x * layer.mask
            else:
                layer.mask = None
            x = layer.forward(x, train)
        return x

    def forward(self, views, train=False, dropout_rate=0.0, seed=0):
        views = [np.asarray(v, dtype=np.float64) for v in views]
        if self.stream1:
            a = self._run(self.stream1, views[0], train, dropout_rate, seed)
            b = self._run(self.stream2, views[1], train, dropout_rate, seed)
            x = np.concatenate([a, b], axis=1)
        else:
            x = views[0] if len(views) == 1 else np.concatenate(views[: len(self.input_shapes)], axis=1)
        return self._run(self.trunk, x, train, dropout_rate, seed)

    def _back(self, chain, g, reg):
        for layer in reversed(chain):
            g = layer.backward(g, reg if layer is self.reg_layer else None)
            if layer.mask is not None:
                g = g * layer.mask
        return g

    def backward(self, grad_logits, reg=None):
        """Back-propagate; ``reg(x, params, grad_out)`` replaces the flagged layer's backward."""
        g = self._back(self.trunk, grad_logits, reg)
        if self.stream1:
            self._back(self.stream1, g[:, : self.split], reg)
            self._back(self.stream2, g[:, self.split:], reg)
        return self.get_grads()

    def features(self, views, layer=None):
        """Eval-mode output of ``layer`` (default: the CorrReg layer), before activation."""
        target = self.reg_layer if layer is None else self._layer_by_name(layer)
        if target is None:
            raise ConfigError("network has no CorrReg layer; name a layer to probe")
        captured = {}
        original = target.forward

        def hook(x, train):
            captured["y"] = original(x, train)
            return captured["y"]

        target.forward = hook
        try:
            self.forward(views, train=False)
        finally:
            del target.forward
        return captured["y"]

    def _layer_by_name(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def predict(self, views, batch_size=512):
        n = len(views[0])
        out = []
        for s in range(0, n, batch_size):
            out.append(self.forward([v[s:s + batch_size] for v in views]).argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
