"""Layers, network specs and the graph executor.

A :class:`NetworkSpec` is a declarative, topologically ordered list of
:class:`LayerSpec` nodes; each node names its inputs (``"input"`` is the
image batch).  :class:`Network` instantiates parameters for a spec and runs
forward and backward passes over it by hand, one layer rule at a time.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .acu import AcuLayer, acu_backward, acu_forward, init_positions
from .refconv import ConvParams, conv2d_backward, conv2d_forward, output_size
from .tensor import NonFiniteError, ShapeError, as_tensor

BN_MOMENTUM = 0.9
BN_EPS = 1e-5

KINDS = {"acu", "conv", "batchnorm", "relu", "global_avg_pool", "softmax_xent", "add_shortcut",
         "projection_shortcut"}
_ARITY = {"add_shortcut": 2}


@dataclass
class LayerSpec:
    kind: str
    name: str
    inputs: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.inputs = tuple(self.inputs)
        if len(self.inputs) != _ARITY.get(self.kind, 1):
            raise ValueError(f"{self.kind} layer {self.name!r} takes {_ARITY.get(self.kind, 1)} inputs, "
                             f"got {len(self.inputs)}")


@dataclass
class NetworkSpec:
    layers: list
    classes: int
    in_channels: int = 3
    arch: str = "custom"

    def __post_init__(self):
        seen = {"input"}
        for layer in self.layers:
            if layer.name in seen:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            for src in layer.inputs:
                if src not in seen:
                    raise ValueError(f"layer {layer.name!r} reads {src!r} before it is defined")
            seen.add(layer.name)
        heads = [l for l in self.layers if l.kind == "softmax_xent"]
        if len(heads) != 1 or self.layers[-1].kind != "softmax_xent":
            raise ValueError("a network needs exactly one softmax_xent head, as its last layer")

    def count_layers(self):
        """Weight layers on the main path (shortcut projections excluded)."""
        return sum(l.kind in ("conv", "acu") for l in self.layers)

    def to_text(self):
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_text(cls, text):
        d = json.loads(text)
        layers = [LayerSpec(l["kind"], l["name"], tuple(l["inputs"]), l["params"]) for l in d["layers"]]
        return cls(layers, d["classes"], d["in_channels"], d.get("arch", "custom"))


# ---------------------------------------------------------------- builders

class _Builder:
    def __init__(self):
        self.layers = []
        self.last = "input"

    def add(self, kind, name, inputs=None, **params):
        inputs = (self.last,) if inputs is None else tuple(inputs)
        self.layers.append(LayerSpec(kind, name, inputs, params))
        self.last = name
        return name

    def weight_layer(self, name, out, k=3, stride=1, acu=False, init="grid3x3", inputs=None):
        if acu and k == 3:
            return self.add("acu", name, inputs, out=out, stride=stride, init=init)
        return self.add("conv", name, inputs, out=out, k=k, stride=stride)

    def bn_relu(self, name):
        self.add("batchnorm", f"{name}_bn")
        return self.add("relu", f"{name}_relu")

    def head(self, classes):
        self.add("conv", "fc1", out=classes, k=1, stride=1)
        self.add("global_avg_pool", "pool")
        self.add("softmax_xent", "loss")


def _scaled(c, m):
    return max(4, int(round(c * m)))


PLAIN_LAYOUT = (
    ("conv0", 16, 1, 1),
    ("conv1_1", 48, 3, 1),
    ("conv1_2", 48, 3, 1),
    ("conv2_1", 96, 3, 2),
    ("conv2_2", 96, 3, 1),
    ("conv3_1", 192, 3, 2),
    ("conv3_2", 192, 3, 1),
)


def build_plain_network(width_multiplier=1.0, classes=10, use_acu=False, in_channels=3):
    """All-convolutional plain network: 1x1 stem, three pairs of 3x3 layers, 1x1 classifier, GAP.

    Every 3x3 layer becomes an ACU when ``use_acu``; each weight layer except
    the classifier is followed by batch norm and ReLU.
    """
    if width_multiplier <= 0:
        raise ValueError("width multiplier must be positive")
    b = _Builder()
    for name, width, k, stride in PLAIN_LAYOUT:
        b.weight_layer(name, _scaled(width, width_multiplier), k=k, stride=stride, acu=use_acu)
        b.bn_relu(name)
    b.head(classes)
    return NetworkSpec(b.layers, classes, in_channels, arch="plain")


def build_shallow_network(channels=(8, 8), classes=2, use_acu=False, in_channels=1, init="grid3x3"):
    """Two (or more) stride-1 3x3 layers with BN/ReLU, then a 1x1 classifier and GAP."""
    b = _Builder()
    for i, c in enumerate(channels):
        b.weight_layer(f"conv{i + 1}", c, k=3, stride=1, acu=use_acu, init=init)
        b.bn_relu(f"conv{i + 1}")
    b.head(classes)
    return NetworkSpec(b.layers, classes, in_channels, arch="shallow")


def build_residual_network(kind="basic", blocks_per_stage=5, classes=10, use_acu=False, width_multiplier=1.0,
                           in_channels=3):
    """Pre-activation residual network with three stages.

    Basic blocks hold two 3x3 layers; bottleneck blocks hold 1x1, 3x3, 1x1.
    The first block of stages two and three halves the resolution.  A 1x1
    projection shortcut is used wherever the block changes shape.
    """
    if kind not in ("basic", "bottleneck"):
        raise ValueError(f"unknown residual block kind {kind!r}")
    if blocks_per_stage < 1:
        raise ValueError("blocks_per_stage must be >= 1")
    m = width_multiplier
    b = _Builder()
    stem = _scaled(16, m)
    b.add("conv", "conv0", out=stem, k=3, stride=1)
    ch = stem
    for s, base in enumerate((16, 32, 64)):
        inner = _scaled(base, m)
        out = inner if kind == "basic" else 4 * inner
        for j in range(blocks_per_stage):
            stride = 2 if (s > 0 and j == 0) else 1
            name = f"res{s + 1}_{j + 1}"
            block_in = b.last
            pre = b.bn_relu(f"{name}_pre")
            if kind == "basic":
                b.weight_layer(f"{name}_a", out, 3, stride, acu=use_acu)
                b.bn_relu(f"{name}_a")
                last = b.weight_layer(f"{name}_b", out, 3, 1, acu=use_acu)
            else:
                b.weight_layer(f"{name}_a", inner, 1, 1)
                b.bn_relu(f"{name}_a")
                b.weight_layer(f"{name}_b", inner, 3, stride, acu=use_acu)
                b.bn_relu(f"{name}_b")
                last = b.weight_layer(f"{name}_c", out, 1, 1)
            if stride != 1 or ch != out:
                shortcut = b.add("projection_shortcut", f"{name}_proj", (pre,), out=out, stride=stride)
            else:
                shortcut = block_in
            b.add("add_shortcut", f"{name}_add", (last, shortcut))
            ch = out
    b.bn_relu("final")
    b.head(classes)
    return NetworkSpec(b.layers, classes, in_channels, arch=f"res-{kind}")


# ---------------------------------------------------------------- layer rules

class _Conv:
    def __init__(self, name, in_ch, out_ch, k, stride, rng):
        self.name = name
        fan_in = in_ch * k * k
        self.p = ConvParams(rng.standard_normal((out_ch, in_ch, k, k)) * math.sqrt(2.0 / fan_in),
                            np.zeros(out_ch), stride=stride, pad=(k - 1) // 2)
        self.params = {f"{name}.weight": self.p.weights, f"{name}.bias": self.p.bias}

    def out_shape(self, shape):
        _, H, W = shape
        k = self.p.weights.shape[2]
        return (self.p.weights.shape[0], output_size(H, k, self.p.stride, self.p.pad),
                output_size(W, k, self.p.stride, self.p.pad))

    def forward(self, xs, train):
        y, self.cache = conv2d_forward(xs[0], self.p)
        return y

    def backward(self, dy, grads):
        dx, dw, db = conv2d_backward(dy, self.cache, self.p)
        grads[f"{self.name}.weight"] = dw
        grads[f"{self.name}.bias"] = db
        return [dx]


class _Acu:
    def __init__(self, name, in_ch, out_ch, stride, init, groups, input_size, rng, position_lr_scale):
        self.name = name
        if isinstance(init, str):
            kind, _, arg = init.partition(":")
            positions = init_positions(kind, int(arg) if arg else None)
        else:
            positions = init_positions("custom", init)
        self.layer = AcuLayer.create(in_ch, out_ch, positions, stride=stride, groups=groups, rng=rng,
                                     input_size=input_size, position_lr_scale=position_lr_scale)
        self.params = {f"{name}.weight": self.layer.weights, f"{name}.bias": self.layer.bias}
        self.position_keys = []
        for g, pos in enumerate(self.layer.group_positions):
            key = f"{name}.positions" if self.layer.groups == 1 else f"{name}.positions.{g}"
            self.params[key] = pos.points
            self.position_keys.append(key)

    def out_shape(self, shape):
        _, H, W = shape
        return (self.layer.out_channels, *self.layer.output_shape(H, W))

    def forward(self, xs, train):
        y, self.cache = acu_forward(xs[0], self.layer)
        return y

    def backward(self, dy, grads):
        g = acu_backward(dy, self.cache, self.layer)
        grads[f"{self.name}.weight"] = g.d_weights
        grads[f"{self.name}.bias"] = g.d_bias
        dpos = g.d_positions if self.layer.groups > 1 else g.d_positions[None]
        for key, d in zip(self.position_keys, dpos):
            grads[key] = d
        return [g.d_input]


class _BatchNorm:
    def __init__(self, name, ch):
        self.name = name
        self.gamma = np.ones(ch)
        self.beta = np.zeros(ch)
        self.running_mean = np.zeros(ch)
        self.running_var = np.ones(ch)
        self.params = {f"{name}.gamma": self.gamma, f"{name}.beta": self.beta}
        self.buffers = {f"{name}.running_mean": self.running_mean, f"{name}.running_var": self.running_var}

    def out_shape(self, shape):
        return shape

    def forward(self, xs, train):
        x = xs[0]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean *= BN_MOMENTUM
            self.running_mean += (1.0 - BN_MOMENTUM) * mean
            self.running_var *= BN_MOMENTUM
            self.running_var += (1.0 - BN_MOMENTUM) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self.cache = (xhat, inv_std)
        return xhat * self.gamma[None, :, None, None] + self.beta[None, :, None, None]

    def backward(self, dy, grads):
        xhat, inv_std = self.cache
        M = dy.shape[0] * dy.shape[2] * dy.shape[3]
        grads[f"{self.name}.gamma"] = np.sum(dy * xhat, axis=(0, 2, 3))
        grads[f"{self.name}.beta"] = dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma[None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = np.sum(dxhat * xhat, axis=(0, 2, 3))[None, :, None, None]
        return [(inv_std[None, :, None, None] / M) * (M * dxhat - s1 - xhat * s2)]


class _ReLU:
    params = {}

    def __init__(self, name):
        self.name = name

    def out_shape(self, shape):
        return shape

    def forward(self, xs, train):
        self.mask = xs[0] > 0
        return xs[0] * self.mask

    def backward(self, dy, grads):
        return [dy * self.mask]


class _Add:
    params = {}

    def __init__(self, name):
        self.name = name

    def out_shape(self, shape):
        return shape

    def forward(self, xs, train):
        if xs[0].shape != xs[1].shape:
            raise ShapeError(f"{self.name}: cannot add {xs[0].shape} and {xs[1].shape}")
        return xs[0] + xs[1]

    def backward(self, dy, grads):
        return [dy, dy]


class _GlobalAvgPool:
    params = {}

    def __init__(self, name):
        self.name = name

    def out_shape(self, shape):
        return (shape[0],)

    def forward(self, xs, train):
        self.shape = xs[0].shape
        return xs[0].mean(axis=(2, 3))

    def backward(self, dy, grads):
        N, C, H, W = self.shape
        return [np.broadcast_to((dy / (H * W))[:, :, None, None], self.shape).copy()]


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    N = logits.shape[0]
    loss = -float(logp[np.arange(N), labels].mean())
    d = np.exp(logp)
    d[np.arange(N), labels] -= 1.0
    return loss, d / N


class Network:
    """Parameters plus forward/backward for a :class:`NetworkSpec`.

    ``input_shape`` is ``(C, H, W)`` of one image; spatial sizes are needed
    up front because ACU clamp radii depend on each layer's input size.
    """

    def __init__(self, spec, input_shape, rng=None, position_lr_scale=0.01):
        rng = np.random.default_rng(0) if rng is None else rng
        self.spec = spec
        self.input_shape = tuple(input_shape)
        if self.input_shape[0] != spec.in_channels:
            raise ShapeError(f"spec expects {spec.in_channels} input channels, got {self.input_shape[0]}")
        self.params = {}
        self.buffers = {}
        self.nodes = []
        self.acu = {}
        shapes = {"input": self.input_shape}
        for ls in spec.layers[:-1]:
            in_shape = shapes[ls.inputs[0]]
            p = ls.params
            if ls.kind == "conv":
                node = _Conv(ls.name, in_shape[0], p["out"], p.get("k", 3), p.get("stride", 1), rng)
            elif ls.kind == "projection_shortcut":
                node = _Conv(ls.name, in_shape[0], p["out"], 1, p.get("stride", 1), rng)
            elif ls.kind == "acu":
                node = _Acu(ls.name, in_shape[0], p["out"], p.get("stride", 1), p.get("init", "grid3x3"),
                            p.get("groups", 1), in_shape[1:], rng, position_lr_scale)
                self.acu[ls.name] = node.layer
            elif ls.kind == "batchnorm":
                node = _BatchNorm(ls.name, in_shape[0])
                self.buffers.update(node.buffers)
            elif ls.kind == "relu":
                node = _ReLU(ls.name)
            elif ls.kind == "add_shortcut":
                node = _Add(ls.name)
            elif ls.kind == "global_avg_pool":
                node = _GlobalAvgPool(ls.name)
            else:  # pragma: no cover - guarded by LayerSpec
                raise ValueError(ls.kind)
            shapes[ls.name] = node.out_shape(in_shape)
            if ls.kind == "add_shortcut" and shapes[ls.inputs[1]] != in_shape:
                raise ShapeError(f"{ls.name}: branch {in_shape} and shortcut {shapes[ls.inputs[1]]} differ")
            if min(shapes[ls.name][1:], default=1) < 1:
                raise ShapeError(f"{ls.name}: input {self.input_shape} shrinks to nothing")
            self.params.update(node.params)
            self.nodes.append((ls, node))
        self.logits_from = spec.layers[-1].inputs[0]
        if len(shapes[self.logits_from]) != 1 or shapes[self.logits_from][0] != spec.classes:
            raise ShapeError(f"loss head expects {spec.classes} pooled logits, got {shapes[self.logits_from]}")

    def position_keys(self):
        return [k for node in self.nodes if isinstance(node[1], _Acu) for k in node[1].position_keys]

    def decay_keys(self):
        """Parameters subject to weight decay: conv and ACU weights only."""
        return [k for k in self.params if k.endswith(".weight")]

    def num_params(self):
        """Learnable scalar count (a fixed origin synapse is not a parameter)."""
        total = sum(v.size for k, v in self.params.items() if ".positions" not in k)
        return total + sum(p.n_learnable for layer in self.acu.values() for p in layer.group_positions)

    def forward(self, x, train=True):
        x = as_tensor(x, "network input")
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network built for {self.input_shape} images, got {x.shape[1:]}")
        acts = {"input": x}
        for ls, node in self.nodes:
            acts[ls.name] = node.forward([acts[s] for s in ls.inputs], train)
        return acts[self.logits_from]

    def forward_backward(self, x, labels, backward=True, return_input_grad=False, train=True):
        """Mean softmax cross-entropy of the batch and (optionally) all gradients."""
        labels = np.asarray(labels, dtype=np.int64)
        x = as_tensor(x, "network input")
        logits = self.forward(x, train=train)
        if labels.shape != (logits.shape[0],):
            raise ShapeError(f"{logits.shape[0]} images but labels of shape {labels.shape}")
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= self.spec.classes:
            raise ValueError("label outside [0, classes)")
        loss, dlogits = softmax_xent(logits, labels)
        if not math.isfinite(loss):
            raise NonFiniteError(f"loss is {loss}")
        if not backward:
            return loss, None
        grads = {}
        dacts = {self.logits_from: dlogits}
        for ls, node in reversed(self.nodes):
            dy = dacts.pop(ls.name, None)
            if dy is None:
                continue
            for src, d in zip(ls.inputs, node.backward(dy, grads)):
                if src in dacts:
                    dacts[src] = dacts[src] + d
                else:
                    dacts[src] = d
        for k, v in self.params.items():
            grads.setdefault(k, np.zeros_like(v))
        if return_input_grad:
            return loss, grads, dacts.get("input", np.zeros_like(x))
        return loss, grads

    def predict(self, x, batch_size=256):
        out = []
        for i in range(0, len(x), batch_size):
            out.append(np.argmax(self.forward(x[i:i + batch_size], train=False), axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def error_rate(self, x, labels, batch_size=256):
        """Top-1 error in percent, in inference mode."""
        if len(labels) == 0:
            return 0.0
        return 100.0 * float(np.mean(self.predict(x, batch_size) != np.asarray(labels)))


def forward_backward(net, params, batch, labels):
    """Loss and gradients of ``net`` evaluated at ``params`` (copied into the network)."""
    if params is not None and params is not net.params:
        for k, v in params.items():
            np.copyto(net.params[k], v)
    return net.forward_backward(batch, labels)
