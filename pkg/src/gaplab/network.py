"""Hyperparameter configurations and the NiN-family network builder.

A network is an ordered stack of layers built deterministically from a
:class:`HyperConfig` and a seed. One building block is a 3x3 stride-2
convolution followed by two 1x1 stride-1 convolutions, each conv carrying
batch norm and ReLU, with dropout closing the block; a trailing 1x1
convolution maps to the class count and global average pooling produces
the logits.

Parameter vectorization order is fixed: layers in network order, weight
tensor before bias, tensors flattened C-order (out channel, in channel,
row, col). Batch-norm scale/shift are trainable during optimization but
are folded away by :func:`fuse_batchnorm` before any measure is computed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np

from .layers import BatchNorm2d, Conv2d, Dropout, GlobalAvgPool, Layer, ReLU

OPTIMIZERS = ("momentum-sgd", "adam", "rmsprop")

# Report column order for the seven hyperparameter axes.
AXES = ("batch_size", "dropout", "learning_rate", "depth", "optimizer", "weight_decay", "width")


class InvalidArchitectureError(ValueError):
    pass


class UnsupportedTopologyError(ValueError):
    pass


@dataclass(frozen=True)
class HyperConfig:
    """One point in the hyperparameter grid."""

    batch_size: int
    dropout: float
    learning_rate: float
    depth: int  # number of NiN blocks
    optimizer: str
    weight_decay: float
    width: int  # output channels of every block

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def axis_value(self, axis: str):
        return getattr(self, axis)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**{name: d[name] for name in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ConvSpec:
    """Static shape of one convolution layer (weights not included)."""

    c_in: int
    c_out: int
    k: int
    stride: int
    padding: int
    n_in: int  # spatial size entering this layer


@dataclass
class Network:
    layers: list[Layer]
    input_shape: tuple[int, int, int]  # (channels, n, n)
    num_classes: int
    conv_specs: list[ConvSpec] = field(default_factory=list)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def jvp(self, tangents: list[dict | None], batch_shape: tuple) -> np.ndarray:
        """Forward-mode directional derivative of the logits.

        Requires a prior :meth:`forward` (layers hold their caches);
        ``tangents[i]`` matches ``layers[i].params`` or is None.
        """
        dtype = self.layers[0].params["weight"].dtype if self.layers[0].params else np.float32
        x_dot = np.zeros(batch_shape, dtype=dtype)
        for layer, tangent in zip(self.layers, tangents):
            x_dot = layer.jvp(x_dot, tangent)
        return x_dot

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def trainable(self) -> list[tuple[Layer, str]]:
        """(layer, param-name) pairs in vectorization order."""
        out = []
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                out.extend([(layer, "weight"), (layer, "bias")])
            elif isinstance(layer, BatchNorm2d):
                out.extend([(layer, "gamma"), (layer, "beta")])
        return out

    def conv_layers(self) -> list[Conv2d]:
        return [l for l in self.layers if isinstance(l, Conv2d)]

    @property
    def depth(self) -> int:
        """Number of weighted (conv) layers."""
        return len(self.conv_specs)

    def num_params(self) -> int:
        return sum(layer.params[name].size for layer, name in self.trainable())

    @staticmethod
    def params_of(layer: Layer, name: str) -> np.ndarray:
        return layer.params[name]

    @staticmethod
    def grads_of(layer: Layer, name: str) -> np.ndarray:
        return layer.grads[name]

    def set_dropout_rng(self, rng: np.random.Generator | None) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def astype(self, dtype) -> "Network":
        """Deep copy with parameters and BN state cast to ``dtype``."""
        net = copy.deepcopy(self)
        for layer in net.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
            layer.grads = {}
            if isinstance(layer, BatchNorm2d):
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
        return net


def param_vecc(net: Network) -> np.ndarray:
    """Flatten all trainable parameters into one float64 vector."""
    parts = [layer.params[name].ravel() for layer, name in net.trainable()]
    return np.concatenate(parts).astype(np.float64)


def param_scatter(net: Network, vec: np.ndarray) -> None:
    """Inverse of :func:`param_vecc`; writes in place preserving dtypes."""
    pos = 0
    for layer, name in net.trainable():
        p = layer.params[name]
        layer.params[name] = vec[pos : pos + p.size].reshape(p.shape).astype(p.dtype)
        pos += p.size
    if pos != vec.size:
        raise ValueError("vector length does not match the network")


def snapshot_params(net: Network) -> list[np.ndarray]:
    """Copies of every trainable tensor, in vectorization order."""
    return [net.params_of(layer, name).copy() for layer, name in net.trainable()]


def build_nin(
    config: HyperConfig,
    input_shape: tuple[int, int, int],
    num_classes: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> tuple[Network, list[np.ndarray]]:
    """Build the block-stacked network for ``config`` and snapshot its init.

    Weights are He fan-in normal draws from ``rng`` in layer order; biases
    start at zero. Returns ``(network, init_snapshot)`` where the snapshot
    lists every trainable tensor (vectorization order) at initialization.
    """
    c_in, n, n2 = input_shape
    if n != n2:
        raise InvalidArchitectureError("only square inputs are supported")
    layers: list[Layer] = []
    specs: list[ConvSpec] = []

    def add_conv(ci, co, k, stride, padding, spatial):
        if k > spatial + 2 * padding:
            raise InvalidArchitectureError(
                f"kernel {k} exceeds padded input {spatial + 2 * padding} at depth {len(specs)}"
            )
        out = (spatial + 2 * padding - k) // stride + 1
        if out < 1:
            raise InvalidArchitectureError("spatial size collapsed below 1")
        fan_in = ci * k * k
        w = (rng.standard_normal((co, ci, k, k)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        b = np.zeros(co, dtype=dtype)
        layers.append(Conv2d(w, b, stride, padding))
        specs.append(ConvSpec(ci, co, k, stride, padding, spatial))
        return out

    width = config.width
    spatial = n
    channels = c_in
    for _ in range(config.depth):
        spatial = add_conv(channels, width, 3, 2, 1, spatial)
        layers.append(BatchNorm2d(width, dtype=dtype))
        layers.append(ReLU())
        for _ in range(2):
            spatial = add_conv(width, width, 1, 1, 0, spatial)
            layers.append(BatchNorm2d(width, dtype=dtype))
            layers.append(ReLU())
        layers.append(Dropout(config.dropout))
        channels = width
    add_conv(channels, num_classes, 1, 1, 0, spatial)
    layers.append(GlobalAvgPool())

    net = Network(layers, input_shape, num_classes, specs)
    return net, snapshot_params(net)


def fuse_batchnorm(net: Network) -> Network:
    """Fold eval-mode batch norm into the preceding convolution.

    Returns a new network (the input is untouched) whose eval-mode logits
    equal the original's. Fusion scales are computed in float64 and cast
    back to the layer dtype.
    """
    fused = copy.deepcopy(net)
    out_layers: list[Layer] = []
    for layer in fused.layers:
        if isinstance(layer, BatchNorm2d):
            if not out_layers or not isinstance(out_layers[-1], Conv2d):
                raise UnsupportedTopologyError("batch norm without a preceding convolution")
            conv = out_layers[-1]
            gamma = layer.params["gamma"].astype(np.float64)
            beta = layer.params["beta"].astype(np.float64)
            mean = layer.running_mean.astype(np.float64)
            var = layer.running_var.astype(np.float64)
            scale = gamma / np.sqrt(var + layer.eps)
            w = conv.params["weight"].astype(np.float64) * scale[:, None, None, None]
            b = (conv.params["bias"].astype(np.float64) - mean) * scale + beta
            conv.params["weight"] = w.astype(conv.params["weight"].dtype)
            conv.params["bias"] = b.astype(conv.params["bias"].dtype)
        else:
            out_layers.append(layer)
    fused.layers = out_layers
    return fused


def fusion_max_error(net: Network, rng: np.random.Generator, trials: int = 100) -> float:
    """Max |fused - unfused| eval-mode logit gap over random inputs.

    The fusion is recomputed in float64 and both paths run in float64, so
    the statistic reflects the fusion algebra itself. (The float32-stored
    fused weights used for measurement additionally carry the usual ~1e-7
    relative representation rounding.)
    """
    a = net.astype(np.float64)
    b = fuse_batchnorm(a)
    x = rng.standard_normal((trials, *net.input_shape))
    la = a.forward(x, train=False)
    lb = b.forward(x, train=False)
    return float(np.abs(la - lb).max())
