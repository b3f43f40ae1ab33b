"""Layer objects stacked into networks.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``grads`` during ``backward``. Layers
are single-owner objects: one training job mutates them; after training
they are only read. Fused (conv/relu/pool-only) networks additionally
support a forward-mode ``jvp`` used for parameter-direction derivatives.
"""

from __future__ import annotations

import numpy as np

from . import ops


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, x_dot: np.ndarray, tangent: dict | None) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward-mode pass")

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv2d(Layer):
    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int, padding: int):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}
        self.stride = stride
        self.padding = padding
        self._x = None

    @property
    def weight(self) -> np.ndarray:
        return self.params["weight"]

    @property
    def bias(self) -> np.ndarray:
        return self.params["bias"]

    def forward(self, x, train):
        self._x = x
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def backward(self, grad_y):
        dx, dw, db = ops.conv2d_backward(grad_y, self._x, self.weight, self.stride, self.padding)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx

    def jvp(self, x_dot, tangent):
        y_dot = ops.conv2d(x_dot, self.weight, None, self.stride, self.padding)
        if tangent is not None:
            y_dot = y_dot + ops.conv2d(self._x, tangent["weight"], tangent["bias"], self.stride, self.padding)
        return y_dot


class BatchNorm2d(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9, dtype=np.float32):
        super().__init__()
        self.params = {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
        }
        # Running statistics are state, not trainable parameters.
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x, train):
        y, self._cache = ops.batchnorm(
            x,
            self.params["gamma"],
            self.params["beta"],
            self.running_mean,
            self.running_var,
            mode="train" if train else "eval",
            eps=self.eps,
            momentum=self.momentum,
        )
        return y

    def backward(self, grad_y):
        dx, dg, db = ops.batchnorm_backward(grad_y, self.params["gamma"], self._cache)
        self.grads["gamma"] += dg
        self.grads["beta"] += db
        return dx


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x, train):
        self._y = ops.relu(x)
        return self._y

    def backward(self, grad_y):
        return grad_y * (self._y > 0)

    def jvp(self, x_dot, tangent):
        return x_dot * (self._y > 0)


class Dropout(Layer):
    """Inverted dropout; identity in eval mode and when p == 0."""

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        super().__init__()
        self.p = float(p)
        self.rng = rng
        self._mask = None

    def forward(self, x, train):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if self.rng is None:
            raise RuntimeError("train-mode dropout needs an rng")
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad_y):
        if self._mask is None:
            return grad_y
        return grad_y * self._mask

    def jvp(self, x_dot, tangent):
        return x_dot  # measures run in eval mode


class GlobalAvgPool(Layer):
    def __init__(self):
        super().__init__()
        self._hw = None

    def forward(self, x, train):
        self._hw = x.shape[-2:]
        return ops.global_avg_pool(x)

    def backward(self, grad_y):
        h, w = self._hw
        scale = 1.0 / (h * w)
        return np.broadcast_to((grad_y * scale)[..., None, None], grad_y.shape + (h, w)).astype(grad_y.dtype)

    def jvp(self, x_dot, tangent):
        return ops.global_avg_pool(x_dot)


class MaxPool2d(Layer):
    def __init__(self, k: int, stride: int, padding: int = 0):
        super().__init__()
        self.k = k
        self.stride = stride
        self.padding = padding
        self._x = None
        self._cache = None

    def forward(self, x, train):
        self._x = x
        y, self._cache = ops.maxpool2d_with_argmax(x, self.k, self.stride, self.padding)
        return y

    def backward(self, grad_y):
        return ops.maxpool2d_backward(grad_y, self._x, self._cache, self.k, self.stride, self.padding)
