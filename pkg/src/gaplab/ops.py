"""Dense tensor kernels: convolution, pooling, batch norm, activations,
softmax cross-entropy and the 2-D FFT.

All image operations accept either a single image ``[C, H, W]`` or a batch
``[B, C, H, W]`` and preserve the rank of their input. Forward/training
arithmetic runs in the dtype of its inputs (float32 in production);
reductions that feed measure values accumulate in float64.

Output size convention: ``out = floor((n + 2p - k) / s) + 1``. Padding is
zero-padding, and padded zeros participate in max-pooling (so an
all-negative padded patch can max to 0).
"""

from __future__ import annotations

import numpy as np


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a [C,H,W] or [B,C,H,W] tensor, got shape {x.shape}")


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > n + 2 * padding:
        raise ValueError(f"kernel {k} larger than padded input {n + 2 * padding}")
    out = (n + 2 * padding - k) // stride + 1
    if out < 1:
        raise ValueError("spatial output collapsed below 1")
    return out


def pad2d(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(padding, padding), (padding, padding)])


def im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Padded input [B,C,Hp,Wp] -> patch matrix [B, C*k*k, ho*wo]."""
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * k * k, ho * wo)


def col2im(cols: np.ndarray, xp_shape: tuple, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col`; scatters patch gradients back."""
    b, c, hp, wp = xp_shape
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    cols = cols.reshape(b, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return xp


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlation of ``x`` with ``kernel [c_out, c_in, k, k]``."""
    xb, squeeze = _as_batched(x)
    c_out, c_in, k, k2 = kernel.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if xb.shape[1] != c_in:
        raise ValueError(f"kernel expects {c_in} input channels, input has {xb.shape[1]}")
    n = xb.shape[2]
    ho = conv_output_size(n, k, stride, padding)
    wo = conv_output_size(xb.shape[3], k, stride, padding)
    cols = im2col(pad2d(xb, padding), k, stride, ho, wo)
    y = np.matmul(kernel.reshape(c_out, -1), cols)
    if bias is not None:
        y += bias[:, None]
    y = y.reshape(xb.shape[0], c_out, ho, wo)
    return y[0] if squeeze else y


def conv2d_backward(
    grad_y: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int,
    padding: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dkernel, dbias) of a conv2d forward pass."""
    xb, squeeze = _as_batched(x)
    gyb, _ = _as_batched(grad_y)
    c_out, c_in, k, _ = kernel.shape
    b, _, ho, wo = gyb.shape
    xp = pad2d(xb, padding)
    cols = im2col(xp, k, stride, ho, wo)
    gy = gyb.reshape(b, c_out, ho * wo)
    d_kernel = np.einsum("bop,bcp->oc", gy, cols, optimize=True).reshape(kernel.shape)
    d_bias = gy.sum(axis=(0, 2))
    d_cols = np.matmul(kernel.reshape(c_out, -1).T, gy)
    dxp = col2im(d_cols, xp.shape, k, stride, ho, wo)
    dx = dxp[:, :, padding : padding + xb.shape[2], padding : padding + xb.shape[3]] if padding else dxp
    return (dx[0] if squeeze else dx), d_kernel, d_bias


def maxpool2d(x: np.ndarray, k: int, stride: int, padding: int = 0) -> np.ndarray:
    """Per-channel max over k x k zero-padded patches."""
    y, _ = maxpool2d_with_argmax(x, k, stride, padding)
    return y


def maxpool2d_with_argmax(x: np.ndarray, k: int, stride: int, padding: int = 0):
    xb, squeeze = _as_batched(x)
    b, c, n, w = xb.shape
    ho = conv_output_size(n, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = pad2d(xb, padding)
    patches = im2col(xp.reshape(b * c, 1, *xp.shape[2:]), k, stride, ho, wo)
    arg = patches.argmax(axis=1)
    y = np.take_along_axis(patches, arg[:, None, :], axis=1)[:, 0, :]
    y = y.reshape(b, c, ho, wo)
    return (y[0] if squeeze else y), (arg, xp.shape, ho, wo)


def maxpool2d_backward(grad_y: np.ndarray, x: np.ndarray, cache, k: int, stride: int, padding: int) -> np.ndarray:
    arg, xp_shape, ho, wo = cache
    xb, squeeze = _as_batched(x)
    gyb, _ = _as_batched(grad_y)
    b, c = xb.shape[:2]
    d_patches = np.zeros((b * c, k * k, ho * wo), dtype=gyb.dtype)
    np.put_along_axis(d_patches, arg[:, None, :], gyb.reshape(b * c, 1, ho * wo), axis=1)
    dxp = col2im(d_patches, (b * c, 1, xp_shape[2], xp_shape[3]), k, stride, ho, wo)
    dxp = dxp.reshape(b, c, xp_shape[2], xp_shape[3])
    dx = dxp[:, :, padding : padding + xb.shape[2], padding : padding + xb.shape[3]] if padding else dxp
    return dx[0] if squeeze else dx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """[C,H,W] -> [C] or [B,C,H,W] -> [B,C] per-channel mean."""
    if x.ndim == 3:
        return x.mean(axis=(1, 2))
    return x.mean(axis=(2, 3))


def batchnorm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "eval",
    eps: float = 1e-5,
    momentum: float = 0.9,
):
    """Channel-wise batch normalization.

    In train mode, normalizes by the biased batch statistics and updates
    running stats in place: ``running = momentum * running + (1-momentum) * batch``.
    Returns ``(y, cache)`` where cache feeds :func:`batchnorm_backward`
    (cache is None in eval mode).
    """
    xb, squeeze = _as_batched(x)
    if gamma.shape[0] != xb.shape[1]:
        raise ValueError("batchnorm state does not match channel count")
    if mode == "train":
        mean = xb.mean(axis=(0, 2, 3))
        var = xb.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xb - mean[:, None, None]) * inv_std[:, None, None]
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    return (y[0] if squeeze else y), (xhat, inv_std, mode)


def batchnorm_backward(grad_y: np.ndarray, gamma: np.ndarray, cache):
    """Gradients (dx, dgamma, dbeta) of a batchnorm forward.

    Train mode differentiates through the batch statistics; eval mode
    treats the running statistics as constants.
    """
    xhat, inv_std, mode = cache
    gyb, squeeze = _as_batched(grad_y)
    d_beta = gyb.sum(axis=(0, 2, 3))
    d_gamma = (gyb * xhat).sum(axis=(0, 2, 3))
    d_xhat = gyb * gamma[:, None, None]
    if mode == "train":
        dx = (
            d_xhat
            - d_xhat.mean(axis=(0, 2, 3))[:, None, None]
            - xhat * (d_xhat * xhat).mean(axis=(0, 2, 3))[:, None, None]
        ) * inv_std[:, None, None]
    else:
        dx = d_xhat * inv_std[:, None, None]
    return (dx[0] if squeeze else dx), d_gamma, d_beta


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Return (loss, probs) for logits [kappa] or [B, kappa].

    Loss is the per-example ``-log p[label]`` (a scalar for a single
    example, a [B] vector for a batch), accumulated in float64.
    """
    single = logits.ndim == 1
    z = logits[None] if single else logits
    if z.shape[1] < 2:
        raise ValueError("need at least 2 classes")
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValueError("label out of range")
    z64 = z.astype(np.float64) - z.max(axis=1, keepdims=True).astype(np.float64)
    log_norm = np.log(np.exp(z64).sum(axis=1))
    loss = log_norm - z64[np.arange(z.shape[0]), y]
    probs = np.exp(z64 - log_norm[:, None])
    if single:
        return loss[0], probs[0]
    return loss, probs


def fft2d(x: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT of an [n, n] (or [..., n, n]) complex tensor."""
    return np.fft.fft2(np.asarray(x, dtype=np.complex128), norm="ortho")


def ifft2d(x: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.asarray(x, dtype=np.complex128), norm="ortho")
