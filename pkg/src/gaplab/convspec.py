"""Singular values of the linear operator a convolution layer induces.

Two routes are provided:

* ``fft_singular_values`` - exact spectrum of the stride-1 circulant
  (wrap-around) operator on n x n inputs, obtained from per-frequency SVDs
  of the c_out x c_in transfer matrices.
* ``power_iteration_norm`` - top singular value of the layer's actual
  zero-padded, possibly strided operator, via power iteration on A^T A
  using the conv forward and its adjoint.

The measure pipeline defaults to power iteration (exact operator,
iterative value) and can be switched to the FFT route, which is exact for
stride 1 but ignores stride and boundary handling.
"""

from __future__ import annotations

import numpy as np

from . import ops


def fft_singular_values(kernel: np.ndarray, n: int) -> np.ndarray:
    """All singular values (descending) of the stride-1 circulant operator."""
    c_out, c_in, k, _ = kernel.shape
    if k > n:
        raise ValueError(f"kernel size {k} exceeds input size {n}")
    padded = np.zeros((c_out, c_in, n, n), dtype=np.float64)
    padded[:, :, :k, :k] = kernel.astype(np.float64)
    transfer = np.fft.fft2(padded)  # [c_out, c_in, n, n]
    per_freq = transfer.transpose(2, 3, 0, 1).reshape(n * n, c_out, c_in)
    sv = np.linalg.svd(per_freq, compute_uv=False)  # [n*n, min(c_out, c_in)]
    full = np.zeros((n * n, max(c_out, c_in)))
    full[:, : sv.shape[1]] = sv  # rank-deficient frequencies pad with zeros
    return np.sort(full.ravel())[::-1]


def fft_spectral_norm(kernel: np.ndarray, n: int) -> float:
    return float(fft_singular_values(kernel, n)[0])


def materialized_operator(kernel: np.ndarray, n: int) -> np.ndarray:
    """Dense [c_out*n*n, c_in*n*n] matrix of the circular stride-1 operator.

    Test oracle for :func:`fft_singular_values`; O(n^4) memory.
    """
    c_out, c_in, k, _ = kernel.shape
    mat = np.zeros((c_out * n * n, c_in * n * n))
    for ci in range(c_in):
        for p in range(n):
            for q in range(n):
                basis = np.zeros((c_in, n, n))
                basis[ci, p, q] = 1.0
                out = np.zeros((c_out, n, n))
                for a in range(k):
                    for b in range(k):
                        out[:, (p - a) % n, (q - b) % n] += kernel[:, ci, a, b]
                mat[:, ci * n * n + p * n + q] = out.ravel()
    return mat


def materialized_strided_operator(kernel: np.ndarray, n: int, stride: int, padding: int) -> np.ndarray:
    """Dense matrix of the actual zero-padded strided operator (test oracle)."""
    c_out, c_in, k, _ = kernel.shape
    n_out = ops.conv_output_size(n, k, stride, padding)
    mat = np.zeros((c_out * n_out * n_out, c_in * n * n))
    col = 0
    for ci in range(c_in):
        for p in range(n):
            for q in range(n):
                basis = np.zeros((c_in, n, n), dtype=np.float64)
                basis[ci, p, q] = 1.0
                out = ops.conv2d(basis, kernel.astype(np.float64), None, stride, padding)
                mat[:, col] = out.ravel()
                col += 1
    return mat


def _conv_adjoint(y: np.ndarray, kernel: np.ndarray, stride: int, padding: int, n: int) -> np.ndarray:
    """Apply the transpose of the conv operator to a batch of outputs."""
    c_out, c_in, k, _ = kernel.shape
    b, _, ho, wo = y.shape
    gy = y.reshape(b, c_out, ho * wo)
    d_cols = np.matmul(kernel.reshape(c_out, -1).T, gy)
    xp_shape = (b, c_in, n + 2 * padding, n + 2 * padding)
    dxp = ops.col2im(d_cols, xp_shape, k, stride, ho, wo)
    return dxp[:, :, padding : padding + n, padding : padding + n] if padding else dxp


def power_iteration_norm(
    kernel: np.ndarray,
    n: int,
    stride: int,
    padding: int,
    tol: float = 1e-3,
    max_iter: int = 200,
    block: int = 4,
    seed: int = 0,
) -> float:
    """Top singular value of the zero-padded strided conv operator.

    Block subspace iteration on A^T A with Rayleigh-Ritz value estimates;
    the block makes clustered top singular values converge in far fewer
    than ``max_iter`` sweeps.
    """
    c_in = kernel.shape[1]
    if kernel.shape[2] == 1 and stride == 1 and padding == 0:
        # pointwise conv acts as the same matrix at every pixel
        return float(np.linalg.svd(kernel[:, :, 0, 0].astype(np.float64), compute_uv=False)[0])
    dim = c_in * n * n
    block = min(block, dim)
    k64 = kernel.astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([987654321, seed])))
    basis = rng.standard_normal((block, c_in, n, n))
    sigma = 0.0
    for _ in range(max_iter):
        q, _ = np.linalg.qr(basis.reshape(block, dim).T)
        v = np.ascontiguousarray(q.T).reshape(-1, c_in, n, n)
        av = ops.conv2d(v, k64, None, stride, padding)
        atav = _conv_adjoint(av, k64, stride, padding, n)
        ritz = v.reshape(-1, dim) @ atav.reshape(-1, dim).T
        eigs = np.linalg.eigvalsh((ritz + ritz.T) / 2.0)
        new_sigma = float(np.sqrt(max(eigs[-1], 0.0)))
        if new_sigma == 0.0:
            return 0.0
        done = abs(new_sigma - sigma) <= 0.01 * tol * new_sigma
        sigma = new_sigma
        if done:
            break
        basis = atav
    return sigma


def layer_spectral_norm(
    kernel: np.ndarray,
    n: int,
    stride: int,
    padding: int,
    method: str = "power",
    tol: float = 1e-3,
    max_iter: int = 200,
) -> float:
    """Spectral norm of one conv layer under the configured route."""
    if method == "fft":
        return fft_spectral_norm(kernel, n)
    if method == "power":
        return power_iteration_norm(kernel, n, stride, padding, tol, max_iter)
    raise ValueError(f"unknown spectral method {method!r}")
