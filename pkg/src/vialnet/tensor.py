"""Dense array kernels: valid convolution, affine maps, ReLU, softmax.

Tensors are plain ``numpy.ndarray`` objects. Images and feature maps use
``H x W x C`` row-major layout; every kernel also accepts a leading batch
axis (``N x H x W x C`` / ``N x n``) so a mini-batch runs through one
matrix product. Forward kernels are pure; backward kernels take the
forward inputs explicitly together with the upstream gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError

DTYPE = np.float32


def as_tensor(values, dtype=DTYPE) -> np.ndarray:
    """Return ``values`` as a contiguous array, rejecting empty dimensions."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim == 0 or 0 in arr.shape:
        raise ShapeError(f"tensor dimensions must all be >= 1, got {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def conv_output_size(size: int, kernel: int, stride: int = 1) -> int:
    """Spatial size of a valid convolution: ``(size - kernel) // stride + 1``."""
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if kernel > size:
        raise ShapeError(f"kernel {kernel} larger than input {size}")
    return (size - kernel) // stride + 1


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _conv_shapes(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None, stride: int):
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be kh x kw x Cin x Cout, got {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    n, h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels but kernels expect {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    return conv_output_size(h, kh, stride), conv_output_size(w, kw, stride)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Unfold ``N x H x W x C`` into rows of ``kh*kw*C`` window samples.

    Row order is (n, out_row, out_col); column order is (ki, kj, c), which
    matches ``kernels.reshape(kh * kw * C, Cout)``.
    """
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)


def conv2d_valid(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid (unpadded) 2-D convolution plus per-channel bias, no activation.

    ``x`` is ``H x W x Cin`` (or batched), ``kernels`` is ``kh x kw x Cin x Cout``.
    Output channels are stacked along the last axis.
    """
    xb, single = _batched(x, 3)
    ho, wo = _conv_shapes(xb, kernels, bias, stride)
    kh, kw, cin, cout = kernels.shape
    cols = im2col(xb, kh, kw, stride)
    out = cols @ kernels.reshape(kh * kw * cin, cout)
    out += bias
    out = out.reshape(xb.shape[0], ho, wo, cout)
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, stride: int, dout: np.ndarray):
    """Gradients of :func:`conv2d_valid` w.r.t. input, kernels and bias."""
    xb, single = _batched(x, 3)
    ho, wo = _conv_shapes(xb, kernels, None, stride)
    kh, kw, cin, cout = kernels.shape
    db_out = dout[None] if single else dout
    expected = (xb.shape[0], ho, wo, cout)
    if db_out.shape != expected:
        raise ShapeError(f"upstream gradient shape {dout.shape} != conv output {expected}")
    d2 = db_out.reshape(-1, cout)
    cols = im2col(xb, kh, kw, stride)
    dk = (cols.T @ d2).reshape(kernels.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ kernels.reshape(kh * kw * cin, cout).T).reshape(xb.shape[0], ho, wo, kh, kw, cin)
    dx = np.zeros_like(xb)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
    return (dx[0] if single else dx), dk, db


def affine(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``weights @ x + bias`` with ``weights`` stored as out x in."""
    if weights.ndim != 2:
        raise ShapeError(f"weights must be out x in, got {weights.shape}")
    m, n = weights.shape
    if x.shape[-1] != n or x.ndim not in (1, 2):
        raise ShapeError(f"input shape {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (m,):
        raise ShapeError(f"bias shape {bias.shape} != ({m},)")
    return x @ weights.T + bias


def affine_backward(x: np.ndarray, weights: np.ndarray, dout: np.ndarray):
    """Gradients of :func:`affine` w.r.t. input, weights and bias."""
    xb, single = _batched(x, 1)
    db_out = dout[None] if single else dout
    if db_out.shape != (xb.shape[0], weights.shape[0]):
        raise ShapeError(f"upstream gradient shape {dout.shape} != affine output")
    dx = db_out @ weights
    dw = db_out.T @ xb
    db = db_out.sum(axis=0)
    return (dx[0] if single else dx), dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    if dout.shape != x.shape:
        raise ShapeError(f"upstream gradient shape {dout.shape} != input {x.shape}")
    return np.where(x > 0, dout, 0).astype(dout.dtype, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max-subtraction."""
    if logits.shape[-1] < 2:
        raise ShapeError("softmax needs at least two logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def flatten(x: np.ndarray) -> np.ndarray:
    """``N x H x W x C`` -> ``N x (H*W*C)`` (or a single map to a vector)."""
    if x.ndim == 3:
        return x.reshape(-1)
    return x.reshape(x.shape[0], -1)


def unflatten(dout: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`flatten` for gradients; ``shape`` is the forward input shape."""
    if dout.size != int(np.prod(shape)):
        raise ShapeError(f"cannot reshape gradient of size {dout.size} to {shape}")
    return dout.reshape(shape)
