"""Pointwise nonlinearities and the structured tensor operators used by the
dynamics and learning rules.

Image tensors are laid out ``(batch, channels, height, width)``; the unbatched
form ``(channels, height, width)`` is accepted wherever a single image makes
sense and the result is returned unbatched as well.  Convolution kernels are
stored ``(c_out, c_in, F, F)`` so that ``w[c]`` is the filter producing output
channel ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, IndexCorruptionError, InvalidParameterError

__all__ = [
    "hardsigmoid",
    "hardsigmoid_deriv",
    "heaviside_half",
    "narrowed_hardsigmoid",
    "pseudo_derivative",
    "conv2d",
    "transpose_conv2d",
    "conv_weight_grad",
    "conv_output_size",
    "PoolIndices",
    "maxpool",
    "unpool",
    "gather_pooled",
    "flatten",
    "unflatten",
    "gdot",
]


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------


def hardsigmoid(s):
    return np.clip(s, 0.0, 1.0)


def hardsigmoid_deriv(s):
    """1 on the closed interval [0, 1], 0 elsewhere.

    States projected onto the box sit exactly on its faces; a zero derivative
    there would freeze them, so the endpoints count as inside.
    """
    s = np.asarray(s)
    return ((s >= 0.0) & (s <= 1.0)).astype(s.dtype if s.dtype.kind == "f" else np.float64)


def heaviside_half(s):
    """Step at 1/2 with H(0) = 1, i.e. returns 1 where ``s >= 0.5``."""
    s = np.asarray(s)
    return (s >= 0.5).astype(s.dtype if s.dtype.kind == "f" else np.float64)


def narrowed_hardsigmoid(s, sigma):
    """Hardsigmoid squeezed onto ``[1/2 - sigma, 1/2 + sigma]``."""
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    return np.clip((np.asarray(s) - 0.5) / (2.0 * sigma) + 0.5, 0.0, 1.0)


def pseudo_derivative(s, sigma):
    """Surrogate derivative of the step: ``1/(2 sigma)`` if ``|s - 1/2| <= sigma``."""
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    s = np.asarray(s)
    dtype = s.dtype if s.dtype.kind == "f" else np.float64
    return np.where(np.abs(s - 0.5) <= sigma, 1.0 / (2.0 * sigma), 0.0).astype(dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _batched(x, ndim=4):
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise DimensionError(f"expected a {ndim - 1}-d or {ndim}-d tensor, got shape {x.shape}")
    return x, False


def _check_kernel(w):
    w = np.asarray(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"kernel must be (c_out, c_in, F, F), got {w.shape}")
    return w


def conv_output_size(size, kernel, padding):
    out = size + 2 * padding - kernel + 1
    if out < 1:
        raise DimensionError(f"kernel {kernel} with padding {padding} does not fit extent {size}")
    return out


def conv2d(w, x, bias=None, padding=0):
    """Stride-1 cross-correlation ``y[c,h,s] = B_c + sum_{i,j,k} w[c,i,j,k] x[i,j+h,k+s]``.

    ``x`` is zero-padded by ``padding`` on each spatial side first.
    """
    w = _check_kernel(w)
    x, squeeze = _batched(x)
    c_out, c_in, f, _ = w.shape
    if x.shape[1] != c_in:
        raise DimensionError(f"kernel expects {c_in} input channels, input has {x.shape[1]}")
    conv_output_size(x.shape[2], f, padding)
    conv_output_size(x.shape[3], f, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (f, f), axis=(2, 3))  # (B, Ci, Ho, Wo, F, F)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, Co)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"bias must have shape ({c_out},), got {bias.shape}")
        y = y + bias[None, :, None, None]
    return y[0] if squeeze else y


def transpose_conv2d(w, y, padding=0):
    """Adjoint of :func:`conv2d` (bias excluded) with respect to its input.

    Satisfies ``gdot(conv2d(w, x, padding=p), y) == gdot(x, transpose_conv2d(w, y, p))``.
    """
    w = _check_kernel(w)
    y, squeeze = _batched(y)
    c_out, c_in, f, _ = w.shape
    if y.shape[1] != c_out:
        raise DimensionError(f"kernel produces {c_out} channels, tensor has {y.shape[1]}")
    h_in = y.shape[2] + f - 1 - 2 * padding
    w_in = y.shape[3] + f - 1 - 2 * padding
    if h_in < 1 or w_in < 1:
        raise DimensionError(f"no input shape maps to {y.shape[2:]} with kernel {f}, padding {padding}")
    yp = np.pad(y, ((0, 0), (0, 0), (f - 1, f - 1), (f - 1, f - 1)))
    win = sliding_window_view(yp, (f, f), axis=(2, 3))  # (B, Co, Hp, Wp, F, F)
    xp = np.tensordot(win, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))  # (B, Hp, Wp, Ci)
    xp = xp.transpose(0, 3, 1, 2)
    if padding:
        xp = xp[:, :, padding:-padding, padding:-padding]
    x = np.ascontiguousarray(xp)
    return x[0] if squeeze else x


def conv_weight_grad(y, x, kernel, padding=0):
    """Batch-summed ``dW[c,i,j,k] = sum_{b,h,s} y[b,c,h,s] x_pad[b,i,j+h,k+s]``.

    This is the derivative of ``gdot(y, conv2d(w, x))`` with respect to ``w``.
    """
    y, _ = _batched(y)
    x, _ = _batched(x)
    if y.shape[0] != x.shape[0]:
        raise DimensionError(f"batch mismatch {y.shape[0]} vs {x.shape[0]}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))  # (B, Ci, Ho, Wo, F, F)
    if win.shape[2:4] != y.shape[2:4]:
        raise DimensionError(f"output extent {y.shape[2:]} does not match input/kernel {win.shape[2:4]}")
    return np.tensordot(y, win, axes=([0, 2, 3], [0, 2, 3]))  # (Co, Ci, F, F)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolIndices:
    """Argmax position of every pooled cell inside its ``size x size`` window.

    ``flat`` holds ``i * size + j`` so that ``(i, j)`` are row/column offsets.
    """

    flat: np.ndarray
    size: int

    @property
    def i(self):
        return self.flat // self.size

    @property
    def j(self):
        return self.flat % self.size

    @property
    def shape(self):
        return self.flat.shape


def _windows(x, size):
    b, c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"pool size {size} does not divide spatial extent {(h, w)}")
    r = x.reshape(b, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    return r.reshape(b, c, h // size, w // size, size * size)


def maxpool(x, size):
    """Non-overlapping max-pool (stride = window = ``size``).

    Ties resolve to the first maximum in row-major window order.
    """
    if size < 1:
        raise InvalidParameterError(f"pool size must be >= 1, got {size}")
    x, squeeze = _batched(x)
    win = _windows(x, size)
    flat = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, flat[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], PoolIndices(flat[0], size)
    return out, PoolIndices(flat, size)


def unpool(y, ind, size=None):
    """Scatter ``y`` back to the recorded argmax sites, zeros elsewhere."""
    size = ind.size if size is None else size
    if size != ind.size:
        raise DimensionError(f"pool size {size} differs from the indices' size {ind.size}")
    y, squeeze = _batched(y)
    flat = ind.flat[None] if squeeze else ind.flat
    if flat.shape != y.shape:
        raise DimensionError(f"indices shape {ind.shape} does not match tensor {y.shape}")
    if flat.size and (flat.min() < 0 or flat.max() >= size * size):
        raise IndexCorruptionError(f"pool index outside [0, {size * size - 1}]")
    b, c, ho, wo = y.shape
    out = np.zeros((b, c, ho, wo, size * size), dtype=y.dtype)
    np.put_along_axis(out, flat[..., None], y[..., None], axis=-1)
    out = out.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * size, wo * size)
    return out[0] if squeeze else out


def gather_pooled(x, ind):
    """Read ``x`` at the pool indices (a max-pool with the index pattern frozen)."""
    x, squeeze = _batched(x)
    flat = ind.flat[None] if squeeze else ind.flat
    win = _windows(x, ind.size)
    if win.shape[:4] != flat.shape:
        raise DimensionError(f"indices shape {flat.shape} does not match pooled shape {win.shape[:4]}")
    out = np.take_along_axis(win, flat[..., None], axis=-1)[..., 0]
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# reshaping / products
# ---------------------------------------------------------------------------


def flatten(x):
    """``(C, H, W) -> (1, CHW)``; batched ``(B, C, H, W) -> (B, CHW)``.

    Element order is row-major inside each channel, channels outermost.
    """
    x = np.asarray(x)
    if x.ndim == 3:
        return x.reshape(1, -1)
    if x.ndim == 4:
        return x.reshape(x.shape[0], -1)
    raise DimensionError(f"flatten expects a 3-d or 4-d tensor, got {x.shape}")


def unflatten(x, shape):
    """Inverse of :func:`flatten` for per-sample ``shape = (C, H, W)``."""
    x = np.asarray(x)
    n = int(np.prod(shape))
    if x.ndim != 2 or x.shape[1] != n:
        raise DimensionError(f"cannot unflatten {x.shape} into (-1, {tuple(shape)})")
    return x.reshape((x.shape[0],) + tuple(shape))


def gdot(a, b):
    """Sum of elementwise products of two same-shaped tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"gdot shape mismatch {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))
