"""Normalized filter banks and the convolution operator pair.

Images are float arrays of shape (H, W, C); feature maps are (H', W', F).
The convolution is a correlation (no kernel flip) with stride 1, in one of
two boundary modes:

  "same"   symmetric padding, output grid equals the image grid
  "valid"  no padding, output grid is the valid patch grid

Each mode's adjoint is the exact transpose of its forward map, so the
dot-product identity <conv(x), z> == <x, conv_adjoint(z)> holds to
round-off.  Filters are stored raw and reparametrized on use: the
materialized kernel is the zero-mean part of the raw weights rescaled to
norm |s|, which keeps every kernel DC-free regardless of what training
does to the raw values.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadArgument, DegenerateFilter, ShapeMismatch

__all__ = [
    "FilterBank",
    "materialize",
    "weight_backward",
    "conv_forward",
    "conv_adjoint",
    "conv_param_backward",
]


@dataclass
class FilterBank:
    """A bank of trainable filters in raw (un-normalized) form.

    raw    (F, kh*kw*C) raw weight vectors, one row per filter
    scale  (F,) signed target norms, one per filter
    kh, kw, in_channels  kernel geometry; raw row length must equal kh*kw*C
    """

    raw: np.ndarray
    scale: np.ndarray
    kh: int
    kw: int
    in_channels: int

    def __post_init__(self):
        self.raw = np.asarray(self.raw)
        self.scale = np.asarray(self.scale)
        if self.raw.ndim != 2 or self.scale.ndim != 1:
            raise ShapeMismatch("raw must be (F, L), scale must be (F,)")
        if self.raw.shape[0] != self.scale.shape[0]:
            raise ShapeMismatch("raw and scale disagree on filter count")
        if self.raw.shape[1] != self.kh * self.kw * self.in_channels:
            raise ShapeMismatch("raw row length does not match kernel geometry")
        if min(self.kh, self.kw, self.in_channels) < 1:
            raise BadArgument("kernel geometry must be positive")

    @property
    def filters(self) -> int:
        return self.raw.shape[0]

    @classmethod
    def random(cls, rng, filters, kh, kw, in_channels, scale=1.0, dtype=np.float32):
        raw = rng.standard_normal((filters, kh * kw * in_channels)).astype(dtype)
        s = np.full(filters, scale, dtype=dtype)
        return cls(raw, s, kh, kw, in_channels)


def _centered(bank):
    c = bank.raw - bank.raw.mean(axis=1, keepdims=True)
    n = np.linalg.norm(c, axis=1)
    if np.any(n == 0):
        raise DegenerateFilter("constant raw filter has no zero-mean component")
    return c, n


def materialize(bank: FilterBank) -> np.ndarray:
    """Return normalized kernels as a (F, kh, kw, C) tensor.

    Each kernel is s * (v - mean(v)) / ||v - mean(v)||: exactly zero mean,
    norm |s|.
    """
    c, n = _centered(bank)
    w = (bank.scale / n)[:, None] * c
    return w.reshape(bank.filters, bank.kh, bank.kw, bank.in_channels)


def weight_backward(bank: FilterBank, grad_kernels: np.ndarray):
    """Pull a gradient w.r.t. materialized kernels back to (raw, scale).

    For one filter with centered direction c = v - mean(v), n = ||c||,
    w = s*c/n:

      grad_s = <c/n, g>
      grad_v = (s/n) * center(g - c * <c, g>/n^2)

    i.e. project out the radial component, then re-center.  The map kills
    the all-ones and radial directions, so grad_v always sums to zero.
    """
    F = bank.filters
    g = np.asarray(grad_kernels).reshape(F, -1)
    if g.shape != bank.raw.shape:
        raise ShapeMismatch("kernel gradient shape does not match bank")
    c, n = _centered(bank)
    unit = c / n[:, None]
    grad_scale = np.einsum("fl,fl->f", unit, g)
    t = g - unit * grad_scale[:, None]
    t -= t.mean(axis=1, keepdims=True)
    grad_raw = (bank.scale / n)[:, None] * t
    return grad_raw, grad_scale


def _pad_widths(kh, kw):
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


def _check_image(x, bank, mode):
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeMismatch("image must be (H, W, C)")
    if x.shape[2] != bank.in_channels:
        raise ShapeMismatch("image channel count does not match bank")
    if mode not in ("same", "valid"):
        raise BadArgument(f"unknown boundary mode {mode!r}")
    if x.shape[0] < bank.kh or x.shape[1] < bank.kw:
        raise BadArgument("image smaller than kernel support")
    return x


def _im2col(x, kh, kw, mode):
    # Rows are flattened (kh, kw, C) windows in C order; this layout must
    # match the kernel flattening used everywhere else in this module.
    if mode == "same":
        pt, pb, pl, pr = _pad_widths(kh, kw)
        x = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), mode="symmetric")
    view = sliding_window_view(x, (kh, kw, x.shape[2]))[:, :, 0]
    ho, wo = view.shape[:2]
    return view.reshape(ho * wo, -1), ho, wo


def conv_forward(x, bank: FilterBank, mode="same"):
    """Correlate an image with the materialized bank; output (H', W', F)."""
    x = _check_image(x, bank, mode)
    kmat = materialize(bank).reshape(bank.filters, -1)
    cols, ho, wo = _im2col(x, bank.kh, bank.kw, mode)
    return (cols @ kmat.T).reshape(ho, wo, bank.filters)


def _fold_axis(buf, size, pad_lo):
    # Adjoint of symmetric padding along axis 0: every padded row adds back
    # into the interior row it was copied from.
    padded = buf.shape[0]
    idx = np.arange(padded) - pad_lo
    idx = np.where(idx < 0, -1 - idx, idx)
    idx = np.where(idx >= size, 2 * size - 1 - idx, idx)
    out = np.zeros((size,) + buf.shape[1:], dtype=buf.dtype)
    np.add.at(out, idx, buf)
    return out


def conv_adjoint(z, bank: FilterBank, mode="same"):
    """Exact transpose of conv_forward; maps (H', W', F) back to (H, W, C)."""
    z = np.asarray(z)
    if z.ndim != 3 or z.shape[2] != bank.filters:
        raise ShapeMismatch("feature map must be (H', W', F)")
    if mode not in ("same", "valid"):
        raise BadArgument(f"unknown boundary mode {mode!r}")
    kh, kw, C = bank.kh, bank.kw, bank.in_channels
    ho, wo = z.shape[:2]
    kmat = materialize(bank).reshape(bank.filters, -1)
    zw = (z.reshape(-1, bank.filters) @ kmat).reshape(ho, wo, kh, kw, C)
    buf = np.zeros((ho + kh - 1, wo + kw - 1, C), dtype=zw.dtype)
    for di in range(kh):
        for dj in range(kw):
            buf[di : di + ho, dj : dj + wo] += zw[:, :, di, dj]
    if mode == "valid":
        return buf
    pt, _, pl, _ = _pad_widths(kh, kw)
    buf = _fold_axis(buf, ho, pt)
    buf = _fold_axis(buf.transpose(1, 0, 2), wo, pl).transpose(1, 0, 2)
    return buf


def conv_param_backward(x, z, bank: FilterBank, mode="same"):
    """Gradient of <conv_forward(x), z> w.r.t. the materialized kernels.

    Also serves the adjoint application h = conv_adjoint(w): by symmetry of
    the bilinear form, that usage is conv_param_backward(grad_h, w).
    Returns a (F, kh, kw, C) tensor; feed it to weight_backward to reach
    the raw parameters.
    """
    x = _check_image(x, bank, mode)
    z = np.asarray(z)
    cols, ho, wo = _im2col(x, bank.kh, bank.kw, mode)
    if z.shape != (ho, wo, bank.filters):
        raise ShapeMismatch("feature gradient shape does not match forward output")
    g = z.reshape(-1, bank.filters).T @ cols
    return g.reshape(bank.filters, bank.kh, bank.kw, bank.in_channels)
