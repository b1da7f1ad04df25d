"""Block matching and collaborative group filtering.

Sites live on the valid patch grid of an image: for patches of size
(ph, pw) on an (H, W, C) image the grid is (H-ph+1) x (W-pw+1), indexed in
row-major order.  block_match builds, for every site, the indices of the
group_size most similar patches (squared l2 distance over raw pixels, all
channels) inside a window centered on the site.  The table is computed
once per noisy input and shared by every layer of the cascade.

group_filter mixes each site's feature vector from its group using convex
weights g = u / sum(u); the raw weights u are the trainable quantity and
the gradient through the normalization is the exact Jacobian

    grad_u = (grad_g - <g, grad_g>) / sum(u).

The filter and its exact adjoint are both linear in the features, so the
pair satisfies the dot-product identity to round-off.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conv import FilterBank, conv_adjoint, conv_forward
from .errors import BadArgument, DegenerateWeights, ShapeMismatch

__all__ = [
    "GroupIndexTable",
    "GroupWeights",
    "block_match",
    "group_filter",
    "group_filter_adjoint",
    "group_bilinear",
    "raw_weight_backward",
    "group_weight_backward",
    "nonlocal_forward",
    "nonlocal_adjoint",
]


@dataclass
class GroupIndexTable:
    """Per-site neighbor indices on the valid patch grid.

    indices  (K, P) int64; row k lists the group for site k, row-major grid
             order, with indices[k, 0] == k (the site itself)
    grid_h, grid_w  valid patch grid shape, K = grid_h * grid_w
    """

    indices: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices)
        if self.indices.ndim != 2:
            raise ShapeMismatch("indices must be (K, P)")
        if self.indices.shape[0] != self.grid_h * self.grid_w:
            raise ShapeMismatch("index row count does not match grid")

    @property
    def sites(self) -> int:
        return self.indices.shape[0]

    @property
    def group_size(self) -> int:
        return self.indices.shape[1]


@dataclass
class GroupWeights:
    """Trainable raw group mixing weights u; effective weights are u/sum(u)."""

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw)
        if self.raw.ndim != 1:
            raise ShapeMismatch("group weights must be a vector")

    @classmethod
    def default_init(cls, group_size, dtype=np.float32):
        # 1, 1/2, ..., 1/P: the reference patch dominates, far matches fade
        return cls((1.0 / np.arange(1, group_size + 1)).astype(dtype))

    def normalizer(self) -> float:
        nu = float(self.raw.sum())
        if nu == 0.0:
            raise DegenerateWeights("group weights sum to zero")
        return nu

    def effective(self) -> np.ndarray:
        return self.raw / self.normalizer()


def block_match(y, patch_hw, window_hw, group_size) -> GroupIndexTable:
    """Exhaustive windowed nearest-patch search on raw pixels.

    Distances are squared l2 over (ph, pw, C) patches in float64.  Each
    group starts with the site itself, followed by the group_size - 1
    closest other sites in the window; distance ties break toward the
    smaller row-major site index.
    """
    y = np.asarray(y)
    if y.ndim != 3:
        raise ShapeMismatch("image must be (H, W, C)")
    ph, pw = patch_hw
    wh, ww = window_hw
    if wh % 2 == 0 or ww % 2 == 0:
        raise BadArgument("window sides must be odd")
    if ph > y.shape[0] or pw > y.shape[1]:
        raise BadArgument("patch does not fit in image")
    gh = y.shape[0] - ph + 1
    gw = y.shape[1] - pw + 1
    rh, rw = wh // 2, ww // 2
    if group_size < 1 or group_size > min(gh, rh + 1) * min(gw, rw + 1):
        raise BadArgument("group size exceeds the worst-case window population")

    patches = sliding_window_view(np.ascontiguousarray(y, dtype=np.float64), (ph, pw, y.shape[2]))
    patches = patches[:, :, 0].reshape(gh, gw, -1)
    site = np.arange(gh * gw).reshape(gh, gw)
    indices = np.empty((gh * gw, group_size), dtype=np.int64)
    for i in range(gh):
        ilo, ihi = max(0, i - rh), min(gh, i + rh + 1)
        for j in range(gw):
            jlo, jhi = max(0, j - rw), min(gw, j + rw + 1)
            cand = patches[ilo:ihi, jlo:jhi].reshape(-1, patches.shape[2])
            ids = site[ilo:ihi, jlo:jhi].ravel()
            ref = site[i, j]
            d = np.sum((cand - patches[i, j]) ** 2, axis=1)
            keep = ids != ref
            d, ids = d[keep], ids[keep]
            order = np.lexsort((ids, d))[: group_size - 1]
            indices[ref, 0] = ref
            indices[ref, 1:] = ids[order]
    return GroupIndexTable(indices, gh, gw)


def _check_feature_sites(features, table):
    features = np.asarray(features)
    if features.ndim != 3:
        raise ShapeMismatch("features must be (grid_h, grid_w, F)")
    if features.shape[:2] != (table.grid_h, table.grid_w):
        raise ShapeMismatch("feature grid does not match group table")
    return features


def group_filter(features, table: GroupIndexTable, weights: GroupWeights):
    """out[k] = sum_p g_p * features[indices[k, p]]."""
    features = _check_feature_sites(features, table)
    g = weights.effective().astype(features.dtype, copy=False)
    if g.size != table.group_size:
        raise ShapeMismatch("weight count does not match group size")
    flat = features.reshape(table.sites, -1)
    out = np.zeros_like(flat)
    for p in range(table.group_size):
        out += g[p] * flat[table.indices[:, p]]
    return out.reshape(features.shape)


def group_filter_adjoint(z, table: GroupIndexTable, weights: GroupWeights):
    """Exact transpose: scatter-add each site's value into its group members."""
    z = _check_feature_sites(z, table)
    g = weights.effective().astype(z.dtype, copy=False)
    if g.size != table.group_size:
        raise ShapeMismatch("weight count does not match group size")
    flat = z.reshape(table.sites, -1)
    out = np.zeros_like(flat)
    for p in range(table.group_size):
        np.add.at(out, table.indices[:, p], g[p] * flat)
    return out.reshape(z.shape)


def group_bilinear(a, b, table: GroupIndexTable):
    """bil[p] = sum_k <a[indices[k, p]], b[k]>; the effective-weight gradient
    of <group_filter(a; g), b> and, with arguments swapped, of the adjoint."""
    a = _check_feature_sites(a, table)
    b = _check_feature_sites(b, table)
    aflat = a.reshape(table.sites, -1)
    bflat = b.reshape(table.sites, -1)
    out = np.empty(table.group_size, dtype=np.result_type(a, b))
    for p in range(table.group_size):
        out[p] = np.vdot(aflat[table.indices[:, p]], bflat)
    return out


def raw_weight_backward(grad_effective, weights: GroupWeights):
    """Pull a gradient in the effective weights g = u/sum(u) back to u."""
    nu = weights.normalizer()
    g = weights.effective()
    grad_effective = np.asarray(grad_effective, dtype=g.dtype)
    return (grad_effective - float(np.vdot(g, grad_effective))) / nu


def group_weight_backward(features, table, weights, grad_out):
    """Gradient of <group_filter(features), grad_out> w.r.t. the raw weights."""
    return raw_weight_backward(group_bilinear(features, grad_out, table), weights)


def nonlocal_forward(x, bank: FilterBank, table, weights):
    """Patch transform (valid convolution) followed by group filtering."""
    return group_filter(conv_forward(x, bank, mode="valid"), table, weights)


def nonlocal_adjoint(z, bank: FilterBank, table, weights):
    """Exact transpose of nonlocal_forward."""
    return conv_adjoint(group_filter_adjoint(z, table, weights), bank, mode="valid")
