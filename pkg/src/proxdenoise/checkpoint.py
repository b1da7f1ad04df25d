"""Binary checkpoint format for trained networks.

Layout (all integers and floats little-endian):

    magic   4 bytes  b"PXDN"
    version u32      format version, currently 1
    variant u8       0 = local, 1 = nonlocal
    channels u8
    stages  u8
    dtype   u8       0 = float32 (reserved: 1 = float64)
    filters u16, kh u16, kw u16
    rbf_size u16, group_size u16, window_h u16, window_w u16
    rbf_limit f32, rbf_precision f32
    then per stage, as flat little-endian float32 in C order:
        raw (filters * kh*kw*channels), scale (filters),
        coeffs (filters * rbf_size), alpha (1),
        group (group_size, nonlocal only)

Parameters are stored exactly as trained (float32), so a save/load/save
round trip is byte-identical.
"""

import struct

import numpy as np

from .conv import FilterBank
from .errors import CodecError, VariantMismatch, VersionMismatch
from .grouping import GroupWeights
from .network import Architecture, CompositeLayer, NetworkParams
from .rbf import RBFMixture, make_centers

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"PXDN"
VERSION = 1
_VARIANTS = {"local": 0, "nonlocal": 1}
_VARIANT_NAMES = {v: k for k, v in _VARIANTS.items()}
_HEAD = struct.Struct("<4sI4B7H2f")


def _f32_bytes(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(path, params: NetworkParams):
    arch = params.arch
    head = _HEAD.pack(
        MAGIC,
        VERSION,
        _VARIANTS[arch.variant],
        arch.channels,
        arch.stages,
        0,
        arch.filters,
        arch.kernel[0],
        arch.kernel[1],
        arch.rbf_size,
        arch.group_size,
        arch.window[0],
        arch.window[1],
        arch.rbf_limit,
        arch.rbf_precision,
    )
    with open(path, "wb") as f:
        f.write(head)
        for layer in params.layers:
            f.write(_f32_bytes(layer.bank.raw))
            f.write(_f32_bytes(layer.bank.scale))
            f.write(_f32_bytes(layer.rbf.coeffs))
            f.write(_f32_bytes(layer.alpha))
            if arch.variant == "nonlocal":
                f.write(_f32_bytes(layer.group.raw))


def load_checkpoint(path, expect_variant=None) -> NetworkParams:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEAD.size:
        raise CodecError("checkpoint truncated in header")
    (magic, version, variant_id, channels, stages, dtype_id, filters, kh, kw,
     rbf_size, group_size, win_h, win_w, rbf_limit, rbf_precision) = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise CodecError("not a checkpoint file")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    if dtype_id != 0:
        raise VersionMismatch("only float32 checkpoints are supported")
    if variant_id not in _VARIANT_NAMES:
        raise CodecError(f"unknown variant id {variant_id}")
    variant = _VARIANT_NAMES[variant_id]
    if expect_variant is not None and variant != expect_variant:
        raise VariantMismatch(f"checkpoint holds a {variant} model, expected {expect_variant}")
    arch = Architecture(
        variant,
        channels,
        stages,
        filters,
        (kh, kw),
        rbf_size=rbf_size,
        rbf_limit=rbf_limit,
        rbf_precision=rbf_precision,
        group_size=group_size,
        window=(win_h, win_w),
    )
    pos = _HEAD.size

    def take(count):
        nonlocal pos
        nbytes = 4 * count
        chunk = buf[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise CodecError("checkpoint truncated in parameters")
        pos += nbytes
        return np.frombuffer(chunk, dtype="<f4").astype(np.float32, copy=True)

    centers = make_centers(rbf_size, -arch.rbf_limit, arch.rbf_limit).astype(np.float32)
    layers = []
    for _ in range(stages):
        raw = take(filters * kh * kw * channels).reshape(filters, -1)
        scale = take(filters)
        coeffs = take(filters * rbf_size).reshape(filters, rbf_size)
        alpha = take(1).reshape(())
        group = GroupWeights(take(group_size)) if variant == "nonlocal" else None
        bank = FilterBank(raw, scale, kh, kw, channels)
        mix = RBFMixture(centers, arch.rbf_precision, coeffs)
        layers.append(CompositeLayer(bank, mix, alpha, group))
    if pos != len(buf):
        raise CodecError("checkpoint has trailing bytes")
    return NetworkParams(arch, layers)
