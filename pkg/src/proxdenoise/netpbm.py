"""Binary netpbm codec: P5 (grayscale) and P6 (RGB), 8-bit only.

read_image returns float32 arrays of shape (H, W, 1) or (H, W, 3) with
values in [0, 255].  write_image clamps to that range and rounds half away
from zero, so writing an integer-valued image back produces a byte-exact
payload.  The header parser accepts arbitrary whitespace and '#' comment
lines between tokens; exactly one whitespace byte separates the maxval
from the pixel data, as the format requires.
"""

import numpy as np

from .errors import CodecError

__all__ = ["read_image", "write_image"]

_MAGICS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\r\n\v\f"


def _read_token(buf, pos):
    # skip whitespace and comment lines, then take one token
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c in (b"#",):
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WHITESPACE and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CodecError("truncated header")
    return buf[start:pos], pos


def read_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    magic, pos = _read_token(buf, 0)
    if magic not in _MAGICS:
        raise CodecError(f"unsupported magic {magic!r}; only binary P5/P6 are handled")
    channels = _MAGICS[magic]
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise CodecError(f"bad header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise CodecError(f"unsupported maxval {maxval}; only 255 is handled")
    if width < 1 or height < 1:
        raise CodecError("empty image")
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise CodecError("missing whitespace after maxval")
    pos += 1  # exactly one whitespace byte separates header and pixels
    need = width * height * channels
    data = buf[pos : pos + need]
    if len(data) != need:
        raise CodecError("pixel data truncated")
    img = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return img.astype(np.float32)


def write_image(path, img):
    """Write (H, W, 1) as P5 or (H, W, 3) as P6, clamping and rounding."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise CodecError("image must be (H, W, 1) or (H, W, 3)")
    h, w, c = img.shape
    clipped = np.clip(img, 0.0, 255.0)
    quantized = np.floor(clipped + 0.5).astype(np.uint8)  # half away from zero
    magic = b"P5" if c == 1 else b"P6"
    header = magic + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(quantized.tobytes())
