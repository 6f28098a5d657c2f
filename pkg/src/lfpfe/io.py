"""Light-field file formats.

``.lf4``: magic ``LF4D``, little-endian u32 ``M, N, H, W``, then ``M*N*H*W``
little-endian f32 values in ``(u, v, x, y)`` row-major order.

SAI directories hold ``view_{u}_{v}.png`` (or ``.pgm``) grayscale images,
8- or 16-bit, with zero-based ``u, v``.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .lightfield import LightField4D

MAGIC = b"LF4D"
_HEADER = struct.Struct("<4s4I")
_VIEW_RE = re.compile(r"^view_(\d+)_(\d+)\.(png|pgm)$", re.IGNORECASE)


class LFFormatError(ValueError):
    """Malformed light-field file or directory."""


def save_lf(lf, path) -> None:
    path = Path(path)
    data = lf.data if isinstance(lf, LightField4D) else np.asarray(lf)
    m, n, h, w = data.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, m, n, h, w))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_lf4(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise LFFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, m, n, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise LFFormatError(f"{path}: bad magic {magic!r}")
    if 0 in (m, n, h, w):
        raise LFFormatError(f"{path}: inconsistent header dims {(m, n, h, w)}")
    count = m * n * h * w
    payload = len(raw) - _HEADER.size
    if payload < 4 * count:
        raise LFFormatError(f"{path}: truncated payload, expected {4 * count} bytes, got {payload}")
    if payload > 4 * count:
        raise LFFormatError(f"{path}: {payload - 4 * count} trailing bytes after payload")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size).reshape(m, n, h, w).astype(np.float32)


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        a = np.asarray(im)
    if a.ndim != 2:
        raise LFFormatError(f"{path}: expected a single-channel image, got shape {a.shape}")
    if a.dtype == np.uint8:
        return a.astype(np.float32) / 255.0
    if a.dtype in (np.uint16, np.int32, np.int16) or im.mode.startswith("I"):
        return a.astype(np.float32) / 65535.0
    raise LFFormatError(f"{path}: unsupported pixel type {a.dtype}")


def read_sai_dir(path) -> np.ndarray:
    path = Path(path)
    views = {}
    for p in sorted(path.iterdir()):
        mt = _VIEW_RE.match(p.name)
        if mt:
            views[(int(mt.group(1)), int(mt.group(2)))] = _read_image(p)
    if not views:
        raise LFFormatError(f"{path}: no view_u_v images found")
    m = max(u for u, _ in views) + 1
    n = max(v for _, v in views) + 1
    missing = [(u, v) for u in range(m) for v in range(n) if (u, v) not in views]
    if missing:
        raise LFFormatError(f"{path}: missing views {missing[:5]}")
    shapes = {a.shape for a in views.values()}
    if len(shapes) != 1:
        raise LFFormatError(f"{path}: views have differing sizes {sorted(shapes)}")
    out = np.empty((m, n) + shapes.pop(), dtype=np.float32)
    for (u, v), a in views.items():
        out[u, v] = a
    return out


def load_lf(path) -> LightField4D:
    """Load a ``.lf4`` file or an SAI image directory."""
    path = Path(path)
    if path.is_dir():
        data = read_sai_dir(path)
    else:
        data = read_lf4(path)
    normalized = bool(data.size) and data.min() >= 0.0 and data.max() <= 1.0
    return LightField4D(data, normalized=normalized)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img)).save(path)


def save_sai_dir(lf, path, bits: int = 8) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = lf.data if isinstance(lf, LightField4D) else np.asarray(lf)
    for u in range(data.shape[0]):
        for v in range(data.shape[1]):
            img = np.clip(data[u, v], 0.0, 1.0)
            if bits == 16:
                Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path / f"view_{u}_{v}.png")
            else:
                save_png(img, path / f"view_{u}_{v}.png")
