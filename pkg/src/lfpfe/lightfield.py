"""4-D light-field container, slicing, noise synthesis and the coded-aperture
forward model.

Light fields are stored as ``(m, n, h, w)`` arrays indexed ``(u, v, x, y)``:
``(u, v)`` is the angular position on an ``m x n`` view grid and ``(x, y)``
the pixel inside a sub-aperture image (SAI).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter


class ShapeError(ValueError):
    """Raised when array dimensions do not agree."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LightField4D:
    """Immutable 4-D light field ``L(u, v, x, y)``.

    ``normalized`` is True when every value is known to lie in [0, 1];
    residuals and noisy light fields carry ``normalized=False``.
    """

    data: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 4:
            raise ShapeError(f"light field must be 4-D (m, n, h, w), got shape {a.shape}")
        a = _frozen(a)
        if not np.all(np.isfinite(a)):
            raise ValueError("light field contains non-finite values")
        if self.normalized and a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("normalized light field has values outside [0, 1]")
        object.__setattr__(self, "data", a)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True)
class ApertureCode:
    """``s`` transmittance maps ``a_i(u, v)``, stored with shape ``(s, m, n)``."""

    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.weights)
        if a.ndim != 3:
            raise ShapeError(f"aperture code must be (s, m, n), got {a.shape}")
        a = _frozen(a)
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("aperture transmittances must lie in [0, 1]")
        object.__setattr__(self, "weights", a)

    @property
    def s(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def random(cls, s: int, m: int, n: int, seed: int = 0) -> "ApertureCode":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(0.0, 1.0, size=(s, m, n)))

    @classmethod
    def one_hot(cls, m: int, n: int, views: list[tuple[int, int]] | None = None) -> "ApertureCode":
        """One-hot codes selecting the given views (all views in raster order by default)."""
        if views is None:
            views = [(u, v) for u in range(m) for v in range(n)]
        w = np.zeros((len(views), m, n), dtype=np.float32)
        for i, (u, v) in enumerate(views):
            w[i, u, v] = 1.0
        return cls(w)


@dataclass(frozen=True)
class CodedMeasurements:
    """Stack of ``s`` coded 2-D measurements ``I_i(x, y)``, shape ``(s, h, w)``."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3:
            raise ShapeError(f"coded measurements must be (s, h, w), got {a.shape}")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def s(self) -> int:
        return self.data.shape[0]

    def to_8bit(self, views: int) -> np.ndarray:
        """Divide by the view count and quantize to uint8 (export only)."""
        return np.round(np.clip(self.data / views, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _lf_array(lf) -> np.ndarray:
    a = lf.data if isinstance(lf, LightField4D) else np.asarray(lf)
    if a.ndim != 4:
        raise ShapeError(f"expected a 4-D light field, got shape {a.shape}")
    return a


def _code_array(code) -> np.ndarray:
    return code.weights if isinstance(code, ApertureCode) else np.asarray(code)


def project(lf, code) -> CodedMeasurements:
    """Coded-aperture observation: ``I_i(x,y) = sum_uv a_i(u,v) L(u,v,x,y)``.

    Raw sums are kept (no division by the view count).
    """
    L = _lf_array(lf)
    a = _code_array(code)
    if a.ndim != 3 or a.shape[1:] != L.shape[:2]:
        raise ShapeError(f"code shape {a.shape} does not match angular dims {L.shape[:2]}")
    I = np.tensordot(a.astype(np.float64), L.astype(np.float64), axes=([1, 2], [0, 1]))
    return CodedMeasurements(I)


def _check_index(i: int, size: int, name: str) -> None:
    if not 0 <= i < size:
        raise IndexError(f"{name}={i} out of range [0, {size})")


def extract_sai(lf, u: int, v: int) -> np.ndarray:
    L = _lf_array(lf)
    _check_index(u, L.shape[0], "u")
    _check_index(v, L.shape[1], "v")
    return np.array(L[u, v], copy=True)


def extract_epi_h(lf, u: int, x: int) -> np.ndarray:
    """Horizontal EPI: the ``(v, y)`` plane at fixed ``(u, x)``, shape ``(n, w)``."""
    L = _lf_array(lf)
    _check_index(u, L.shape[0], "u")
    _check_index(x, L.shape[2], "x")
    return np.array(L[u, :, x, :], copy=True)


def extract_epi_v(lf, v: int, y: int) -> np.ndarray:
    """Vertical EPI: the ``(u, x)`` plane at fixed ``(v, y)``, shape ``(m, h)``."""
    L = _lf_array(lf)
    _check_index(v, L.shape[1], "v")
    _check_index(y, L.shape[3], "y")
    return np.array(L[:, v, :, y], copy=True)


def add_noise(lf, spec: NoiseSpec) -> LightField4D:
    """Add i.i.d. N(0, (sigma/255)^2) noise. The result is not clipped."""
    L = _lf_array(lf)
    if spec.sigma == 0:
        return LightField4D(L, normalized=False)
    rng = np.random.default_rng(spec.seed)
    g = rng.standard_normal(L.shape) * (spec.sigma / 255.0)
    return LightField4D((L.astype(np.float64) + g).astype(np.float32), normalized=False)


def angular_average(lf) -> np.ndarray:
    """Per-pixel mean over all views (the ML estimate under i.i.d. Gaussian noise)."""
    L = _lf_array(lf)
    return L.mean(axis=(0, 1), dtype=np.float64).astype(np.float32)


def crop_patch(lf, x0: int, y0: int, ph: int, pw: int) -> LightField4D:
    L = _lf_array(lf)
    h, w = L.shape[2:]
    if x0 < 0 or y0 < 0 or ph <= 0 or pw <= 0 or x0 + ph > h or y0 + pw > w:
        raise IndexError(f"window ({x0},{y0},{ph},{pw}) outside spatial bounds {h}x{w}")
    normalized = lf.normalized if isinstance(lf, LightField4D) else False
    return LightField4D(L[:, :, x0:x0 + ph, y0:y0 + pw], normalized=normalized)


def assemble(views: dict[tuple[int, int], np.ndarray], m: int, n: int, normalized: bool = True) -> LightField4D:
    """Stack SAIs keyed by ``(u, v)`` back into a light field."""
    first = views[(0, 0)]
    out = np.empty((m, n) + first.shape, dtype=np.float32)
    for u in range(m):
        for v in range(n):
            out[u, v] = views[(u, v)]
    return LightField4D(out, normalized=normalized)


@dataclass
class SceneSpec:
    """Parameters of a layered synthetic scene (enough to regenerate it exactly)."""

    seed: int
    m: int = 3
    n: int = 3
    h: int = 64
    w: int = 64
    max_disparity: int = 2
    layers: int = 3
    disparities: list[int] | None = field(default=None)


def _smooth_texture(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    sigma = rng.uniform(1.5, 4.0)
    t = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    lo = rng.uniform(0.05, 0.45)
    hi = rng.uniform(lo + 0.3, 0.95)
    ramp = np.linspace(0.0, 1.0, shape[1])[None, :] * rng.uniform(-0.1, 0.1)
    return np.clip(lo + (hi - lo) * t + ramp, 0.0, 1.0)


def _blob_mask(rng: np.random.Generator, shape: tuple[int, int], pad: int) -> np.ndarray:
    H, W = shape
    xx, yy = np.mgrid[0:H, 0:W]
    cx = rng.uniform(pad + 0.2 * (H - 2 * pad), pad + 0.8 * (H - 2 * pad))
    cy = rng.uniform(pad + 0.2 * (W - 2 * pad), pad + 0.8 * (W - 2 * pad))
    rx = rng.uniform(0.15, 0.35) * (H - 2 * pad)
    ry = rng.uniform(0.15, 0.35) * (W - 2 * pad)
    if rng.random() < 0.5:
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)


def gen_synthetic(spec: SceneSpec | int, m: int = 3, n: int = 3, h: int = 64, w: int = 64,
                  max_disparity: int = 2, layers: int = 3,
                  disparities: list[int] | None = None) -> tuple[LightField4D, list[int]]:
    """Layered scene of smooth random textures with integer per-layer disparities.

    View ``(u, v)`` shows layer ``k`` shifted by ``d_k*(u-uc)`` rows and
    ``d_k*(v-vc)`` columns; layers with larger disparity are nearer and occlude
    the ones behind. Layer 0 is a full-frame background, the others are
    random ellipses or rectangles. Returns the light field and the
    disparities in painting order.
    """
    if isinstance(spec, SceneSpec):
        seed, m, n, h, w = spec.seed, spec.m, spec.n, spec.h, spec.w
        max_disparity, layers, disparities = spec.max_disparity, spec.layers, spec.disparities
    else:
        seed = spec
    if max_disparity < 0:
        raise ValueError("max_disparity must be >= 0")
    rng = np.random.default_rng(seed)
    if disparities is None:
        disparities = sorted(int(d) for d in rng.integers(-max_disparity, max_disparity + 1, size=layers))
    else:
        disparities = [int(d) for d in disparities]
    uc, vc = (m - 1) // 2, (n - 1) // 2
    reach = max(uc, m - 1 - uc, vc, n - 1 - vc)
    pad = max((abs(d) for d in disparities), default=0) * reach
    canvas = (h + 2 * pad, w + 2 * pad)

    textures, masks = [], []
    for k, _ in enumerate(disparities):
        textures.append(_smooth_texture(rng, canvas))
        masks.append(np.ones(canvas, bool) if k == 0 else _blob_mask(rng, canvas, pad))

    out = np.zeros((m, n, h, w), dtype=np.float64)
    for u in range(m):
        for v in range(n):
            img = np.zeros((h, w))
            for tex, mask, d in zip(textures, masks, disparities):
                r0 = pad - d * (u - uc)
                c0 = pad - d * (v - vc)
                sl = (slice(r0, r0 + h), slice(c0, c0 + w))
                img = np.where(mask[sl], tex[sl], img)
            out[u, v] = img
    return LightField4D(out), list(disparities)
