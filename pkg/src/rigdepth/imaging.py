"""Image, depth, and mask grids plus sampling, flipping, and file formats.

Pixel (row v, column u) has its center at continuous coordinate (u, v); the
valid sampling domain is [0, W-1] x [0, H-1].  Horizontal flip maps column
u to (W-1) - u, so flipping is an exact permutation of pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_grid(data: np.ndarray, ndim: int, name: str) -> np.ndarray:
    a = np.asarray(data)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Image:
    """RGB grid with values in [0, 1], shape (H, W, 3), row-major."""

    data: np.ndarray

    def __post_init__(self):
        a = _check_grid(self.data, 3, "image").astype(np.float64, copy=False)
        if a.shape[2] != 3:
            raise ValueError(f"image must have 3 channels, got {a.shape[2]}")
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters with a companion validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = _check_grid(self.values, 2, "depth").astype(np.float64, copy=False)
        m = _check_grid(self.valid, 2, "depth mask").astype(bool, copy=False)
        if v.shape != m.shape:
            raise ValueError("depth and validity mask shapes differ")
        if not np.all(np.isfinite(v[m])) or np.any(v[m] <= 0.0):
            raise ValueError("valid depth entries must be finite and strictly positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", m)

    @staticmethod
    def full(values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return DepthMap(values, np.ones(values.shape, dtype=bool))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Mask:
    """Boolean per-pixel grid qualifying an image or depth map."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _check_grid(self.data, 2, "mask").astype(bool, copy=False))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        return int(self.data.sum())


def bilinear_sample(img: Image, u: float, v: float) -> tuple[np.ndarray, bool]:
    """Sample an image at continuous (u, v) with bilinear interpolation.

    Returns (color, valid); valid is False outside [0, W-1] x [0, H-1] and
    the color is then all zeros.
    """
    h, w = img.height, img.width
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        return np.zeros(3), False
    u0 = min(int(np.floor(u)), w - 2) if w > 1 else 0
    v0 = min(int(np.floor(v)), h - 2) if h > 1 else 0
    fu = u - u0
    fv = v - v0
    d = img.data
    top = (1.0 - fu) * d[v0, u0] + fu * d[v0, u0 + 1]
    bot = (1.0 - fu) * d[v0 + 1, u0] + fu * d[v0 + 1, u0 + 1]
    return (1.0 - fv) * top + fv * bot, True


def hflip_image(img: Image) -> Image:
    return Image(img.data[:, ::-1, :].copy())


def hflip_depth(d: DepthMap) -> DepthMap:
    return DepthMap(d.values[:, ::-1].copy(), d.valid[:, ::-1].copy())


def hflip_mask(m: Mask) -> Mask:
    return Mask(m.data[:, ::-1].copy())


# ---------------------------------------------------------------------------
# File formats.  PPM (P6, 8 bit) for quantized viewing copies; PFM for
# lossless float grids ("Pf" single channel, "PF" color), little-endian
# signalled by a negative scale header, rows stored bottom to top.
# ---------------------------------------------------------------------------

def write_ppm(path, img: Image) -> None:
    q = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        f.write(q.tobytes())


def read_ppm(path) -> Image:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM (P6) file")
        dims = []
        while len(dims) < 3:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated PPM header")
            if line.startswith(b"#"):
                continue
            dims.extend(int(x) for x in line.split())
        w, h, maxval = dims
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 PPMs are supported")
        raw = f.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise ValueError(f"{path}: truncated PPM payload")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0
    return Image(data)


def write_pfm(path, array: np.ndarray) -> None:
    """Write a float32 grid, (H, W) as 'Pf' or (H, W, 3) as 'PF'."""
    a = np.asarray(array, dtype=np.float32)
    if a.ndim == 2:
        magic = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM grids must be (H, W) or (H, W, 3), got {a.shape}")
    h, w = a.shape[0], a.shape[1]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file")
        channels = 3 if magic == b"PF" else 1
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
    endian = "<" if scale < 0 else ">"
    a = np.frombuffer(raw, dtype=endian + "f4")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return a.reshape(shape)[::-1].copy()


def write_depth_pfm(path, d: DepthMap) -> None:
    """Store depth as single-channel PFM; invalid pixels are written as 0."""
    vals = np.where(d.valid, d.values, 0.0)
    write_pfm(path, vals.astype(np.float32))


def read_depth_pfm(path) -> DepthMap:
    a = read_pfm(path)
    if a.ndim != 2:
        raise ValueError(f"{path}: depth PFM must be single channel")
    vals = a.astype(np.float64)
    valid = vals > 0.0
    return DepthMap(np.where(valid, vals, 0.0), valid)
