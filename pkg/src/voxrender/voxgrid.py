"""Voxel grids, world-to-camera rigid transforms and the VXG1 grid file.

A grid is a float array of shape ``(H, W, D, C)``.  Index axes map to the
camera frame as::

        y (up)                    h -> -y   (row 0 is the top of the image)
        |                         w -> +x
        |____ x                   d -> -z   (depth index grows away from camera)
       /
      z (towards the viewer)      camera looks along -z, i.e. along +d

Pose angles rotate the object about its grid centre.  Azimuth turns it
counterclockwise about +y (seen from +y).  Elevation then tilts it about the
horizontal image axis; in a world frame where the unrotated camera looks
along -x this is the rotation about z.  ``scale = R_REF / radius`` with
``R_REF`` the middle of the [3, 6.3] camera-radius range.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffengine as de
from .diffengine import Tensor

R_MIN, R_MAX = 3.0, 6.3
R_REF = 0.5 * (R_MIN + R_MAX)
MAGIC = b"VXG1"
_MAX_ELEMS = 1 << 31

# (h, w, d) index offsets -> physical (x, y, z)
_IDX_TO_PHYS = np.array([[0.0, 1.0, 0.0],
                         [-1.0, 0.0, 0.0],
                         [0.0, 0.0, -1.0]])


class GridFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    azimuth: float = 0.0
    elevation: float = 0.0
    radius: float = R_REF

    def __post_init__(self):
        vals = (self.azimuth, self.elevation, self.radius)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose {vals}")
        if self.radius <= 0:
            raise ValueError("pose radius must be > 0")

    @property
    def scale(self) -> float:
        return R_REF / self.radius


@dataclass(frozen=True)
class TransformSpec:
    rotation: np.ndarray          # 3x3, acts on (h, w, d) offsets
    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    output_dims: tuple[int, int, int] | None = None


def as_grid(grid) -> np.ndarray:
    g = np.asarray(grid)
    if g.ndim == 3:
        g = g[..., None]
    if g.ndim != 4 or min(g.shape) < 1:
        raise ValueError(f"voxel grid must be (H, W, D, C) with dims >= 1, got {g.shape}")
    return g


# --- rotations ---------------------------------------------------------------

def _ry(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def physical_rotation(azimuth: float, elevation: float) -> np.ndarray:
    """Object rotation in the right-handed (x, y, z) camera frame; angles in degrees."""
    return _rx(math.radians(elevation)) @ _ry(math.radians(azimuth))


def index_rotation(azimuth: float, elevation: float) -> np.ndarray:
    """The same rotation expressed on (h, w, d) index offsets."""
    p = _IDX_TO_PHYS
    return p.T @ physical_rotation(azimuth, elevation) @ p


def pose_transform(pose: Pose, output_dims=None) -> TransformSpec:
    return TransformSpec(index_rotation(pose.azimuth, pose.elevation), pose.scale,
                         (0.0, 0.0, 0.0), output_dims)


# --- embed / sample / transform ----------------------------------------------

def embed(grid, target) -> np.ndarray:
    """Centre ``grid`` inside a zero grid of spatial size ``target``."""
    g = as_grid(grid)
    target = tuple(int(t) for t in target)
    if any(t < n for t, n in zip(target, g.shape[:3])):
        raise ValueError(f"embed target {target} smaller than grid {g.shape[:3]}")
    out = np.zeros(target + (g.shape[3],), dtype=g.dtype)
    lo = [(t - n) // 2 for t, n in zip(target, g.shape[:3])]
    out[lo[0]:lo[0] + g.shape[0], lo[1]:lo[1] + g.shape[1], lo[2]:lo[2] + g.shape[2]] = g
    return out


def downsample(grid, factor: int = 2) -> np.ndarray:
    """Box-filter downsampling: each output voxel is the mean of a factor^3 block."""
    g = as_grid(grid)
    if factor < 1 or any(n % factor for n in g.shape[:3]):
        raise ValueError(f"grid dims {g.shape[:3]} not divisible by factor {factor}")
    h, w, d, c = g.shape
    f = factor
    return g.reshape(h // f, f, w // f, f, d // f, f, c).mean(axis=(1, 3, 5))


def trilinear_sample(grid, point, channel: int = 0) -> float:
    """Trilinear value at a continuous (h, w, d) index point; outside reads 0."""
    g = as_grid(grid)
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    return float(trilinear_points(g[..., channel:channel + 1], p)[0, 0])


def trilinear_points(grid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorised trilinear sampling: pts (..., 3) -> (..., C)."""
    h, w, d, c = grid.shape
    flat = grid.reshape(-1, c)
    shp = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    base = np.floor(pts)
    f = pts - base
    i0 = base.astype(np.int64)
    out = np.zeros((pts.shape[0], c), dtype=np.result_type(grid.dtype, np.float32))
    for dh in (0, 1):
        ih = i0[:, 0] + dh
        fh = f[:, 0] if dh else 1.0 - f[:, 0]
        for dw in (0, 1):
            iw = i0[:, 1] + dw
            fw = f[:, 1] if dw else 1.0 - f[:, 1]
            for dd in (0, 1):
                id_ = i0[:, 2] + dd
                fd = f[:, 2] if dd else 1.0 - f[:, 2]
                ok = (ih >= 0) & (ih < h) & (iw >= 0) & (iw < w) & (id_ >= 0) & (id_ < d)
                lin = np.where(ok, (ih * w + iw) * d + id_, 0)
                out += (fh * fw * fd * ok)[:, None] * flat[lin]
    return out.reshape(shp + (c,))


def _centre(dims) -> np.ndarray:
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0


def source_coords(spec: TransformSpec, in_dims, out_dims) -> np.ndarray:
    """Input-grid index coordinates of every output voxel centre, (H, W, D, 3)."""
    out_dims = tuple(out_dims)
    axes = [np.arange(n, dtype=np.float64) for n in out_dims]
    q = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1) - _centre(out_dims)
    q = q - np.asarray(spec.translation)
    # inverse map: x = R^T (y - t) / s ; row-vector form y @ R
    src = (q @ np.asarray(spec.rotation)) / spec.scale
    return src + _centre(in_dims)


def apply_transform(grid, spec: TransformSpec) -> np.ndarray:
    g = as_grid(grid)
    out_dims = spec.output_dims or g.shape[:3]
    coords = source_coords(spec, g.shape[:3], out_dims)
    return trilinear_points(g, coords).astype(g.dtype, copy=False)


def rigid_transform(grid, pose: Pose, output_dims=None) -> np.ndarray:
    """Resample ``grid`` into the camera frame of ``pose`` (inverse mapping)."""
    if not isinstance(pose, Pose):
        pose = Pose(*pose)
    return apply_transform(grid, pose_transform(pose, output_dims))


# --- differentiable version (pose angles as tensors) -------------------------

def index_rotation_tensor(azimuth_deg: Tensor, elevation_deg: Tensor) -> Tensor:
    """Differentiable 3x3 index-frame rotation from scalar angle tensors (degrees)."""
    k = math.pi / 180.0
    a = azimuth_deg * k
    e = elevation_deg * k
    ca, sa, ce, se = de.cos(a), de.sin(a), de.cos(e), de.sin(e)
    zero = Tensor(np.zeros((), dtype=ca.dtype))
    one = Tensor(np.ones((), dtype=ca.dtype))
    ry = de.stack([de.stack([ca, zero, sa]), de.stack([zero, one, zero]),
                   de.stack([-sa, zero, ca])])
    rx = de.stack([de.stack([one, zero, zero]), de.stack([zero, ce, -se]),
                   de.stack([zero, se, ce])])
    p = _IDX_TO_PHYS.astype(ca.dtype)
    return Tensor(p.T) @ (rx @ ry) @ Tensor(p)


def rigid_transform_tensor(grid: Tensor, azimuth: Tensor, elevation: Tensor,
                           scale: float = 1.0, output_dims=None) -> Tensor:
    """rigid_transform that is differentiable in the grid values and the angles.

    ``grid`` may be (H, W, D, C) or batched (B, H, W, D, C) with (B,) angles.
    """
    batched = grid.ndim == 5
    in_dims = grid.shape[1:4] if batched else grid.shape[:3]
    out_dims = tuple(output_dims or in_dims)
    axes = [np.arange(n, dtype=grid.dtype) for n in out_dims]
    q = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1) - _centre(out_dims).astype(grid.dtype)
    q = q.reshape(-1, 3) / scale
    c_in = _centre(in_dims).astype(grid.dtype)
    if not batched:
        rot = index_rotation_tensor(azimuth, elevation)
        coords = (Tensor(q) @ rot + c_in).reshape(out_dims + (3,))
        return de.grid_sample3d(grid, coords)
    coords = []
    for i in range(grid.shape[0]):
        rot = index_rotation_tensor(azimuth[i], elevation[i])
        coords.append(Tensor(q) @ rot + c_in)
    coords = de.stack(coords).reshape((grid.shape[0],) + out_dims + (3,))
    return de.grid_sample3d(grid, coords)


# --- file I/O -----------------------------------------------------------------

def save_grid(grid, path) -> None:
    g = as_grid(grid)
    header = MAGIC + struct.pack("<4I", *g.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(g, dtype="<f4").tobytes())


def load_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise GridFormatError(f"{path}: bad magic (expected {MAGIC!r})")
    dims = struct.unpack("<4I", raw[4:20])
    n = 1
    for v in dims:
        if v < 1:
            raise GridFormatError(f"{path}: zero dimension in header {dims}")
        n *= v
    if n > _MAX_ELEMS:
        raise GridFormatError(f"{path}: dimension overflow {dims}")
    if len(raw) - 20 < 4 * n:
        raise GridFormatError(f"{path}: truncated, header wants {4 * n} data bytes, "
                              f"file has {len(raw) - 20}")
    return np.frombuffer(raw, dtype="<f4", count=n, offset=20).reshape(dims).astype(np.float32)
