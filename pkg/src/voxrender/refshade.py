"""Classical voxel renderers that produce the training targets.

All renderers work on a grid that is already in camera space (see
:mod:`voxrender.voxgrid`): rays run along +d, one per pixel.  Images are
float arrays ``(H, W, C)`` in [0, 1].  Normals are expressed in the camera
frame (x right, y up, z towards the viewer) and stored encoded as
``(n + 1) / 2`` in normal maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .voxgrid import Pose, as_grid, rigid_transform, trilinear_points

SENTINEL_NORMAL = np.array([0.0, 0.0, 1.0])
STYLES = ("phong", "contour", "toon", "ao", "silhouette", "normal", "albedo")
GRAYSCALE_STYLES = ("phong", "contour", "toon", "ao", "silhouette")


@dataclass(frozen=True)
class LightSpec:
    direction: tuple[float, float, float] = (0.0, 1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))
    ambient: float = 0.2
    intensity: float = 1.0
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def unit_direction(self) -> np.ndarray:
        l = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(l) - 1.0) > 1e-6:
            raise ValueError(f"light direction must be a unit vector, |l| = {np.linalg.norm(l)}")
        return l

    @staticmethod
    def from_angles(azimuth: float, elevation: float, ambient: float = 0.2,
                    intensity: float = 1.0) -> "LightSpec":
        """Direction from angles in degrees: elevation above the image plane's
        horizontal, azimuth around the view axis (0 = towards the viewer)."""
        a, e = np.radians(azimuth), np.radians(elevation)
        d = (np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a))
        return LightSpec(tuple(float(v) for v in d), ambient, intensity)


@dataclass
class SurfaceMaps:
    depth: np.ndarray        # (H, W), +inf on misses, voxel units along +d
    mask: np.ndarray         # (H, W) bool
    normal: np.ndarray       # (H, W, 3) unit camera-frame normals, 0 on misses
    points: np.ndarray       # (H, W, 3) hit positions in grid index coords
    albedo: np.ndarray       # (H, W, C) surface albedo, 0 on misses
    upsample: int = 1

    @property
    def normal_rgb(self) -> np.ndarray:
        return np.where(self.mask[..., None], (self.normal + 1.0) / 2.0, 0.0)


def _occupancy(grid) -> np.ndarray:
    g = as_grid(grid)
    if g.shape[3] != 1:
        raise ValueError(f"expected a single-channel occupancy grid, got {g.shape[3]} channels")
    return g[..., 0].astype(np.float64)


def idx_to_cam(v: np.ndarray) -> np.ndarray:
    return np.stack([v[..., 1], -v[..., 0], -v[..., 2]], axis=-1)


def cam_to_idx(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0], -v[..., 2]], axis=-1)


def estimate_normals(grid, sigma: float = 1.0) -> np.ndarray:
    """Outward normals -grad(rho)/|grad(rho)| of the smoothed occupancy.

    Returns camera-frame unit vectors ``(H, W, D, 3)``; voxels with no gradient
    get the sentinel (0, 0, 1).
    """
    rho = _occupancy(grid)
    if sigma > 0:
        rho = ndimage.gaussian_filter(rho, sigma, mode="nearest")
    grads = [np.gradient(rho, axis=a) if rho.shape[a] > 1 else np.zeros_like(rho)
             for a in range(3)]
    n_idx = -np.stack(grads, axis=-1)
    norm = np.linalg.norm(n_idx, axis=-1, keepdims=True)
    ok = norm > 1e-8
    n_idx = np.where(ok, n_idx / np.where(ok, norm, 1.0), 0.0)
    n = idx_to_cam(n_idx)
    return np.where(ok, n, SENTINEL_NORMAL)


def _pixel_coords(h: int, w: int, up: int) -> tuple[np.ndarray, np.ndarray]:
    ii = (np.arange(h * up) + 0.5) / up - 0.5
    jj = (np.arange(w * up) + 0.5) / up - 0.5
    return np.meshgrid(ii, jj, indexing="ij")


def march_visibility(grid, threshold: float = 0.5, upsample: int = 1, step: float = 0.5,
                     texture=None, sigma: float = 1.0) -> SurfaceMaps:
    """First-hit ray march along +d for every pixel.

    The first sample whose trilinear occupancy reaches ``threshold`` brackets
    the surface; one bisection step narrows the bracket and a linear fit
    inside it gives the sub-voxel depth.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    occ = _occupancy(grid)[..., None]
    h, w, d = occ.shape[:3]
    hh, ww = _pixel_coords(h, w, upsample)
    ds = np.arange(0.0, d - 1 + 1e-9, step)
    if ds.size == 0:
        ds = np.zeros(1)
    pts = np.stack(np.broadcast_arrays(hh[..., None], ww[..., None], ds), axis=-1)
    vals = trilinear_points(occ, pts)[..., 0]
    inside = vals >= threshold
    hit = inside.any(axis=-1)
    k = np.argmax(inside, axis=-1)

    depth = np.full(hh.shape, np.inf)
    first = hit & (k == 0)
    depth[first] = ds[0]
    ref = hit & (k > 0)
    if ref.any():
        kk = k[ref]
        lo, hi = ds[kk - 1], ds[kk]
        v_lo = vals[ref, kk - 1]
        v_hi = vals[ref, kk]
        mid = 0.5 * (lo + hi)
        mp = np.stack([hh[ref], ww[ref], mid], axis=-1)
        v_mid = trilinear_points(occ, mp)[..., 0]
        upper = v_mid >= threshold
        lo = np.where(upper, lo, mid)
        hi = np.where(upper, mid, hi)
        v_lo = np.where(upper, v_lo, v_mid)
        v_hi = np.where(upper, v_mid, v_hi)
        t = np.clip((threshold - v_lo) / np.maximum(v_hi - v_lo, 1e-12), 0.0, 1.0)
        depth[ref] = lo + t * (hi - lo)

    points = np.stack([hh, ww, np.where(hit, depth, 0.0)], axis=-1)
    normal = np.zeros(hh.shape + (3,))
    if hit.any():
        field = estimate_normals(occ, sigma)
        n = trilinear_points(field, points[hit])
        nn = np.linalg.norm(n, axis=-1, keepdims=True)
        n = np.where(nn > 1e-8, n / np.maximum(nn, 1e-12), SENTINEL_NORMAL)
        normal[hit] = n
    if texture is None:
        albedo = hit[..., None].astype(np.float64)
    else:
        tex = as_grid(texture)
        albedo = np.zeros(hh.shape + (tex.shape[3],))
        albedo[hit] = trilinear_points(tex.astype(np.float64), points[hit])
        albedo = np.clip(albedo, 0.0, 1.0)
    return SurfaceMaps(depth, hit, normal, points, albedo, upsample)


def phong_term(normal: np.ndarray, light: LightSpec) -> np.ndarray:
    l = light.unit_direction()
    return light.intensity * np.maximum(0.0, normal @ l + light.ambient)


def shade_phong(maps: SurfaceMaps, light: LightSpec) -> np.ndarray:
    """S = max(0, l . n + a) on hit pixels, 0 elsewhere; (H, W, 1) or RGB if coloured."""
    s = np.clip(phong_term(maps.normal, light), 0.0, 1.0) * maps.mask
    color = np.asarray(light.color, dtype=np.float64)
    if np.allclose(color, color[0]):
        return np.clip(s[..., None] * color[0], 0.0, 1.0)
    return np.clip(s[..., None] * color, 0.0, 1.0)


def compose_albedo(albedo: np.ndarray, shading: np.ndarray) -> np.ndarray:
    """I = A * S elementwise (shading broadcast over albedo channels)."""
    a = np.asarray(albedo, dtype=np.float64)
    s = np.asarray(shading, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if s.ndim == 2:
        s = s[..., None]
    if a.shape[:2] != s.shape[:2] or s.shape[2] not in (1, a.shape[2]):
        raise ValueError(f"cannot compose albedo {a.shape} with shading {s.shape}")
    return np.clip(a * s, 0.0, 1.0)


_NEIGHBOURS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


def _shifted(a: np.ndarray, di: int, dj: int, fill):
    out = np.full_like(a, fill)
    h, w = a.shape[:2]
    src = a[max(di, 0):h + min(di, 0), max(dj, 0):w + min(dj, 0)]
    out[max(-di, 0):h + min(-di, 0), max(-dj, 0):w + min(-dj, 0)] = src
    return out


def contour_mask(maps: SurfaceMaps, depth_jump: float = 2.0, normal_angle: float = 30.0) -> np.ndarray:
    """Boolean (H, W) edge pixels from mask boundary, depth jumps and normal creases."""
    cos_t = np.cos(np.radians(normal_angle))
    m = maps.mask
    dep = np.where(m, maps.depth, 0.0)
    edge = np.zeros_like(m)
    for di, dj in _NEIGHBOURS:
        mn = _shifted(m, di, dj, False)
        dn = _shifted(dep, di, dj, 0.0)
        nn = _shifted(maps.normal, di, dj, 0.0)
        edge |= m & ~mn
        both = m & mn
        edge |= both & (np.abs(dep - dn) > depth_jump)
        edge |= both & ((maps.normal * nn).sum(-1) < cos_t)
    return edge


def shade_contour(maps: SurfaceMaps, depth_jump: float = 2.0, normal_angle: float = 30.0) -> np.ndarray:
    """Black (0) lines on white (1)."""
    return np.where(contour_mask(maps, depth_jump, normal_angle), 0.0, 1.0)[..., None]


def quantize(s: np.ndarray, levels: int) -> np.ndarray:
    return np.round(s * (levels - 1)) / (levels - 1)


def shade_toon(maps: SurfaceMaps, light: LightSpec, levels: int = 4, depth_jump: float = 2.0,
               normal_angle: float = 30.0) -> np.ndarray:
    """Phong shading quantized to ``levels`` bands with black contour lines on top."""
    if levels < 2:
        raise ValueError("toon shading needs at least 2 levels")
    s = np.clip(phong_term(maps.normal, light), 0.0, 1.0)
    q = quantize(s, levels) * maps.mask
    q[contour_mask(maps, depth_jump, normal_angle)] = 0.0
    return q[..., None]


def _hammersley(n: int) -> np.ndarray:
    i = np.arange(n)
    rev = np.zeros(n)
    bits = i.copy()
    f = 0.5
    while bits.any():
        rev += f * (bits & 1)
        bits >>= 1
        f *= 0.5
    return np.stack([(i + 0.5) / n, rev], axis=-1)


def _tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    t = np.cross(n, helper)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return t, np.cross(n, t)


def shade_ao(grid, maps: SurfaceMaps, n_rays: int = 16, max_steps: int = 16,
             threshold: float = 0.5, seed: int = 0, offset: float = 1.0) -> np.ndarray:
    """Ambient occlusion: 1 - occluded fraction of cosine-weighted hemisphere rays.

    Ray directions come from a Hammersley set with a per-pixel random
    rotation (seeded), so the result is bit-reproducible for a given seed.
    """
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    occ = _occupancy(grid)[..., None]
    out = np.zeros(maps.mask.shape)
    if not maps.mask.any():
        return out[..., None]
    rng = np.random.default_rng(seed)
    shift = rng.random(maps.mask.shape + (2,))[maps.mask]          # (P, 2)
    n_idx = cam_to_idx(maps.normal[maps.mask])                      # (P, 3)
    p0 = maps.points[maps.mask] + offset * n_idx
    u = (_hammersley(n_rays)[None] + shift[:, None]) % 1.0          # (P, R, 2)
    r = np.sqrt(u[..., 0])
    phi = 2.0 * np.pi * u[..., 1]
    loc = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(1.0 - u[..., 0], 0.0))], -1)
    t1, t2 = _tangent_frame(n_idx)
    dirs = (loc[..., :1] * t1[:, None] + loc[..., 1:2] * t2[:, None]
            + loc[..., 2:] * n_idx[:, None])
    blocked = np.zeros(dirs.shape[:2], dtype=bool)
    for step in range(max_steps + 1):
        q = p0[:, None] + step * dirs
        blocked |= trilinear_points(occ, q)[..., 0] >= threshold
    out[maps.mask] = 1.0 - blocked.mean(axis=1)
    return out[..., None]


def silhouette(grid) -> np.ndarray:
    """Per-pixel max of occupancy along depth, (H, W, 1)."""
    return _occupancy(grid).max(axis=2)[..., None]


def render_reference(grid, pose: Pose, light: LightSpec, styles=("phong",), upsample: int = 2,
                     texture=None, threshold: float = 0.5, ao_rays: int = 16,
                     ao_steps: int = 16, toon_levels: int = 4, seed: int = 0) -> dict[str, np.ndarray]:
    """Transform a world-space grid by ``pose`` and render the requested styles."""
    cam = rigid_transform(grid, pose)
    tex = None if texture is None else rigid_transform(texture, pose)
    maps = march_visibility(cam, threshold, upsample, texture=tex)
    out = {}
    for style in styles:
        if style == "phong":
            out[style] = shade_phong(maps, light)
        elif style == "contour":
            out[style] = shade_contour(maps)
        elif style == "toon":
            out[style] = shade_toon(maps, light, toon_levels)
        elif style == "ao":
            out[style] = shade_ao(cam, maps, ao_rays, ao_steps, threshold, seed)
        elif style == "silhouette":
            sil = np.clip(silhouette(cam), 0.0, 1.0)   # trilinear resampling can overshoot by an ulp
            out[style] = np.repeat(np.repeat(sil, upsample, 0), upsample, 1)
        elif style == "normal":
            out[style] = maps.normal_rgb
        elif style == "albedo":
            out[style] = maps.albedo
        else:
            raise ValueError(f"unknown style {style!r}; choose from {STYLES}")
    return out
