"""Procedural occupancy grids built from signed-distance primitives.

Recipes live in the unit cube [-0.5, 0.5]^3 (physical x right, y up, z
towards the viewer) which the grid spans, so the bounding box of any shape
is at most 1 unit.  Random recipes keep their content inside a ball of
radius ``FIT_RADIUS`` so that it survives the largest pose scale
(R_REF / R_MIN) and any rotation without clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .voxgrid import R_MIN, R_REF

FIT_RADIUS = 0.5 / (R_REF / R_MIN)
FAMILIES = ("boxes_spheres", "tori", "mixed", "chairs")


@dataclass(frozen=True)
class Primitive:
    kind: str                                  # sphere | box | torus | cylinder
    center: tuple[float, float, float]
    size: tuple[float, ...]                    # sphere (r,), box half-extents, torus (R, r), cylinder (r, half_h)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)   # xyz Euler angles, degrees
    subtract: bool = False


@dataclass
class ShapeRecipe:
    primitives: list[Primitive] = field(default_factory=list)
    resolution: int = 32
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError("recipe resolution must be >= 8")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise level must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ShapeRecipe":
        prims = [Primitive(p["kind"], tuple(p["center"]), tuple(p["size"]),
                           tuple(p.get("rotation", (0, 0, 0))), bool(p.get("subtract", False)))
                 for p in d["primitives"]]
        return ShapeRecipe(prims, int(d.get("resolution", 32)), float(d.get("noise", 0.0)),
                           int(d.get("seed", 0)))


def _euler(rot) -> np.ndarray:
    ax, ay, az = np.radians(rot)
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def sdf(prim: Primitive, p: np.ndarray) -> np.ndarray:
    """Signed distance of physical points ``p`` (..., 3) to one primitive."""
    q = (p - np.asarray(prim.center)) @ _euler(prim.rotation)   # into primitive frame
    if prim.kind == "sphere":
        return np.linalg.norm(q, axis=-1) - prim.size[0]
    if prim.kind == "box":
        e = np.abs(q) - np.asarray(prim.size)
        return np.linalg.norm(np.maximum(e, 0.0), axis=-1) + np.minimum(e.max(-1), 0.0)
    if prim.kind == "torus":
        big, small = prim.size
        ring = np.hypot(q[..., 0], q[..., 2]) - big
        return np.hypot(ring, q[..., 1]) - small
    if prim.kind == "cylinder":
        r, hh = prim.size
        d = np.stack([np.hypot(q[..., 0], q[..., 2]) - r, np.abs(q[..., 1]) - hh], -1)
        return np.minimum(d.max(-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    raise ValueError(f"unknown primitive kind {prim.kind!r}")


def voxel_centres(n: int) -> np.ndarray:
    """Physical coordinates of the (h, w, d) voxel centres of an n^3 grid."""
    c = (np.arange(n) + 0.5) / n - 0.5
    h, w, d = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([w, -h, -d], axis=-1)


def voxelize(recipe: ShapeRecipe) -> np.ndarray:
    if not recipe.primitives:
        raise ValueError("recipe has no primitives")
    p = voxel_centres(recipe.resolution)
    occ = np.zeros(p.shape[:3], dtype=bool)
    for prim in recipe.primitives:
        inside = sdf(prim, p) <= 0.0
        occ = occ & ~inside if prim.subtract else occ | inside
    grid = occ.astype(np.float32)[..., None]
    if recipe.noise > 0:
        grid = add_noise(grid, recipe.noise, recipe.seed)
    return grid


def add_noise(grid: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Replace a ``level`` fraction of voxels with fair coin flips (seeded)."""
    rng = np.random.default_rng([seed, 0x5EED])
    pick = rng.random(grid.shape) < level
    coin = (rng.random(grid.shape) < 0.5).astype(grid.dtype)
    return np.where(pick, coin, grid)


def _rand_rot(rng) -> tuple[float, float, float]:
    return tuple(float(v) for v in rng.uniform(0, 360, size=3))


def _rand_centre(rng, spread: float) -> tuple[float, float, float]:
    v = rng.normal(size=3)
    v *= spread * rng.random() ** (1 / 3) / np.linalg.norm(v)
    return tuple(float(x) for x in v)


def _chair(rng, fit: float) -> list[Primitive]:
    """Seat, back towards -z and legs or a pedestal, upright and unrotated.

    Unlike the other families these keep a canonical orientation, so a pose is
    recoverable from a view: the only symmetry left is the x mirror, which no
    rotation reproduces.
    """
    w, dp = rng.uniform(0.5, 0.75, size=2)          # seat half width / depth
    t = rng.uniform(0.11, 0.15)                     # seat half thickness
    bh, bt = rng.uniform(0.35, 0.6), rng.uniform(0.11, 0.15)
    lw = rng.uniform(0.13, 0.18)
    seat_y = rng.uniform(-0.15, 0.05)
    floor = -0.8
    parts = [("box", (0.0, seat_y, 0.0), (w, t, dp)),
             ("box", (0.0, seat_y + t + bh, -dp + bt), (w, bh, bt))]
    lh = 0.5 * (seat_y - t - floor)
    leg_y = floor + lh
    if rng.random() < 0.7:
        for sx in (-1, 1):
            for sz in (-1, 1):
                parts.append(("box", (sx * (w - lw), leg_y, sz * (dp - lw)), (lw, lh, lw)))
    else:
        parts.append(("cylinder", (0.0, leg_y, 0.0), (1.6 * lw, lh)))
        parts.append(("box", (0.0, floor + 0.5 * lw, 0.0), (0.8 * w, 0.5 * lw, 0.8 * dp)))
    # scale the unit-sized layout so its farthest corner sits inside the fit ball
    reach = 0.0
    for kind, c, size in parts:
        half = np.array(size if kind == "box" else (size[0], size[1], size[0]))
        reach = max(reach, float(np.linalg.norm(np.abs(c) + half)))
    k = 0.97 * fit / reach
    return [Primitive(kind, tuple(float(v) * k for v in c), tuple(float(v) * k for v in size))
            for kind, c, size in parts]


def random_recipe(family: str, rng: np.random.Generator, resolution: int = 32,
                  noise: float = 0.0, seed: int = 0) -> ShapeRecipe:
    """Draw one recipe whose content fits inside the FIT_RADIUS ball."""
    fit = FIT_RADIUS
    prims: list[Primitive] = []
    if family == "boxes_spheres":
        for _ in range(int(rng.integers(1, 4))):
            c = _rand_centre(rng, 0.35 * fit)
            room = fit - np.linalg.norm(c)
            if rng.random() < 0.5:
                prims.append(Primitive("sphere", c, (float(rng.uniform(0.35, 0.8) * room),)))
            else:
                half = rng.uniform(0.25, 0.6, size=3) * room
                half *= min(1.0, room / np.linalg.norm(half))
                prims.append(Primitive("box", c, tuple(float(v) for v in half), _rand_rot(rng)))
    elif family == "tori":
        for _ in range(int(rng.integers(1, 3))):
            c = _rand_centre(rng, 0.25 * fit)
            room = fit - np.linalg.norm(c)
            small = float(rng.uniform(0.15, 0.3) * room)
            big = float(rng.uniform(0.45, 0.7) * room)
            big = min(big, room - small)
            prims.append(Primitive("torus", c, (big, small), _rand_rot(rng)))
    elif family == "mixed":
        # asymmetric assemblies: a body with an attached part and an optional cut
        body_half = rng.uniform(0.3, 0.55, size=3) * fit
        body_half *= min(1.0, 0.75 * fit / np.linalg.norm(body_half))
        prims.append(Primitive("box", (0.0, 0.0, 0.0), tuple(float(v) for v in body_half)))
        corner = np.sign(rng.normal(size=3)) * body_half
        r = float(rng.uniform(0.25, 0.4) * fit)
        c = corner * 0.8
        c *= min(1.0, (fit - r) / np.linalg.norm(c))
        prims.append(Primitive("sphere", tuple(float(v) for v in c), (r,)))
        if rng.random() < 0.6:
            axis_pt = np.zeros(3)
            ax = int(rng.integers(0, 3))
            axis_pt[ax] = -np.sign(corner[ax]) * body_half[ax]
            prims.append(Primitive("cylinder", tuple(float(v) for v in axis_pt * 0.9),
                                   (float(rng.uniform(0.12, 0.2) * fit), float(0.35 * fit)),
                                   tuple(float(v) for v in (90.0 * (ax == 2), 0.0, 90.0 * (ax == 0)))))
        if rng.random() < 0.4:
            prims.append(Primitive("sphere", tuple(float(v) for v in -corner * 0.9),
                                   (float(0.3 * fit),), subtract=True))
    elif family == "chairs":
        prims = _chair(rng, fit)
    else:
        raise ValueError(f"unknown recipe family {family!r}; choose from {FAMILIES}")
    return ShapeRecipe(prims, resolution, noise, seed)


def gen_shapes(families, n: int, seed: int, resolution: int = 32, noise: float = 0.0):
    """``n`` deterministic (recipe, grid) pairs cycling through ``families``."""
    if n < 1:
        raise ValueError("gen_shapes needs n >= 1")
    if isinstance(families, str):
        families = [families]
    rng = np.random.default_rng([seed, 101])
    out = []
    for i in range(n):
        fam = families[i % len(families)]
        recipe = random_recipe(fam, rng, resolution, noise, seed * 100003 + i)
        out.append((recipe, voxelize(recipe)))
    return out
