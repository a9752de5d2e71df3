"""View sampling, reference-rendered datasets and their JSON manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import refshade
from .imageio import load_image, save_image
from .refshade import LightSpec
from .voxgrid import R_MAX, R_MIN, Pose, as_grid, load_grid, rigid_transform, save_grid

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ViewRanges:
    azimuth: tuple[float, float] = (0.0, 359.0)
    elevation: tuple[float, float] = (10.0, 170.0)
    radius: tuple[float, float] = (R_MIN, R_MAX)
    # light direction angles (see LightSpec.from_angles) and ambient term
    light_azimuth: tuple[float, float] = (-60.0, 60.0)
    light_elevation: tuple[float, float] = (15.0, 75.0)
    ambient: float = 0.2

    def __post_init__(self):
        for name in ("azimuth", "elevation", "radius", "light_azimuth", "light_elevation"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty {name} range {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.radius[0] <= 0:
            raise ValueError("radius range must be positive")

    def contains(self, pose: Pose) -> bool:
        return (self.azimuth[0] <= pose.azimuth <= self.azimuth[1]
                and self.elevation[0] <= pose.elevation <= self.elevation[1]
                and self.radius[0] <= pose.radius <= self.radius[1])


def sample_view(rng: np.random.Generator, ranges: ViewRanges) -> tuple[Pose, LightSpec]:
    pose = Pose(float(rng.uniform(*ranges.azimuth)), float(rng.uniform(*ranges.elevation)),
                float(rng.uniform(*ranges.radius)))
    light = LightSpec.from_angles(float(rng.uniform(*ranges.light_azimuth)),
                                  float(rng.uniform(*ranges.light_elevation)), ranges.ambient)
    return pose, light


def light_vector(light: LightSpec) -> np.ndarray:
    """(direction x, y, z, ambient, intensity) as used by the shading head."""
    return np.array(list(light.direction) + [light.ambient, light.intensity], dtype=np.float32)


# --- manifest -----------------------------------------------------------------------

@dataclass
class Sample:
    grid: str
    pose: tuple[float, float, float]
    light: dict
    images: dict[str, str]
    shape_index: int = 0

    def pose_obj(self) -> Pose:
        return Pose(*self.pose)

    def light_obj(self) -> LightSpec:
        d = self.light
        return LightSpec(tuple(d["direction"]), d["ambient"], d.get("intensity", 1.0))


@dataclass
class DatasetManifest:
    samples: list[Sample] = field(default_factory=list)
    seed: int = 0
    styles: tuple[str, ...] = ("phong",)
    ranges: ViewRanges = field(default_factory=ViewRanges)
    upsample: int = 2
    version: int = MANIFEST_VERSION
    root: str | None = field(default=None, compare=False, repr=False)   # directory of the JSON file

    def to_dict(self) -> dict:
        return {"version": self.version, "seed": self.seed, "styles": list(self.styles),
                "upsample": self.upsample, "ranges": {k: list(v) if isinstance(v, tuple) else v
                                                      for k, v in asdict(self.ranges).items()},
                "samples": [{"grid": s.grid, "pose": list(s.pose), "light": s.light,
                             "images": s.images, "shape_index": s.shape_index}
                            for s in self.samples]}

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('version')!r}")
        ranges = ViewRanges(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in d["ranges"].items()})
        samples = [Sample(s["grid"], tuple(s["pose"]), s["light"], dict(s["images"]),
                          int(s.get("shape_index", 0))) for s in d["samples"]]
        return DatasetManifest(samples, int(d["seed"]), tuple(d["styles"]), ranges,
                               int(d.get("upsample", 2)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @staticmethod
    def load(path) -> "DatasetManifest":
        return DatasetManifest.from_dict(json.loads(Path(path).read_text()))


def _check_styles(styles) -> tuple[str, ...]:
    styles = tuple(styles)
    bad = [s for s in styles if s not in refshade.STYLES]
    if bad or not styles:
        raise ValueError(f"unknown styles {bad}; choose from {refshade.STYLES}")
    return styles


def gen_dataset(shape_paths, styles, n_views: int, seed: int, out_dir,
                ranges: ViewRanges | None = None, upsample: int = 2,
                image_ext: str = ".png", ao_rays: int = 16) -> DatasetManifest:
    """Render ``n_views`` random views of every grid file and write a manifest."""
    styles = _check_styles(styles)
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    ranges = ranges or ViewRanges()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in shape_paths]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"missing shape files: {missing}")
    rng = np.random.default_rng([seed, 31])
    manifest = DatasetManifest([], seed, styles, ranges, upsample)
    for si, path in enumerate(paths):
        grid = load_grid(path)
        for v in range(n_views):
            pose, light = sample_view(rng, ranges)
            imgs = refshade.render_reference(grid, pose, light, styles, upsample,
                                             ao_rays=ao_rays, seed=seed * 7919 + si * 131 + v)
            rel = {}
            for style, img in imgs.items():
                name = f"images/s{si:04d}_v{v:03d}_{style}{image_ext}"
                save_image(img, out / name)
                rel[style] = name
            manifest.samples.append(Sample(str(path.resolve()), (pose.azimuth, pose.elevation,
                                                                 pose.radius),
                                           {"direction": list(light.direction),
                                            "ambient": light.ambient,
                                            "intensity": light.intensity}, rel, si))
    manifest.save(out / "manifest.json")
    manifest.root = str(out.resolve())
    return manifest


# --- in-memory training sets ----------------------------------------------------------

@dataclass
class TrainSet:
    """Camera-space volumes and aligned per-style target images."""

    volumes: np.ndarray                   # (N, H, W, D, C) float32
    targets: dict[str, np.ndarray]        # style -> (N, h, w, c) float32
    lights: np.ndarray                    # (N, 5): direction, ambient, intensity
    poses: list[Pose] = field(default_factory=list)
    shape_index: np.ndarray | None = None
    shapes: np.ndarray | None = None      # (S, H, W, D, C) world-space grids, by shape_index

    def __len__(self) -> int:
        return self.volumes.shape[0]

    def subset(self, idx) -> "TrainSet":
        idx = np.asarray(idx)
        return TrainSet(self.volumes[idx], {k: v[idx] for k, v in self.targets.items()},
                        self.lights[idx], [self.poses[i] for i in idx],
                        None if self.shape_index is None else self.shape_index[idx], self.shapes)

    def canonical(self, idx) -> np.ndarray:
        """World-space (canonical pose) grids of the given samples."""
        if self.shapes is None or self.shape_index is None:
            raise ValueError("training set carries no world-space shapes")
        return self.shapes[self.shape_index[np.asarray(idx)]]

    def pose_array(self) -> np.ndarray:
        return np.array([[p.azimuth, p.elevation, p.radius] for p in self.poses], dtype=np.float64)


def render_views(grids, styles, n_views: int, seed: int, ranges: ViewRanges | None = None,
                 upsample: int = 2, ao_rays: int = 16) -> TrainSet:
    """Sample views of in-memory grids and render every style (no files)."""
    styles = _check_styles(styles)
    ranges = ranges or ViewRanges()
    rng = np.random.default_rng([seed, 31])
    vols, lights, poses, sidx = [], [], [], []
    targets: dict[str, list] = {s: [] for s in styles}
    for si, g in enumerate(grids):
        g = as_grid(g)
        for v in range(n_views):
            pose, light = sample_view(rng, ranges)
            imgs = refshade.render_reference(g, pose, light, styles, upsample, ao_rays=ao_rays,
                                             seed=seed * 7919 + si * 131 + v)
            for s in styles:
                targets[s].append(imgs[s].astype(np.float32))
            vols.append(rigid_transform(g, pose).astype(np.float32))
            lights.append(light_vector(light))
            poses.append(pose)
            sidx.append(si)
    return TrainSet(np.stack(vols), {k: np.stack(v) for k, v in targets.items()},
                    np.stack(lights), poses, np.asarray(sidx),
                    np.stack([as_grid(g).astype(np.float32) for g in grids]))


def load_train_set(manifest: DatasetManifest) -> TrainSet:
    """Camera volumes and target images referenced by a manifest on disk."""
    cache: dict[str, np.ndarray] = {}
    vols, lights, poses, sidx = [], [], [], []
    targets: dict[str, list] = {s: [] for s in manifest.styles}
    for s in manifest.samples:
        if s.grid not in cache:
            cache[s.grid] = load_grid(s.grid)
        pose = s.pose_obj()
        vols.append(rigid_transform(cache[s.grid], pose).astype(np.float32))
        lights.append(light_vector(s.light_obj()))
        poses.append(pose)
        sidx.append(s.shape_index)
        for style in manifest.styles:
            targets[style].append(load_image(Path(s.images[style]) if Path(s.images[style]).is_absolute()
                                             else _root_of(manifest) / s.images[style]))
    by_index = {s.shape_index: cache[s.grid] for s in manifest.samples}
    shapes = np.stack([by_index[i].astype(np.float32) for i in sorted(by_index)])
    return TrainSet(np.stack(vols), {k: np.stack(v).astype(np.float32) for k, v in targets.items()},
                    np.stack(lights), poses, np.asarray(sidx), shapes)


def _root_of(manifest: DatasetManifest) -> Path:
    return Path(manifest.root) if manifest.root else Path(".")


def load_manifest(path) -> DatasetManifest:
    """Load a manifest and remember its directory for resolving image paths."""
    m = DatasetManifest.load(path)
    m.root = str(Path(path).resolve().parent)
    return m


def save_shapes(grids, out_dir, prefix: str = "shape") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, g in enumerate(grids):
        p = out / f"{prefix}_{i:04d}.vxg"
        save_grid(g, p)
        paths.append(p)
    return paths
