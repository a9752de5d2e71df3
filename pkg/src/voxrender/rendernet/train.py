"""Patch cropping, losses and the Adam training loop for RenderNet."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import diffengine as de
from ..dataset import TrainSet
from ..diffengine import AdamConfig, ParamStore, Tensor
from ..voxgrid import rigid_transform
from .model import forward_camera, shade_head
from .spec import NetworkSpec

LOSS_KINDS = ("phong", "bce", "mse")


class TrainingDiverged(FloatingPointError):
    pass


def crop_patch(grid: np.ndarray, target_image: np.ndarray | None, fraction: float, seed: int,
               ratio: float = 2.0, align: int = 4):
    """Random (H, W) crop of a camera-space grid plus the aligned image window.

    Depth and channels are kept whole.  Offsets and sizes are multiples of
    ``align`` (the encoder's total stride) whenever the grid allows it, so a
    patch sees the same sampling lattice as the full grid.  ``ratio`` is the
    number of output pixels per input voxel.
    Returns ``(patch, image_patch, (h0, w0))``.
    """
    h, w = grid.shape[0], grid.shape[1]
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    ph, pw = int(round(h * fraction)), int(round(w * fraction))
    if ph < 1 or pw < 1:
        raise ValueError(f"fraction {fraction} gives an empty patch for a {h}x{w} grid")
    if fraction == 1.0:
        return grid, target_image, (0, 0)
    rng = np.random.default_rng([seed, 17])

    def pick(n, p):
        a = align if p >= align and n % align == 0 else 1
        p = max(a, (p // a) * a)
        h0 = int(rng.integers(0, (n - p) // a + 1)) * a
        return h0, p

    h0, ph = pick(h, ph)
    w0, pw = pick(w, pw)
    patch = grid[h0:h0 + ph, w0:w0 + pw]
    img = None
    if target_image is not None:
        r0, r1 = int(round(h0 * ratio)), int(round((h0 + ph) * ratio))
        c0, c1 = int(round(w0 * ratio)), int(round((w0 + pw) * ratio))
        img = target_image[r0:r1, c0:c1]
    return patch, img, (h0, w0)


@dataclass
class Schedule:
    epochs: int = 10
    batch_size: int = 8
    max_steps: int | None = None
    # patch fraction grows linearly from the first to the second value; None trains on full grids
    patch_fractions: tuple[float, float] | None = None
    noise: float = 0.0                 # max corruption level; each sample draws one in [0, noise]
    checkpoint_every_epoch: bool = True
    lr_final: float | None = None      # cosine decay of the Adam rate down to this value
    clip_norm: float | None = None     # global gradient-norm clipping

    def total_steps(self, n: int) -> int:
        per_epoch = n // max(1, min(self.batch_size, n))
        total = per_epoch * self.epochs
        return total if self.max_steps is None else min(total, self.max_steps)

    def learning_rate(self, base: float, step: int, total: int) -> float:
        if self.lr_final is None or total <= 1:
            return base
        t = min(step / (total - 1), 1.0)
        return self.lr_final + 0.5 * (base - self.lr_final) * (1.0 + math.cos(math.pi * t))

    def fraction(self, epoch: int) -> float:
        if self.patch_fractions is None:
            return 1.0
        lo, hi = self.patch_fractions
        t = epoch / max(1, self.epochs - 1)
        return lo + (hi - lo) * t


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)

    def append(self, step, loss, wall, epoch):
        self.steps.append(step)
        self.losses.append(loss)
        self.wall.append(wall)
        self.epochs.append(epoch)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "epoch", "loss", "wall_time"])
            for row in zip(self.steps, self.epochs, self.losses, self.wall):
                wr.writerow([row[0], row[1], repr(row[2]), f"{row[3]:.3f}"])

    def moving_average(self, k: int = 20) -> np.ndarray:
        a = np.asarray(self.losses)
        if a.size < k:
            return a
        return np.convolve(a, np.ones(k) / k, mode="valid")


def compute_loss(out: dict[str, Tensor], targets: dict[str, np.ndarray], loss_kind: str,
                 lights: np.ndarray | None = None) -> Tensor:
    """Per-style training loss.

    ``phong``: BCE of the composed image, MSE of the normal map and BCE of the
    albedo (coverage) map.  ``bce`` / ``mse``: that loss for every branch
    against the target of the same name.
    """
    if loss_kind == "phong":
        dt = out["normal"].dtype
        light = (Tensor(lights[:, :3].astype(dt)), Tensor(lights[:, 3].astype(dt)),
                 Tensor(lights[:, 4].astype(dt)))
        shaded = shade_head(out["normal"], out["albedo"], light)
        return (de.bce(shaded, targets["phong"]) + de.mse(out["normal"], targets["normal"])
                + de.bce(out["albedo"], targets["albedo"][..., :1]))
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; choose from {LOSS_KINDS}")
    fn = de.bce if loss_kind == "bce" else de.mse
    total = None
    for name, pred in out.items():
        term = fn(pred, targets[name])
        total = term if total is None else total + term
    return total


def clip_gradients(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the norm."""
    grads = [t.grad for _, t in params.items() if t.grad is not None]
    norm = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def corrupt(volumes: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Replace a fraction of voxels with fair coin flips.  Each sample draws its
    own fraction uniformly from [0, level]."""
    if level <= 0:
        return volumes
    frac = rng.uniform(0.0, level, size=(volumes.shape[0],) + (1,) * (volumes.ndim - 1))
    pick = rng.random(volumes.shape) < frac
    coin = (rng.random(volumes.shape) < 0.5).astype(volumes.dtype)
    return np.where(pick, coin, volumes)


def _noisy_volumes(data: TrainSet, idx, level: float, rng: np.random.Generator) -> np.ndarray:
    """Corrupted camera-space volumes.  When the set carries its world-space shapes the
    noise goes in before the pose transform, as for a corrupted input file."""
    if data.shapes is None or data.shape_index is None or not data.poses:
        return corrupt(data.volumes[idx], level, rng)
    world = corrupt(data.canonical(idx), level, rng)
    return np.stack([rigid_transform(g, data.poses[i]) for g, i in zip(world, idx)]
                    ).astype(data.volumes.dtype)


def _batch(data: TrainSet, idx, fraction: float, seed: int, ratio: float, align: int,
           volumes: np.ndarray | None = None):
    vols, tg = [], {k: [] for k in data.targets}
    for j, i in enumerate(idx):
        src = data.volumes[i] if volumes is None else volumes[j]
        patch, _, (h0, w0) = crop_patch(src, None, fraction, seed + j, ratio, align)
        vols.append(patch)
        ph, pw = patch.shape[:2]
        for k, img in data.targets.items():
            tg[k].append(img[i][int(h0 * ratio):int((h0 + ph) * ratio),
                                int(w0 * ratio):int((w0 + pw) * ratio)])
    return np.stack(vols), {k: np.stack(v) for k, v in tg.items()}


def train(params: ParamStore, spec: NetworkSpec, dataset: TrainSet, loss_kind: str = "phong",
          adam_cfg: AdamConfig = AdamConfig(), schedule: Schedule = Schedule(), seed: int = 0,
          log_path=None, checkpoint_dir=None, verbose: bool = False) -> TrainLog:
    """Minibatch Adam over ``dataset``; returns the per-step loss log.

    Aborts with TrainingDiverged on the first non-finite loss.
    """
    from ..diffengine import adam_step, save_checkpoint

    if len(dataset) == 0:
        raise ValueError("empty training set")
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; choose from {LOSS_KINDS}")
    ratio, align = spec.upsample_ratio, spec.encoder_stride
    order_rng = np.random.default_rng([seed, 1])
    drop_rng = np.random.default_rng([seed, 2])
    noise_rng = np.random.default_rng([seed, 3])
    log = TrainLog()
    t0 = time.perf_counter()
    step = 0
    n = len(dataset)
    bs = min(schedule.batch_size, n)
    total = schedule.total_steps(n)
    for epoch in range(schedule.epochs):
        perm = order_rng.permutation(n)
        frac = schedule.fraction(epoch)
        for b in range(0, n - bs + 1, bs):
            if schedule.max_steps is not None and step >= schedule.max_steps:
                break
            idx = perm[b:b + bs]
            noisy = (_noisy_volumes(dataset, idx, schedule.noise, noise_rng)
                     if schedule.noise > 0 else None)
            vols, tg = _batch(dataset, idx, frac, seed * 1_000_003 + step * 97, ratio, align, noisy)
            params.zero_grad()
            out = forward_camera(params, spec, vols, training=True, rng=drop_rng)
            loss = compute_loss(out, tg, loss_kind, dataset.lights[idx])
            val = float(loss.data)
            if not math.isfinite(val):
                last = log.losses[-1] if log.losses else float("nan")
                raise TrainingDiverged(f"non-finite loss {val} at step {step} (epoch {epoch}, "
                                       f"samples {idx.tolist()}); last finite loss {last}")
            de.backward(loss)
            if schedule.clip_norm is not None:
                clip_gradients(params, schedule.clip_norm)
            lr = schedule.learning_rate(adam_cfg.learning_rate, step, total)
            adam_step(params, adam_cfg if lr == adam_cfg.learning_rate
                      else replace(adam_cfg, learning_rate=lr))
            step += 1
            log.append(step, val, time.perf_counter() - t0, epoch)
        if verbose:
            k = max(1, n // bs)
            print(f"epoch {epoch}: mean loss {np.mean(log.losses[-k:]):.5f}", flush=True)
        if checkpoint_dir is not None and schedule.checkpoint_every_epoch:
            save_checkpoint(params, Path(checkpoint_dir) / f"epoch_{epoch:03d}",
                            extra={"spec": spec.to_dict(), "epoch": epoch, "step": step})
        if log_path is not None:
            log.write_csv(log_path)
        if schedule.max_steps is not None and step >= schedule.max_steps:
            break
    if log_path is not None:
        log.write_csv(log_path)
    return log


def predict(params: ParamStore, spec: NetworkSpec, data: TrainSet, loss_kind: str = "phong",
            batch_size: int = 16) -> np.ndarray:
    """Rendered images for every sample: the composed image for ``phong``,
    otherwise the first branch."""
    outs = []
    with de.no_grad():
        for b in range(0, len(data), batch_size):
            out = forward_camera(params, spec, data.volumes[b:b + batch_size])
            if loss_kind == "phong":
                l = data.lights[b:b + batch_size]
                img = shade_head(out["normal"], out["albedo"],
                                 (Tensor(l[:, :3]), Tensor(l[:, 3]), Tensor(l[:, 4])))
            else:
                img = out[next(iter(spec.branches))]
            outs.append(img.data)
    return np.concatenate(outs)
