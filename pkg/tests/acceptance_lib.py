"""Desk-scale experiment protocols shared by the acceptance suite.

Every function is deterministic in its seed.  Heavy artifacts (trained nets,
shape priors) are built once per session by fixtures in test_acceptance.py.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from voxrender import dataset as ds
from voxrender import invrender as ir
from voxrender import priors as pr
from voxrender import rendernet as rn
from voxrender import shapes
from voxrender.diffengine import AdamConfig
from voxrender.refshade import LightSpec
from voxrender.voxgrid import Pose, R_REF, rigid_transform

FAMILY_A = "boxes_spheres"
FAMILY_B = "tori"
STYLES = ("phong", "normal", "albedo")

# criterion 6 protocol
N_TRAIN_SHAPES, N_TRAIN_VIEWS = 40, 12
N_TEST_SHAPES, N_TEST_VIEWS = 10, 4
DESK_EPOCHS = 60
DESK_LR, DESK_LR_FINAL, DESK_CLIP = 1e-3, 1e-5, 1.0
DESK_NOISE = 0.5           # input-corruption augmentation, needed for the noise probe


def mean_psnr(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean([ir.psnr(p, t) for p, t in zip(pred, target)]))


def digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class DeskData:
    train: ds.TrainSet
    test: ds.TrainSet          # held-out family A
    test_b: ds.TrainSet        # held-out family B
    train_grids: list
    test_grids: list


def family_grids(family: str, n: int, seed: int) -> list[np.ndarray]:
    return [g for _, g in shapes.gen_shapes([family], n, seed=seed)]


def make_desk_data(seed: int = 1, n_train: int = N_TRAIN_SHAPES, views: int = N_TRAIN_VIEWS,
                   n_test: int = N_TEST_SHAPES, test_views: int = N_TEST_VIEWS) -> DeskData:
    grids = family_grids(FAMILY_A, n_train + n_test, seed)
    tr, te = grids[:n_train], grids[n_train:]
    tori = family_grids(FAMILY_B, n_test, seed + 1)
    return DeskData(ds.render_views(tr, STYLES, views, seed=seed),
                    ds.render_views(te, STYLES, test_views, seed=seed + 1),
                    ds.render_views(tori, STYLES, test_views, seed=seed + 2), tr, te)


def desk_schedule(epochs: int = DESK_EPOCHS, noise: float = 0.0) -> rn.Schedule:
    return rn.Schedule(epochs=epochs, batch_size=8, lr_final=DESK_LR_FINAL, clip_norm=DESK_CLIP,
                       noise=noise, checkpoint_every_epoch=False)


def train_desk_net(train: ds.TrainSet, seed: int = 0, epochs: int = DESK_EPOCHS,
                   noise: float = DESK_NOISE):
    spec = rn.NetworkSpec.desk()
    params = rn.build(spec, seed)
    t0 = time.perf_counter()
    log = rn.train(params, spec, train, "phong", AdamConfig(DESK_LR),
                   desk_schedule(epochs, noise), seed=seed)
    return params, spec, log, time.perf_counter() - t0


def constant_baseline(train: ds.TrainSet, test: ds.TrainSet) -> float:
    """Best constant image under MSE: the mean training image."""
    mean = train.targets["phong"].mean(axis=0)
    return mean_psnr(np.broadcast_to(mean, test.targets["phong"].shape), test.targets["phong"])


def _sil(data: ds.TrainSet, ratio: int = 2) -> np.ndarray:
    s = np.clip(data.volumes.max(axis=3), 0.0, 1.0)
    return np.repeat(np.repeat(s, ratio, 1), ratio, 2)


def silhouette_baseline(train: ds.TrainSet, test: ds.TrainSet) -> float:
    """Silhouette times the least-squares gain fitted on the training set."""
    s, y = _sil(train), train.targets["phong"]
    gain = float((s * y).sum() / (s * s).sum())
    return mean_psnr(np.clip(gain * _sil(test), 0, 1), test.targets["phong"])


def corrupted_volumes(data: ds.TrainSet, level: float, seed: int) -> np.ndarray:
    """Noise the world-space grids, then apply each sample's pose."""
    vols = []
    for i in range(len(data)):
        g = shapes.add_noise(data.canonical([i])[0], level, seed * 7919 + i)
        vols.append(rigid_transform(g, data.poses[i]).astype(np.float32))
    return np.stack(vols)


def with_volumes(data: ds.TrainSet, volumes: np.ndarray) -> ds.TrainSet:
    return ds.TrainSet(volumes, data.targets, data.lights, data.poses, data.shape_index, data.shapes)


def wide_grid(grids, width: int) -> np.ndarray:
    """Tile shapes side by side into one (width, width, 32, 1) camera-space grid."""
    n = grids[0].shape[0]
    k = width // n
    out = np.zeros((width, width) + grids[0].shape[2:], np.float32)
    for i in range(k):
        for j in range(k):
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = grids[(i * k + j) % len(grids)]
    return out


# --- criterion 8 ------------------------------------------------------------------------

C8_SHAPES, C8_VIEWS, C8_EPOCHS = 20, 6, 20


def baseline_round(seed: int):
    """Train RenderNet and EC on the same family-A data and budget; score both on family B."""
    grids = family_grids(FAMILY_A, C8_SHAPES, 100 + seed)
    train = ds.render_views(grids, STYLES, C8_VIEWS, seed=100 + seed)
    test_b = ds.render_views(family_grids(FAMILY_B, 5, 200 + seed), STYLES, 4, seed=200 + seed)
    sched = desk_schedule(C8_EPOCHS)
    spec = rn.NetworkSpec.desk()
    p = rn.build(spec, seed)
    rn.train(p, spec, train, "phong", AdamConfig(DESK_LR), sched, seed=seed)
    net = mean_psnr(rn.predict(p, spec, test_b), test_b.targets["phong"])
    bp, bspec = rn.build_baseline("EC", seed, scale=0.25, input_dims=(32, 32, 32), output_hw=(64, 64))
    rn.train_baseline(bp, bspec, train, AdamConfig(DESK_LR), sched, seed=seed)
    ec = mean_psnr(rn.baseline_predict(bp, bspec, test_b), test_b.targets["phong"])
    return net, ec


# --- criterion 9 ------------------------------------------------------------------------

# The prior and the test shapes come from the canonically oriented chair family: with
# randomly rotated shapes every rotation of a shape is in the prior too, and pose
# becomes unidentifiable from one view.
PRIOR_FAMILY = "chairs"
AE_SHAPES, AE_EPOCHS, AE_LATENT = 200, 30, 32
RECON_RANGES = ((0.0, 360.0), (0.0, 180.0))
RECON_STEPS, RECON_REINIT, RECON_RESTARTS = 400, 100, 5


def train_shape_prior(seed: int = 3, n: int = AE_SHAPES, epochs: int = AE_EPOCHS):
    grids = np.stack(family_grids(PRIOR_FAMILY, n, seed))
    spec = pr.ShapeAESpec.desk(AE_LATENT)
    params, spec = pr.build_shape_ae(seed=seed, spec=spec)
    pr.train_shape_ae(params, spec, grids, AdamConfig(1e-3), epochs=epochs, batch_size=8, seed=seed)
    stats = pr.latent_stats(pr.encode_all(params, spec, grids))
    return params, spec, stats


def ae_iou(params, spec, grids) -> list[float]:
    z = pr.encode_all(params, spec, np.stack(grids))
    return [ir.iou(pr.decode(params, spec, zi).data, g) for zi, g in zip(z, grids)]


def recon_case(i: int, seed: int = 9):
    rng = np.random.default_rng([seed, i])
    (a0, a1), (e0, e1) = RECON_RANGES
    pose = Pose(float(rng.uniform(a0, a1)), float(rng.uniform(max(e0, 10.0), min(e1, 170.0))), R_REF)
    light = LightSpec.from_angles(float(rng.uniform(-60, 60)), float(rng.uniform(15, 75)))
    la, le = float(np.degrees(np.arctan2(light.direction[0], light.direction[2]))), \
        float(np.degrees(np.arcsin(light.direction[1])))
    return pose, (la, le, light.ambient, light.intensity)


def self_reconstruct(net, spec, prior, grid, i: int, use_prior: bool, steps: int = RECON_STEPS):
    """Render ``grid`` with the trained net at a sampled pose, then recover it."""
    pose, eta = recon_case(i)
    params_ae, ae_spec, stats = prior
    base = ir.ReconstructionProblem(np.zeros((64, 64, 1)), ir.Renderer(net, spec),
                                    ir.ShapePrior(params_ae, ae_spec), light=eta)
    truth = ir.Candidate(np.asarray(grid, np.float64), pose.azimuth, pose.elevation,
                         eta=np.asarray(eta, np.float64))
    observed = ir.render_of(base, truth, direct=True)
    prob = ir.ReconstructionProblem(
        observed, ir.Renderer(net, spec), ir.ShapePrior(params_ae, ae_spec) if use_prior else None,
        latent_stats=stats if use_prior else None, beta=0.0, pose_ranges=RECON_RANGES,
        n_restarts=RECON_RESTARTS, reinit_every=RECON_REINIT, max_steps=steps, light=eta,
        learning_rate=2e-2 if use_prior else 5e-2)
    t0 = time.perf_counter()
    res = ir.reconstruct(prob, seed=i) if use_prior else ir.reconstruct_direct(prob, seed=i)
    wall = time.perf_counter() - t0
    recon = ir.candidate_grid(prob, res.best, direct=not use_prior)
    err = (ir.angle_diff(res.best.azimuth, pose.azimuth),
           ir.angle_diff(res.best.elevation, pose.elevation))
    return {"iou": ir.iou(recon, grid), "pose_err": err, "spacing": res.final_spacing,
            "wall": wall, "loss": res.best.loss, "initial": res.initial_loss,
            "hash": digest(recon, np.array([res.best.azimuth, res.best.elevation]))}


REPORT: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT[n] = line
    print(line)
    return ok
