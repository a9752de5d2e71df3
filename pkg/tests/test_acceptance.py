"""Acceptance suite: one PASS/FAIL line per criterion.

The heavy fixtures (desk RenderNet, shape prior) are trained once per module.
Run alone with ``pytest tests/test_acceptance.py -s`` to watch progress.
"""

import time

import numpy as np
import pytest

import acceptance_lib as L
from oracles import naive_conv, naive_conv_transpose
from voxrender import diffengine as de
from voxrender import gradsuite
from voxrender import invrender as ir
from voxrender import refshade as rs
from voxrender import rendernet as rn
from voxrender import voxgrid as vg
from voxrender.refshade import LightSpec

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def desk():
    data = L.make_desk_data()
    params, spec, log, wall = L.train_desk_net(data.train)
    return data, params, spec, log, wall


@pytest.fixture(scope="module")
def prior():
    return L.train_shape_prior()


def _psnr_of(params, spec, data):
    return L.mean_psnr(rn.predict(params, spec, data), data.targets["phong"])


# --- 1: gradients -----------------------------------------------------------------

def test_c01_gradient_suite():
    t0 = time.perf_counter()
    res = gradsuite.run_suite(tol=1e-5, precision="double", probes=20)
    wall = time.perf_counter() - t0
    composites = {r.name for r in res if r.kind == "composite"}
    bad = [f"{r.name}={r.error:.1e}" for r in res if not r.passed]
    worst = max(res, key=lambda r: r.error / r.tolerance)
    ok = not bad and len(composites) == 3 and wall < 300
    L.report(1, ok, f"{len(res)} checks, worst {worst.name} {worst.error:.1e}/{worst.tolerance:.0e}, "
                    f"{wall:.1f}s {'failing: ' + ', '.join(bad) if bad else ''}")
    assert ok


# --- 2: convolution oracles ---------------------------------------------------------

def _random_conv_case(r, nd):
    shape = tuple(int(v) for v in r.integers(2, 8 if nd == 2 else 6, size=nd))
    k, s = int(r.integers(1, 5)), int(r.integers(1, 3))
    cin, cout = int(r.integers(1, 4)), int(r.integers(1, 4))
    return (r.normal(size=shape + (cin,)), r.normal(size=(k,) * nd + (cin, cout)),
            r.normal(size=cout), s)


def test_c02_convolution_oracles():
    t0 = time.perf_counter()
    worst = {}
    for nd in (2, 3):
        for transpose in (False, True):
            r = np.random.default_rng([2, nd, transpose])
            err = 0.0
            for _ in range(50):
                x, w, b, s = _random_conv_case(r, nd)
                if transpose:
                    y = de.conv_transpose(de.Tensor(x), de.Tensor(w), de.Tensor(b), stride=s).data
                    ref = naive_conv_transpose(x, w, b, s)
                else:
                    y = de.conv(de.Tensor(x), de.Tensor(w), de.Tensor(b), stride=s).data
                    ref = naive_conv(x, w, b, s)
                err = max(err, np.inf if y.shape != ref.shape else float(np.max(np.abs(y - ref))))
            worst[f"conv{nd}d{'T' if transpose else ''}"] = err
    wall = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-10 and wall < 60
    L.report(2, ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", {wall:.1f}s")
    assert ok


# --- 3: projection unit as a visibility oracle -------------------------------------

def test_c03_projection_silhouette_sign():
    r = np.random.default_rng(3)
    w, b, a = np.ones((1, 8)), np.zeros(1), np.full(1, 0.25)
    mismatched = 0
    for i in range(1000):
        density = 0.0 if i == 0 else (1.0 if i == 1 else r.uniform(0.0, 0.2))
        g = (r.random((8, 8, 8, 1)) < density).astype(np.float64)
        out = rn.project(g, w, b, a).data[..., 0]
        mismatched += int(np.any((out > 0) != (rs.silhouette(g)[..., 0] > 0)))
    ok = mismatched == 0
    L.report(3, ok, f"{1000 - mismatched}/1000 grids reproduce the silhouette sign")
    assert ok


# --- 4: reference shader ------------------------------------------------------------

def _sphere_normal_p95():
    n, rad = 32, 10.0
    c = np.full(3, (n - 1) / 2.0)
    idx = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1)
    occ = np.linalg.norm(idx - c, axis=-1) <= rad
    normals = rs.estimate_normals(occ.astype(np.float32)[..., None])
    pad = np.pad(occ, 1)
    exposed = np.zeros_like(occ)
    for ax in range(3):
        for s in (-1, 1):
            exposed |= ~np.roll(pad, s, axis=ax)[1:-1, 1:-1, 1:-1]
    surf = occ & exposed
    radial = idx[surf] - c
    radial = rs.idx_to_cam(radial / np.linalg.norm(radial, axis=-1, keepdims=True))
    ang = np.degrees(np.arccos(np.clip((normals[surf] * radial).sum(-1), -1, 1)))
    return float(np.percentile(ang, 95))


def _phong_properties() -> bool:
    r = np.random.default_rng(4)
    nrm = r.normal(size=(16, 16, 3))
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
    maps = rs.SurfaceMaps(np.zeros((16, 16)), np.ones((16, 16), bool), nrm,
                          np.zeros((16, 16, 3)), np.ones((16, 16, 1)))
    l = (0.6, 0.0, 0.8)
    prev, ok = None, True
    for amb in np.linspace(0.0, 1.0, 11):
        s = rs.shade_phong(maps, LightSpec(l, float(amb)))[..., 0]
        ref = np.clip(nrm @ np.array(l) + amb, 0.0, 1.0)
        ok &= bool(np.allclose(s, ref, atol=1e-6) and s.min() >= 0 and s.max() <= 1)
        ok &= prev is None or bool(np.all(s >= prev))
        prev = s
    return ok


def _ao_plate_and_cavity():
    g = np.zeros((24, 24, 24, 1))
    g[2:22, 2:22, 10:13] = 1.0
    plate = rs.shade_ao(g, rs.march_visibility(g), n_rays=32, max_steps=12)[6:18, 6:18, 0].min()
    g = np.zeros((24, 24, 24, 1))
    g[4:20, 4:20, 2:22] = 1.0
    g[11:13, 11:13, 2:18] = 0.0
    cavity = rs.shade_ao(g, rs.march_visibility(g), n_rays=32, max_steps=20)[11, 11, 0]
    return float(plate), float(cavity)


def _depth_brute_force_mismatches() -> int:
    r = np.random.default_rng(5)
    bad = 0
    for _ in range(20):
        g = np.zeros((16, 16, 16, 1))
        for _ in range(2):
            lo = r.integers(0, 10, size=3)
            hi = lo + r.integers(2, 7, size=3)
            g[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = 1.0
        m = rs.march_visibility(g)
        occ = g[..., 0] >= 0.5
        for i in range(16):
            for j in range(16):
                col = np.nonzero(occ[i, j])[0]
                if col.size == 0:
                    bad += int(m.mask[i, j])
                else:
                    bad += int(not m.mask[i, j] or abs(m.depth[i, j] - (col.min() - 0.5)) > 0.5)
    return bad


def test_c04_reference_shader_oracles():
    p95 = _sphere_normal_p95()
    phong = _phong_properties()
    plate, cavity = _ao_plate_and_cavity()
    depth_bad = _depth_brute_force_mismatches()
    ok = p95 < 10.0 and phong and plate >= 0.95 and cavity <= 0.2 and depth_bad == 0
    L.report(4, ok, f"normal p95 {p95:.2f} deg, phong {'ok' if phong else 'broken'}, "
                    f"AO plate {plate:.3f} cavity {cavity:.3f}, depth mismatches {depth_bad}")
    assert ok


# --- 5: transforms ------------------------------------------------------------------

def _smooth_blob(n=20, centre=(8.0, 11.0, 9.5), sigma=2.5):
    idx = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1)
    return np.exp(-((idx - np.asarray(centre)) ** 2).sum(-1) / (2 * sigma ** 2))[..., None]


def test_c05_transform_suite():
    r = np.random.default_rng(6)
    g = r.random((9, 8, 7, 2))
    ident = float(np.max(np.abs(vg.rigid_transform(g, vg.Pose(0.0, 0.0, vg.R_REF)) - g)))
    blob = _smooth_blob()
    half = vg.Pose(180.0, 0.0, vg.R_REF)
    twice = float(np.max(np.abs(vg.rigid_transform(vg.rigid_transform(blob, half), half) - blob)))
    g = r.random((6, 6, 6, 1))
    shifted = vg.apply_transform(g, vg.TransformSpec(np.eye(3), 1.0, (1.0, 0.0, 0.0)))
    shift_ok = bool(np.array_equal(shifted[1:], g[:-1]) and shifted[0].max() == 0.0)
    ortho = 0.0
    for az, el in r.uniform(-720, 720, size=(200, 2)):
        m = vg.index_rotation(az, el)
        ortho = max(ortho, float(np.max(np.abs(m.T @ m - np.eye(3)))), abs(np.linalg.det(m) - 1.0))
    ok = ident < 1e-6 and twice < 1e-3 and shift_ok and ortho < 1e-6
    L.report(5, ok, f"identity {ident:.1e}, double half-turn {twice:.1e}, "
                    f"integer shift {'exact' if shift_ok else 'inexact'}, orthonormality {ortho:.1e}")
    assert ok


# --- 6: desk-scale Phong training -----------------------------------------------------

def _patch_full_gap(params, spec, grids) -> tuple[float, int]:
    """Largest interior difference between a half-width patch and the full render."""
    border = int(np.ceil(spec.receptive_radius())) + 1
    ratio = int(spec.upsample_ratio)
    width = 32 * int(np.ceil((4 * border + 16) / 32))
    wide = L.wide_grid(grids, width)
    full = rn.forward_camera(params, spec, wide)["albedo"].data
    patch, _, (h0, w0) = rn.crop_patch(wide, None, 0.5, 11, ratio, spec.encoder_stride)
    part = rn.forward_camera(params, spec, patch)["albedo"].data
    ph, pw = patch.shape[:2]
    win = full[ratio * h0:ratio * (h0 + ph), ratio * w0:ratio * (w0 + pw)]
    b = ratio * border
    return float(np.max(np.abs(part[b:-b, b:-b] - win[b:-b, b:-b]))), part.shape[0] - 2 * b


def test_c06_desk_training(desk):
    data, params, spec, log, wall = desk
    held = _psnr_of(params, spec, data.test)
    const = L.constant_baseline(data.train, data.test)
    sil = L.silhouette_baseline(data.train, data.test)
    gap, interior = _patch_full_gap(params, spec, data.test_grids)
    ok = (wall <= 7200 and held >= const + 6.0 and held >= sil + 3.0 and interior > 0
          and gap < 1e-5)
    L.report(6, ok, f"held-out {held:.2f} dB vs const {const:.2f} / silhouette {sil:.2f}, "
                    f"train {wall / 60:.1f} min, patch/full gap {gap:.1e} over {interior}px")
    assert ok


def test_trained_net_sanity(desk):
    """Post-training checks: an empty grid renders dark, and an identity-pose render of a
    training sample matches its target as well as the training-set predictions do."""
    data, params, spec, _, _ = desk
    empty = rn.forward(params, spec, rn.RenderInputs(np.zeros((32, 32, 32, 1)), vg.Pose(),
                                                      LightSpec()))
    assert empty["shaded"].mean() < 0.05
    train_psnr = [ir.psnr(p, t) for p, t in zip(rn.predict(params, spec, data.train),
                                                  data.train.targets["phong"])]
    i = int(np.argsort(train_psnr)[len(train_psnr) // 2])
    l = data.train.lights[i]
    out = rn.forward(params, spec, rn.RenderInputs(data.train.volumes[i], vg.Pose(0.0, 0.0, vg.R_REF),
                                                    LightSpec(tuple(map(float, l[:3])), float(l[3]),
                                                              float(l[4]))))
    got = ir.psnr(out["shaded"], data.train.targets["phong"][i])
    assert got >= min(train_psnr)
    assert abs(got - train_psnr[i]) < 0.05


# --- 7: generalization ---------------------------------------------------------------

def test_c07_generalization(desk):
    data, params, spec, _, _ = desk
    a = _psnr_of(params, spec, data.test)
    b = _psnr_of(params, spec, data.test_b)
    noisy = _psnr_of(params, spec, L.with_volumes(data.test, L.corrupted_volumes(data.test, 0.5, 0)))
    ok = abs(a - b) <= 3.0 and a - noisy < 4.0
    L.report(7, ok, f"family A {a:.2f} dB, family B {b:.2f} dB, 50% noise {noisy:.2f} dB "
                    f"(drop {a - noisy:.2f})")
    assert ok


# --- 8: baseline comparison ----------------------------------------------------------

def test_c08_ec_baseline():
    rows = [L.baseline_round(seed) for seed in range(10)]
    wins = sum(net > ec for net, ec in rows)
    ok = wins >= 8
    detail = " ".join(f"{net:.1f}/{ec:.1f}" for net, ec in rows)
    L.report(8, ok, f"RenderNet beats EC on family B in {wins}/10 seeds (net/EC dB: {detail})")
    assert ok


# --- 9: inverse rendering ------------------------------------------------------------

def test_shape_prior_quality(prior):
    params, spec, _ = prior
    held = L.family_grids(L.PRIOR_FAMILY, 20, 77)
    assert np.median(L.ae_iou(params, spec, held)) >= 0.8


def test_c09_inverse_rendering(desk, prior):
    _, params, spec, _, _ = desk
    with_p, without = [], []
    for i, grid in enumerate(L.family_grids(L.PRIOR_FAMILY, 10, 90)):
        with_p.append(L.self_reconstruct(params, spec, prior, grid, i, use_prior=True))
        without.append(L.self_reconstruct(params, spec, prior, grid, i, use_prior=False))
    iou_p = np.array([r["iou"] for r in with_p])
    iou_d = np.array([r["iou"] for r in without])
    # pose error in units of the final pose-grid spacing, worst of the two angles
    rel = np.array([max(e / s for e, s in zip(r["pose_err"], r["spacing"])) for r in with_p])
    walls = [r["wall"] for r in with_p + without]
    lower = int(np.sum(iou_d < iou_p))
    ok = (np.median(iou_p) >= 0.6 and np.median(rel) <= 0.5 and lower >= 8
          and max(walls) <= 600)
    L.report(9, ok, f"median IOU prior {np.median(iou_p):.3f} vs direct {np.median(iou_d):.3f}, "
                    f"direct lower in {lower}/10, median pose error {np.median(rel):.2f} spacing, "
                    f"slowest {max(walls):.0f}s")
    assert ok


# --- 10: determinism -------------------------------------------------------------------

def _short_pipeline():
    """Reduced copy of every acceptance protocol; returns its losses and output hashes."""
    data = L.make_desk_data(seed=21, n_train=3, views=2, n_test=2, test_views=1)
    out = {"data": L.digest(data.train.volumes, *data.train.targets.values(),
                            data.test_b.targets["phong"])}
    params, spec, log, _ = L.train_desk_net(data.train, seed=5, epochs=2)
    out["train"] = L.digest(np.array(log.losses), *params.snapshot().values(),
                            rn.predict(params, spec, data.test))
    ec, ec_spec = rn.build_baseline("EC", 5, scale=0.25, input_dims=(32, 32, 32), output_hw=(64, 64))
    ec_log = rn.train_baseline(ec, ec_spec, data.train, de.AdamConfig(L.DESK_LR),
                               L.desk_schedule(1), seed=5)
    out["ec"] = L.digest(np.array(ec_log.losses), rn.baseline_predict(ec, ec_spec, data.test))
    prior = L.train_shape_prior(seed=5, n=8, epochs=1)
    out["prior"] = L.digest(*prior[0].snapshot().values(), prior[2].mu)
    rec = L.self_reconstruct(params, spec, prior, data.test_grids[0], 0, use_prior=True, steps=6)
    out["recon"] = rec["hash"] + repr(rec["loss"])
    return out


def test_c10_determinism():
    a, b = _short_pipeline(), _short_pipeline()
    same = [k for k in a if a[k] == b[k]]
    ok = len(same) == len(a)
    L.report(10, ok, f"{len(same)}/{len(a)} stages bit-identical across two runs "
                     f"({', '.join(k for k in a if k not in same) or 'all match'})")
    assert ok
