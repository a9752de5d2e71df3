"""MAP inverse rendering through a trained RenderNet.

A candidate holds a shape latent z', pose angles, an optional texture latent
and the lighting eta = (light azimuth, light elevation, ambient, intensity).
All candidates are optimized jointly with Adam; every ``reinit_every`` steps
they are re-seeded around the best one on a finer pose grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffengine as de
from .diffengine import AdamConfig, ParamStore, Tensor
from .priors import LatentStats, ShapeAESpec, TextureSpec, decode, texture_decode
from .rendernet import NetworkSpec, render_tensor
from .voxgrid import R_REF

PSNR_MAX = 99.0


# --- metrics -----------------------------------------------------------------------------

def psnr(a, b) -> float:
    """10 log10(1 / MSE) for unit-range images; identical images give PSNR_MAX."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_MAX
    return min(PSNR_MAX, 10.0 * math.log10(1.0 / mse))


def iou(a, b, threshold: float = 0.5) -> float:
    """|A and B| / |A or B| of the voxels strictly above ``threshold``; two empty grids give 1."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"iou shape mismatch {a.shape} vs {b.shape}")
    ma, mb = a > threshold, b > threshold
    union = np.count_nonzero(ma | mb)
    return 1.0 if union == 0 else np.count_nonzero(ma & mb) / union


def angle_diff(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


# --- pose grid ------------------------------------------------------------------------------

def pose_grid(ranges, level: int = 0, center=None, n: int = 5) -> list[tuple[float, float]]:
    """(azimuth, elevation) nodes.

    Level 0 covers ``ranges`` with ``n`` nodes per axis, corners included.  A
    level-k grid has spacing halved k times and is centred on ``center``; nodes
    outside the ranges are dropped, the centre itself is always kept.
    """
    (a0, a1), (e0, e1) = ranges
    if level < 0:
        raise ValueError("level must be >= 0")
    if not (a1 > a0 and e1 > e0) or n < 2:
        raise ValueError(f"degenerate pose range {ranges}")
    sa, se = grid_spacing(ranges, level, n)
    if level == 0:
        return [(float(a), float(e)) for a in np.linspace(a0, a1, n) for e in np.linspace(e0, e1, n)]
    if center is None:
        raise ValueError("a refined pose grid needs a centre pose")
    ca, ce = center
    half = (n - 1) // 2
    out = []
    for i in range(-half, n - half):
        for j in range(-half, n - half):
            a, e = ca + i * sa, ce + j * se
            if (i, j) == (0, 0) or (a0 - 1e-9 <= a <= a1 + 1e-9 and e0 - 1e-9 <= e <= e1 + 1e-9):
                out.append((float(a), float(e)))
    return out


def grid_spacing(ranges, level: int, n: int = 5) -> tuple[float, float]:
    (a0, a1), (e0, e1) = ranges
    k = 2.0 ** -level
    return (a1 - a0) / (n - 1) * k, (e1 - e0) / (n - 1) * k


# --- problem ---------------------------------------------------------------------------------

@dataclass
class Renderer:
    params: ParamStore
    spec: NetworkSpec
    output: str = "shaded"      # "shaded" composes normal + albedo branches, else a branch name


@dataclass
class ShapePrior:
    params: ParamStore
    spec: ShapeAESpec


@dataclass
class TexturePrior:
    params: ParamStore
    spec: TextureSpec


@dataclass
class ReconstructionProblem:
    observed: np.ndarray
    renderer: Renderer
    shape_prior: ShapePrior | None = None
    texture_prior: TexturePrior | None = None
    alpha: float = 1.0
    beta: float = 0.0
    latent_stats: LatentStats | None = None
    pose_ranges: tuple = ((0.0, 180.0), (0.0, 180.0))
    radius: float = R_REF
    n_restarts: int = 5
    reinit_every: int = 200
    max_steps: int = 1800
    max_level: int = 3
    grid_n: int = 5
    learning_rate: float = 1e-2
    pose_lr: float = 1.0             # degrees per Adam step scale
    light: tuple[float, float, float, float] = (0.0, 45.0, 0.2, 1.0)
    optimize_light: bool = False
    init_latent: np.ndarray | None = None
    init_texture: np.ndarray | None = None
    tol: float = 1e-5
    patience: int = 100
    perturb_latent: float = 0.1
    perturb_pose: float = 5.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights alpha, beta must be >= 0")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        (a0, a1), (e0, e1) = self.pose_ranges
        if not (a1 > a0 and e1 > e0):
            raise ValueError(f"empty pose range {self.pose_ranges}")
        self.observed = np.asarray(self.observed, dtype=np.float64)
        if self.observed.ndim == 2:
            self.observed = self.observed[..., None]


@dataclass
class Candidate:
    z: np.ndarray                       # shape latent z' (or raw voxels for the direct path)
    azimuth: float
    elevation: float
    phi: np.ndarray | None = None
    eta: np.ndarray = field(default_factory=lambda: np.array([0.0, 45.0, 0.2, 1.0]))
    loss: float = float("inf")

    def copy(self) -> "Candidate":
        return replace(self, z=self.z.copy(), phi=None if self.phi is None else self.phi.copy(),
                       eta=self.eta.copy())


def light_direction(eta_az: Tensor, eta_el: Tensor) -> Tensor:
    """Unit light direction from angles in degrees (matches LightSpec.from_angles)."""
    k = math.pi / 180.0
    a, e = eta_az * k, eta_el * k
    ce = de.cos(e)
    return de.stack([ce * de.sin(a), de.sin(e), ce * de.cos(a)])


def _shape_volume(problem: ReconstructionProblem, z: Tensor, direct: bool) -> Tensor:
    if direct:
        return z
    sp = problem.shape_prior
    return decode(sp.params, sp.spec, z)


def render_candidate(problem: ReconstructionProblem, z: Tensor, az: Tensor, el: Tensor,
                     phi: Tensor | None, eta: Tensor, direct: bool = False) -> Tensor:
    """Differentiable image of one candidate (or a batch: leading axis on every input)."""
    vol = _shape_volume(problem, z, direct)
    batched = az.ndim == 1
    if problem.texture_prior is not None and phi is not None:
        tp = problem.texture_prior
        if batched:
            tex = de.stack([texture_decode(tp.params, tp.spec, phi[i]) for i in range(phi.shape[0])])
        else:
            tex = texture_decode(tp.params, tp.spec, phi)
        vol = de.concat([vol, tex], axis=-1)
    r = problem.renderer
    if batched:
        light = (de.stack([light_direction(eta[i, 0], eta[i, 1]) for i in range(eta.shape[0])]),
                 eta[:, 2], eta[:, 3])
    else:
        light = (light_direction(eta[0], eta[1]), eta[2], eta[3])
    out = render_tensor(r.params, r.spec, vol, az, el, R_REF / problem.radius,
                        light if r.output == "shaded" else None)
    return out[r.output]


def recon_loss(problem: ReconstructionProblem, z: Tensor, az: Tensor, el: Tensor,
               phi: Tensor | None = None, eta: Tensor | None = None, direct: bool = False,
               per_candidate: bool = False) -> Tensor:
    """alpha * pixel MSE + beta * Mahalanobis(z') when latent statistics are given."""
    if eta is None:
        eta = Tensor(np.asarray(problem.light, dtype=z.dtype))
    img = render_candidate(problem, z, az, el, phi, eta, direct)
    obs = problem.observed.astype(img.dtype)
    diff = img - obs
    if az.ndim == 1:
        data = (diff * diff).mean(axis=(1, 2, 3))
    else:
        data = (diff * diff).mean()
    loss = data * problem.alpha
    if problem.latent_stats is not None and problem.beta > 0 and not direct:
        if az.ndim == 1:
            prior = de.stack([problem.latent_stats.mahalanobis(z[i]) for i in range(z.shape[0])])
        else:
            prior = problem.latent_stats.mahalanobis(z)
        loss = loss + prior * problem.beta
    return loss if per_candidate or az.ndim == 0 else loss.sum()


# --- optimizer ------------------------------------------------------------------------------

@dataclass
class ReconstructionResult:
    best: Candidate
    round_losses: list[list[float]]
    best_history: list[float]
    final_level: int
    final_spacing: tuple[float, float]
    steps: int
    dropped: list[str]
    initial_loss: float
    round_best: list[Candidate] = field(default_factory=list)   # incumbent after each round


def _initial_latent(problem: ReconstructionProblem, direct: bool) -> np.ndarray:
    if direct:
        h, w, d = problem.renderer.spec.input_dims[:3]
        return np.full((h, w, d, 1), 0.5)
    if problem.init_latent is not None:
        return np.asarray(problem.init_latent, np.float64)
    if problem.latent_stats is not None:
        return problem.latent_stats.mu.copy()
    return np.full(problem.shape_prior.spec.latent_dim, 0.5)


def _batch_loss(problem, cands: list[Candidate], direct: bool, grad: bool = False):
    z = Tensor(np.stack([c.z for c in cands]), requires_grad=grad)
    az = Tensor(np.array([c.azimuth for c in cands]), requires_grad=grad)
    el = Tensor(np.array([c.elevation for c in cands]), requires_grad=grad)
    has_tex = problem.texture_prior is not None and cands[0].phi is not None
    phi = Tensor(np.stack([c.phi for c in cands]), requires_grad=grad) if has_tex else None
    eta = Tensor(np.stack([c.eta for c in cands]), requires_grad=grad and problem.optimize_light)
    losses = recon_loss(problem, z, az, el, phi, eta, direct, per_candidate=True)
    return losses, (z, az, el, phi, eta)


def _evaluate(problem, cands: list[Candidate], direct: bool, chunk: int = 8) -> np.ndarray:
    out = []
    with de.no_grad():
        for i in range(0, len(cands), chunk):
            losses, _ = _batch_loss(problem, cands[i:i + chunk], direct)
            out.append(np.atleast_1d(losses.data))
    vals = np.concatenate(out)
    for c, v in zip(cands, vals):
        c.loss = float(v)
    return vals


def _seed_candidates(problem, base: Candidate, nodes, direct: bool, keep_base: bool,
                     rng: np.random.Generator) -> list[Candidate]:
    """Best ``n_restarts`` candidates among the pose-grid nodes (base latent at every node)."""
    trial = []
    for a, e in nodes:
        c = base.copy()
        c.azimuth, c.elevation = a, e
        trial.append(c)
    _evaluate(problem, trial, direct)
    finite = [c for c in trial if math.isfinite(c.loss)]
    finite.sort(key=lambda c: c.loss)
    out = [base.copy()] if keep_base else []
    for c in finite:
        if len(out) >= problem.n_restarts:
            break
        if keep_base and (c.azimuth, c.elevation) == (base.azimuth, base.elevation):
            continue
        if keep_base:
            # re-seeded candidates are perturbations of the incumbent
            noise = rng.normal(size=c.z.shape) * problem.perturb_latent
            c.z = np.clip(c.z + noise, 0.0, 1.0) if direct else c.z + noise
            c.azimuth += float(rng.normal() * problem.perturb_pose)
            c.elevation += float(rng.normal() * problem.perturb_pose)
        out.append(c)
    return out


class _Adam:
    """Per-candidate Adam state over a dict of numpy variables."""

    def __init__(self, cfg: AdamConfig):
        self.cfg, self.m, self.v, self.t = cfg, {}, {}, 0

    def step(self, grads: dict[str, np.ndarray], lrs: dict[str, float]) -> dict[str, np.ndarray]:
        self.t += 1
        c = self.cfg
        out = {}
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            mh = m / (1 - c.beta1 ** self.t)
            vh = v / (1 - c.beta2 ** self.t)
            out[k] = lrs[k] * mh / (np.sqrt(vh) + c.epsilon)
        return out


def _optimize_round(problem, cands: list[Candidate], steps: int, direct: bool, diag: list[str]):
    """Joint Adam on every candidate for ``steps`` steps; returns per-step best losses."""
    opts = [_Adam(AdamConfig(problem.learning_rate)) for _ in cands]
    lr = {"z": problem.learning_rate, "az": problem.pose_lr, "el": problem.pose_lr,
          "phi": problem.learning_rate, "eta": problem.learning_rate}
    history = []
    alive = list(range(len(cands)))
    best_seen = [c.copy() for c in cands]
    for _ in range(steps):
        group = [cands[i] for i in alive]
        losses, (z, az, el, phi, eta) = _batch_loss(problem, group, direct, grad=True)
        vals = np.atleast_1d(losses.data).astype(np.float64)
        bad = [k for k, v in enumerate(vals) if not math.isfinite(v)]
        if bad:
            for k in bad:
                diag.append(f"candidate {alive[k]} dropped: non-finite loss")
            alive = [a for k, a in enumerate(alive) if k not in bad]
            if not alive:
                break
            continue
        for k, i in enumerate(alive):
            cands[i].loss = float(vals[k])
            if vals[k] < best_seen[i].loss:
                best_seen[i] = cands[i].copy()
        history.append(float(vals.min()))
        de.backward(losses.sum())
        for k, i in enumerate(alive):
            c = cands[i]
            grads = {"z": z.grad[k], "az": np.asarray(az.grad[k]), "el": np.asarray(el.grad[k])}
            if phi is not None:
                grads["phi"] = phi.grad[k]
            if problem.optimize_light and eta.grad is not None:
                grads["eta"] = eta.grad[k]
            upd = opts[i].step(grads, lr)
            c.z = c.z - upd["z"]
            if direct:
                c.z = np.clip(c.z, 0.0, 1.0)
            c.azimuth -= float(upd["az"])
            c.elevation -= float(upd["el"])
            if "phi" in upd:
                c.phi = c.phi - upd["phi"]
            if "eta" in upd:
                c.eta = c.eta - upd["eta"]
                c.eta[2:] = np.clip(c.eta[2:], 0.0, None)
    # each candidate continues from its own best state
    for i in alive:
        if best_seen[i].loss <= cands[i].loss:
            cands[i] = best_seen[i]
    return [cands[i] for i in alive], history


def _run(problem: ReconstructionProblem, seed: int, direct: bool) -> ReconstructionResult:
    rng = np.random.default_rng([seed, 23])
    base = Candidate(_initial_latent(problem, direct), 0.0, 0.0,
                     None if problem.texture_prior is None else
                     (np.zeros(problem.texture_prior.spec.latent_dim) if problem.init_texture is None
                      else np.asarray(problem.init_texture, np.float64)),
                     np.asarray(problem.light, np.float64))
    level = 0
    nodes = pose_grid(problem.pose_ranges, 0, n=problem.grid_n)
    cands = _seed_candidates(problem, base, nodes, direct, keep_base=False, rng=rng)
    if not cands:
        raise RuntimeError("every initial candidate has a non-finite loss")
    best = min(cands, key=lambda c: c.loss).copy()
    initial = best.loss
    diag: list[str] = []
    rounds: list[list[float]] = []
    best_hist = [best.loss]
    round_best: list[Candidate] = []
    steps = 0
    recent: list[float] = []
    while steps < problem.max_steps:
        n = min(problem.reinit_every, problem.max_steps - steps)
        cands, hist = _optimize_round(problem, cands, n, direct, diag)
        steps += n
        rounds.append(hist)
        if not cands:
            raise RuntimeError("all candidates dropped: " + "; ".join(diag))
        _evaluate(problem, cands, direct)
        top = min(cands, key=lambda c: c.loss)
        if top.loss < best.loss:
            best = top.copy()
        best_hist.append(best.loss)
        round_best.append(best.copy())
        recent.extend(hist)
        if len(recent) > problem.patience:
            old = min(recent[:-problem.patience])
            if old - best.loss < problem.tol * abs(old):
                break
        if steps >= problem.max_steps:
            break
        level = min(level + 1, problem.max_level)
        nodes = pose_grid(problem.pose_ranges, level, (best.azimuth, best.elevation),
                          n=problem.grid_n)
        cands = _seed_candidates(problem, best, nodes, direct, keep_base=True, rng=rng)
    return ReconstructionResult(best, rounds, best_hist, level,
                                grid_spacing(problem.pose_ranges, level, problem.grid_n),
                                steps, diag, initial, round_best)


def reconstruct(problem: ReconstructionProblem, seed: int = 0) -> ReconstructionResult:
    """MAP estimate of (z', pose, phi', eta) through the shape prior."""
    if problem.shape_prior is None:
        raise ValueError("reconstruct needs a shape prior; use reconstruct_direct without one")
    return _run(problem, seed, direct=False)


def reconstruct_direct(problem: ReconstructionProblem, seed: int = 0) -> ReconstructionResult:
    """Same search over raw voxel values clamped to [0, 1] (no shape prior)."""
    return _run(problem, seed, direct=True)


def candidate_grid(problem: ReconstructionProblem, cand: Candidate, direct: bool = False) -> np.ndarray:
    """The voxel grid a candidate stands for."""
    if direct:
        return cand.z
    with de.no_grad():
        return _shape_volume(problem, Tensor(cand.z), False).data


def render_of(problem: ReconstructionProblem, cand: Candidate, direct: bool = False) -> np.ndarray:
    with de.no_grad():
        return render_candidate(problem, Tensor(cand.z), Tensor(np.float64(cand.azimuth)),
                                Tensor(np.float64(cand.elevation)),
                                None if cand.phi is None else Tensor(cand.phi),
                                Tensor(cand.eta), direct).data
