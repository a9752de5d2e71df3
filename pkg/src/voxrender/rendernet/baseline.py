"""EC and EC-Deep encoder-decoder baselines.

Both see the shape in its canonical pose and must learn the transform
themselves from a conditioning vector (pose as sin/cos pairs and scale, light
direction, ambient and intensity).  The decoder is the tail of the full
channel/stride list that reaches the requested output size from 8x8.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict, replace

import numpy as np

from .. import diffengine as de
from ..dataset import TrainSet
from ..diffengine import AdamConfig, ParamStore, Tensor, as_tensor
from .model import PRELU_INIT, _he, add_conv, add_res
from .spec import ConvLayer, SpecError, _layers
from .train import Schedule, TrainLog, TrainingDiverged, clip_gradients

EC_DECODER = tuple(ConvLayer(c, 4, s) for c, s in zip(
    (512, 512, 256, 256, 128, 128, 64, 64, 32, 32, 16, 1), (2, 1) * 6))
COND_DIM = 10


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "EC"
    scale: float = 1.0
    latent_dim: int = 200
    input_dims: tuple[int, int, int] = (64, 64, 64)
    output_hw: tuple[int, int] = (512, 512)
    encoder: tuple[ConvLayer, ...] = (ConvLayer(64, 4, 2), ConvLayer(128, 4, 2),
                                      ConvLayer(256, 4, 2), ConvLayer(512, 4, 2))
    fc_hidden: int = 1024
    embed_dim: int = 512
    base_hw: int = 8

    def __post_init__(self):
        if self.kind not in ("EC", "EC-Deep"):
            raise SpecError(f"unknown baseline kind {self.kind!r}")
        object.__setattr__(self, "encoder", _layers(self.encoder))
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "output_hw", tuple(int(v) for v in self.output_hw))

    def ch(self, c: int) -> int:
        return max(1, int(round(c * self.scale)))

    def decoder(self) -> tuple[ConvLayer, ...]:
        oh, ow = self.output_hw
        if oh != ow or oh % self.base_hw:
            raise SpecError(f"output {self.output_hw} must be square and a multiple of {self.base_hw}")
        ups = oh // self.base_hw
        n = int(round(math.log2(ups)))
        if 2**n != ups or n > 6:
            raise SpecError(f"output size {oh} is not 8 * 2^k with k <= 6")
        return EC_DECODER[len(EC_DECODER) - 2 * n:] if n else EC_DECODER[-1:]

    def reshape_channels(self) -> int:
        dec = self.decoder()
        i = len(EC_DECODER) - len(dec)
        return self.ch(EC_DECODER[i - 1].channels) if i > 0 else self.ch(512)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = [asdict(l) for l in self.encoder]
        return d


def condition_vector(poses: np.ndarray, lights: np.ndarray) -> np.ndarray:
    """(N, 3) azimuth/elevation/radius and (N, 5) lights -> (N, 10) conditioning."""
    from ..voxgrid import R_REF
    a, e = np.radians(poses[:, 0]), np.radians(poses[:, 1])
    pose = np.stack([np.sin(a), np.cos(a), np.sin(e), np.cos(e), R_REF / poses[:, 2]], axis=1)
    return np.concatenate([pose, lights], axis=1).astype(np.float32)


def build_baseline(kind: str = "EC", seed: int = 0, scale: float = 1.0,
                   input_dims=(64, 64, 64), output_hw=(512, 512), latent_dim: int = 200):
    spec = BaselineSpec(kind, scale, latent_dim, tuple(input_dims), tuple(output_hw))
    rng = np.random.default_rng([seed, 29])
    p = ParamStore()
    dims = spec.input_dims
    cin = 1
    for i, l in enumerate(spec.encoder):
        cout = spec.ch(l.channels)
        add_conv(p, rng, f"enc.{i}", l.kernel, 3, cin, cout)
        dims = tuple(math.ceil(n / l.stride) for n in dims)
        cin = cout
    flat = int(np.prod(dims)) * cin
    p.add("fc_z.w", _he(rng, (flat, spec.latent_dim), flat, 0.5))
    p.add("fc_z.b", np.zeros(spec.latent_dim, np.float32))
    if spec.kind == "EC":
        width = spec.latent_dim + COND_DIM
    else:
        emb = spec.ch(spec.embed_dim)
        for name, n_in in (("pose", 5), ("light", 5)):
            p.add(f"emb_{name}.w", _he(rng, (n_in, emb), n_in))
            p.add(f"emb_{name}.b", np.zeros(emb, np.float32))
            p.add(f"emb_{name}.a", np.full(emb, PRELU_INIT, np.float32))
        width = spec.latent_dim + 2 * emb
    hid = spec.ch(spec.fc_hidden)
    for i, (n_in, n_out) in enumerate(((width, hid), (hid, hid))):
        p.add(f"fc{i}.w", _he(rng, (n_in, n_out), n_in))
        p.add(f"fc{i}.b", np.zeros(n_out, np.float32))
        p.add(f"fc{i}.a", np.full(n_out, PRELU_INIT, np.float32))
    c0 = spec.reshape_channels()
    n_out = spec.base_hw**2 * c0
    p.add("fc_img.w", _he(rng, (hid, n_out), hid))
    p.add("fc_img.b", np.zeros(n_out, np.float32))
    p.add("fc_img.a", np.full(n_out, PRELU_INIT, np.float32))
    cin = c0
    dec = spec.decoder()
    for i, l in enumerate(dec):
        last = i == len(dec) - 1
        cout = 1 if last else spec.ch(l.channels)
        if spec.kind == "EC-Deep" and l.stride == 1 and not last:
            if cout != cin:
                raise SpecError("EC-Deep residual replacement needs matching channels")
            add_res(p, rng, f"dec.{i}.r0", 3, 2, cin)
            add_res(p, rng, f"dec.{i}.r1", 3, 2, cin)
        else:
            add_conv(p, rng, f"dec.{i}", l.kernel, 2, cin, cout, act=not last,
                     transpose=l.stride > 1, stride=l.stride, gain=0.5 if last else 1.0)
        cin = cout
    return p, spec


def _act(p, name, x):
    return de.prelu(x, p[f"{name}.a"])


def baseline_forward(params: ParamStore, spec: BaselineSpec, grids, cond) -> Tensor:
    """Canonical grids (N, H, W, D, 1) and conditioning (N, 10) -> images (N, h, w, 1)."""
    from .model import _conv_layer, _res_block
    x = as_tensor(grids)
    cond = as_tensor(cond)
    if tuple(x.shape[1:4]) != spec.input_dims:
        raise ValueError(f"baseline expects grids {spec.input_dims}, got {x.shape[1:4]}")
    for i, l in enumerate(spec.encoder):
        x = _conv_layer(params, f"enc.{i}", x, l.stride)
    z = de.sigmoid(de.fully_connected(de.reshape(x, (x.shape[0], -1)),
                                      params["fc_z.w"], params["fc_z.b"]))
    if spec.kind == "EC":
        h = de.concat([z, cond], axis=1)
    else:
        ep = _act(params, "emb_pose", de.fully_connected(cond[:, :5], params["emb_pose.w"],
                                                         params["emb_pose.b"]))
        el = _act(params, "emb_light", de.fully_connected(cond[:, 5:], params["emb_light.w"],
                                                          params["emb_light.b"]))
        h = de.concat([z, ep, el], axis=1)
    for i in range(2):
        h = _act(params, f"fc{i}", de.fully_connected(h, params[f"fc{i}.w"], params[f"fc{i}.b"]))
    h = _act(params, "fc_img", de.fully_connected(h, params["fc_img.w"], params["fc_img.b"]))
    y = de.reshape(h, (h.shape[0], spec.base_hw, spec.base_hw, spec.reshape_channels()))
    dec = spec.decoder()
    for i, l in enumerate(dec):
        last = i == len(dec) - 1
        if spec.kind == "EC-Deep" and l.stride == 1 and not last:
            y = _res_block(params, f"dec.{i}.r1", _res_block(params, f"dec.{i}.r0", y))
        else:
            y = _conv_layer(params, f"dec.{i}", y, l.stride, l.stride > 1, act=not last)
    return de.sigmoid(y)


def train_baseline(params: ParamStore, spec: BaselineSpec, dataset: TrainSet,
                   adam_cfg: AdamConfig = AdamConfig(), schedule: Schedule = Schedule(),
                   seed: int = 0, target: str = "phong", log_path=None) -> TrainLog:
    """BCE on the shaded target, same batching, rate schedule and clipping as the
    RenderNet trainer so both can run under an identical budget."""
    from ..diffengine import adam_step
    cond_all = condition_vector(dataset.pose_array(), dataset.lights)
    order_rng = np.random.default_rng([seed, 1])
    log = TrainLog()
    t0 = time.perf_counter()
    step = 0
    n = len(dataset)
    bs = min(schedule.batch_size, n)
    total = schedule.total_steps(n)
    for epoch in range(schedule.epochs):
        perm = order_rng.permutation(n)
        for b in range(0, n - bs + 1, bs):
            if schedule.max_steps is not None and step >= schedule.max_steps:
                break
            idx = perm[b:b + bs]
            params.zero_grad()
            out = baseline_forward(params, spec, dataset.canonical(idx), cond_all[idx])
            loss = de.bce(out, dataset.targets[target][idx])
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainingDiverged(f"non-finite baseline loss at step {step}")
            de.backward(loss)
            if schedule.clip_norm is not None:
                clip_gradients(params, schedule.clip_norm)
            lr = schedule.learning_rate(adam_cfg.learning_rate, step, total)
            adam_step(params, adam_cfg if lr == adam_cfg.learning_rate
                      else replace(adam_cfg, learning_rate=lr))
            step += 1
            log.append(step, val, time.perf_counter() - t0, epoch)
    if log_path is not None:
        log.write_csv(log_path)
    return log


def baseline_predict(params: ParamStore, spec: BaselineSpec, data: TrainSet,
                     batch_size: int = 16) -> np.ndarray:
    cond = condition_vector(data.pose_array(), data.lights)
    outs = []
    with de.no_grad():
        for b in range(0, len(data), batch_size):
            idx = np.arange(b, min(b + batch_size, len(data)))
            outs.append(baseline_forward(params, spec, data.canonical(idx), cond[idx]).data)
    return np.concatenate(outs)
