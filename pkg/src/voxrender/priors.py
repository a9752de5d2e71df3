"""Shape-prior 3-D autoencoder, latent statistics and the texture decoder."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffengine as de
from .diffengine import AdamConfig, ParamStore, Tensor, as_tensor
from .rendernet.spec import ConvLayer, SpecError, _layers
from .rendernet.train import TrainLog, TrainingDiverged

SIGMA_JITTER = 1e-4


# --- shape autoencoder ----------------------------------------------------------------

@dataclass(frozen=True)
class ShapeAESpec:
    scale: float = 1.0
    latent_dim: int = 200
    input_dims: tuple[int, int, int] = (64, 64, 64)
    encoder: tuple[ConvLayer, ...] = (ConvLayer(64, 5, 2), ConvLayer(128, 5, 2),
                                      ConvLayer(256, 2, 2), ConvLayer(512, 2, 2))
    # the first entry is the channel width of the reshaped FC output
    decoder: tuple[ConvLayer, ...] = (ConvLayer(512, 0, 0), ConvLayer(256, 4, 2),
                                      ConvLayer(128, 4, 2), ConvLayer(64, 4, 2),
                                      ConvLayer(32, 4, 2), ConvLayer(1, 4, 1))

    def __post_init__(self):
        object.__setattr__(self, "encoder", _layers(self.encoder))
        object.__setattr__(self, "decoder", _layers(self.decoder))
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))

    @staticmethod
    def desk(latent_dim: int = 32, resolution: int = 32, scale: float = 0.125) -> "ShapeAESpec":
        return ShapeAESpec(scale=scale, latent_dim=latent_dim, input_dims=(resolution,) * 3)

    def ch(self, c: int) -> int:
        return max(1, int(round(c * self.scale)))

    def shapes(self) -> dict:
        dims = self.input_dims
        if self.latent_dim < 1:
            raise SpecError("latent_dim must be >= 1")
        ledger = {"input": dims + (1,)}
        for i, l in enumerate(self.encoder):
            dims = tuple(math.ceil(n / l.stride) for n in dims)
            ledger[f"enc.{i}"] = dims + (self.ch(l.channels),)
        ledger["flat"] = (int(np.prod(dims)) * self.ch(self.encoder[-1].channels),)
        up = int(np.prod([l.stride for l in self.decoder[1:]]))
        if any(n % up for n in self.input_dims):
            raise SpecError(f"input dims {self.input_dims} not divisible by decoder upsampling {up}")
        base = tuple(n // up for n in self.input_dims)
        ledger["reshape"] = base + (self.ch(self.decoder[0].channels),)
        dims = base
        last = len(self.decoder) - 1
        for i, l in enumerate(self.decoder[1:], start=1):
            dims = tuple(n * l.stride for n in dims)
            ledger[f"dec.{i}"] = dims + (1 if i == last else self.ch(l.channels),)
        return ledger

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = [asdict(l) for l in self.encoder]
        d["decoder"] = [asdict(l) for l in self.decoder]
        d["input_dims"] = list(self.input_dims)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ShapeAESpec":
        return ShapeAESpec(**d)


def _he(rng, shape, fan_in, gain=1.0):
    return (rng.normal(size=shape) * gain * math.sqrt(2.0 / fan_in)).astype(np.float32)


def build_shape_ae(scale: float = 1.0, latent_dim: int = 200, seed: int = 0,
                   input_dims=(64, 64, 64), spec: ShapeAESpec | None = None):
    spec = spec or ShapeAESpec(scale=scale, latent_dim=latent_dim, input_dims=tuple(input_dims))
    ledger = spec.shapes()
    rng = np.random.default_rng([seed, 11])
    p = ParamStore()
    cin = 1
    for i, l in enumerate(spec.encoder):
        cout = spec.ch(l.channels)
        p.add(f"enc.{i}.w", _he(rng, (l.kernel,) * 3 + (cin, cout), l.kernel**3 * cin))
        p.add(f"enc.{i}.b", np.zeros(cout, np.float32))
        cin = cout
    flat = ledger["flat"][0]
    p.add("fc_enc.w", _he(rng, (flat, spec.latent_dim), flat, 0.5))
    p.add("fc_enc.b", np.zeros(spec.latent_dim, np.float32))
    n_out = int(np.prod(ledger["reshape"]))
    p.add("fc_dec.w", _he(rng, (spec.latent_dim, n_out), spec.latent_dim))
    p.add("fc_dec.b", np.zeros(n_out, np.float32))
    cin = ledger["reshape"][3]
    last = len(spec.decoder) - 1
    for i, l in enumerate(spec.decoder[1:], start=1):
        cout = 1 if i == last else spec.ch(l.channels)
        p.add(f"dec.{i}.w", _he(rng, (l.kernel,) * 3 + (cin, cout),
                                l.kernel**3 * cin / l.stride**3, 1.0 if i != last else 0.5))
        p.add(f"dec.{i}.b", np.zeros(cout, np.float32))
        cin = cout
    return p, spec


def encode(params: ParamStore, spec: ShapeAESpec, grid) -> Tensor:
    """Occupancy (N, H, W, D, 1) or (H, W, D, 1) -> latent z' in (0, 1)."""
    x = as_tensor(grid)
    single = x.ndim == 4
    if single:
        x = de.reshape(x, (1,) + x.shape)
    if tuple(x.shape[1:4]) != spec.input_dims or x.shape[4] != 1:
        raise ValueError(f"shape AE expects {spec.input_dims + (1,)}, got {x.shape[1:]}")
    last = len(spec.encoder) - 1
    for i, l in enumerate(spec.encoder):
        x = de.conv(x, params[f"enc.{i}.w"], params[f"enc.{i}.b"], l.stride)
        x = de.sigmoid(x) if i == last else de.elu(x)
    x = de.reshape(x, (x.shape[0], -1))
    z = de.sigmoid(de.fully_connected(x, params["fc_enc.w"], params["fc_enc.b"]))
    return de.reshape(z, z.shape[1:]) if single else z


def decode(params: ParamStore, spec: ShapeAESpec, z) -> Tensor:
    """Latent z' (N, L) or (L,) -> occupancy probabilities (N, H, W, D, 1)."""
    z = as_tensor(z)
    single = z.ndim == 1
    if single:
        z = de.reshape(z, (1,) + z.shape)
    if z.shape[1] != spec.latent_dim:
        raise ValueError(f"latent length {z.shape[1]} != {spec.latent_dim}")
    ledger = spec.shapes()
    x = de.elu(de.fully_connected(z, params["fc_dec.w"], params["fc_dec.b"]))
    x = de.reshape(x, (z.shape[0],) + ledger["reshape"])
    last = len(spec.decoder) - 1
    for i, l in enumerate(spec.decoder[1:], start=1):
        w, b = params[f"dec.{i}.w"], params[f"dec.{i}.b"]
        x = de.conv_transpose(x, w, b, l.stride) if l.stride > 1 else de.conv(x, w, b)
        x = de.sigmoid(x) if i == last else de.elu(x)
    return de.reshape(x, x.shape[1:]) if single else x


def train_shape_ae(params: ParamStore, spec: ShapeAESpec, grids, adam_cfg: AdamConfig = AdamConfig(),
                   epochs: int = 10, batch_size: int = 8, seed: int = 0, max_steps: int | None = None,
                   log_path=None, verbose: bool = False) -> TrainLog:
    """BCE reconstruction training on occupancy grids (N, H, W, D, 1)."""
    data = np.asarray(grids, dtype=np.float32)
    if data.ndim == 4:
        data = data[..., None]
    if len(data) == 0:
        raise ValueError("empty shape dataset")
    rng = np.random.default_rng([seed, 5])
    log = TrainLog()
    t0 = time.perf_counter()
    step = 0
    bs = min(batch_size, len(data))
    for epoch in range(epochs):
        perm = rng.permutation(len(data))
        for b in range(0, len(data) - bs + 1, bs):
            if max_steps is not None and step >= max_steps:
                break
            x = data[perm[b:b + bs]]
            params.zero_grad()
            loss = de.bce(decode(params, spec, encode(params, spec, x)), x)
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainingDiverged(f"non-finite shape-AE loss at step {step}")
            de.backward(loss)
            de.adam_step(params, adam_cfg)
            step += 1
            log.append(step, val, time.perf_counter() - t0, epoch)
        if verbose:
            print(f"shape AE epoch {epoch}: loss {log.losses[-1]:.5f}", flush=True)
        if max_steps is not None and step >= max_steps:
            break
    if log_path is not None:
        log.write_csv(log_path)
    return log


def encode_all(params: ParamStore, spec: ShapeAESpec, grids, batch_size: int = 16) -> np.ndarray:
    data = np.asarray(grids, dtype=np.float32)
    if data.ndim == 4:
        data = data[..., None]
    with de.no_grad():
        return np.concatenate([encode(params, spec, data[b:b + batch_size]).data
                               for b in range(0, len(data), batch_size)])


# --- latent statistics -------------------------------------------------------------------

@dataclass
class LatentStats:
    mu: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.sigma_inv is None:
            c = np.linalg.cholesky(self.sigma)
            ci = np.linalg.inv(c)
            self.sigma_inv = ci.T @ ci

    def mahalanobis(self, z) -> Tensor:
        """(z - mu)^T Sigma^-1 (z - mu), differentiable in z."""
        z = as_tensor(z)
        d = z - Tensor(self.mu.astype(z.dtype))
        return (d @ Tensor(self.sigma_inv.astype(z.dtype)) * d).sum()

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "LatentStats":
        return LatentStats(np.asarray(d["mu"], np.float64), np.asarray(d["sigma"], np.float64))


def latent_stats(latents, jitter: float = SIGMA_JITTER) -> LatentStats:
    """Unbiased sample mean and covariance plus ``jitter * I``."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("latent_stats needs a non-empty (N, L) array")
    mu = z.mean(axis=0)
    if z.shape[0] > 1:
        d = z - mu
        sigma = d.T @ d / (z.shape[0] - 1)
    else:
        sigma = np.zeros((z.shape[1], z.shape[1]))
    sigma = 0.5 * (sigma + sigma.T) + jitter * np.eye(z.shape[1])
    return LatentStats(mu, sigma)


# --- texture decoder -----------------------------------------------------------------------

@dataclass(frozen=True)
class TextureSpec:
    latent_dim: int = 199
    base_dims: tuple[int, int, int] = (32, 32, 32)
    layers: tuple[ConvLayer, ...] = (ConvLayer(4, 4, 1), ConvLayer(8, 4, 2), ConvLayer(4, 4, 1))
    base_channels: int = 4

    def __post_init__(self):
        object.__setattr__(self, "layers", _layers(self.layers))
        object.__setattr__(self, "base_dims", tuple(int(v) for v in self.base_dims))

    @staticmethod
    def desk(latent_dim: int = 199) -> "TextureSpec":
        return TextureSpec(latent_dim=latent_dim, base_dims=(16, 16, 16))

    @property
    def output_dims(self) -> tuple[int, int, int, int]:
        up = int(np.prod([l.stride for l in self.layers]))
        return tuple(n * up for n in self.base_dims) + (self.layers[-1].channels,)


def build_texture_decoder(seed: int = 0, spec: TextureSpec | None = None):
    spec = spec or TextureSpec()
    rng = np.random.default_rng([seed, 13])
    p = ParamStore()
    n = int(np.prod(spec.base_dims)) * spec.base_channels
    p.add("fc.w", _he(rng, (spec.latent_dim, n), spec.latent_dim, 0.5))
    p.add("fc.b", np.zeros(n, np.float32))
    cin = spec.base_channels
    for i, l in enumerate(spec.layers):
        p.add(f"conv.{i}.w", _he(rng, (l.kernel,) * 3 + (cin, l.channels),
                                 l.kernel**3 * cin / l.stride**3, 0.5))
        p.add(f"conv.{i}.b", np.zeros(l.channels, np.float32))
        cin = l.channels
    return p, spec


def texture_decode(params: ParamStore, spec: TextureSpec, phi) -> Tensor:
    """Texture latent (L,) -> colour volume (H, W, D, 4) in (0, 1)."""
    phi = as_tensor(phi)
    if phi.shape != (spec.latent_dim,):
        raise ValueError(f"texture latent must have shape ({spec.latent_dim},), got {phi.shape}")
    x = de.elu(de.fully_connected(phi, params["fc.w"], params["fc.b"]))
    x = de.reshape(x, spec.base_dims + (spec.base_channels,))
    last = len(spec.layers) - 1
    for i, l in enumerate(spec.layers):
        w, b = params[f"conv.{i}.w"], params[f"conv.{i}.b"]
        # stride > 1 in this decoder enlarges the volume, so it is an up-convolution
        x = de.conv_transpose(x, w, b, l.stride) if l.stride > 1 else de.conv(x, w, b)
        x = de.sigmoid(x) if i == last else de.elu(x)
    return x


def synthetic_texture_latents(n: int, dim: int, seed: int, rank: int = 6) -> np.ndarray:
    """Random texture codes confined to a low-dimensional subspace."""
    rng = np.random.default_rng([seed, 19])
    basis = rng.normal(size=(rank, dim)) / math.sqrt(rank)
    return (rng.normal(size=(n, rank)) @ basis).astype(np.float32)
