"""RenderNet: 3-D encoder, projection unit, 2-D decoder with output branches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import diffengine as de
from ..diffengine import ParamStore, Tensor, as_tensor
from ..refshade import LightSpec
from ..voxgrid import Pose, as_grid, rigid_transform_tensor
from .spec import NetworkSpec, SpecError

PRELU_INIT = 0.25


@dataclass
class RenderInputs:
    grid: np.ndarray
    pose: Pose = Pose()
    light: LightSpec | None = None
    texture_volume: np.ndarray | None = None

    def __post_init__(self):
        self.grid = as_grid(self.grid)
        if self.texture_volume is not None:
            self.texture_volume = as_grid(self.texture_volume)
            if self.texture_volume.shape[:3] != self.grid.shape[:3]:
                raise ValueError(f"texture volume dims {self.texture_volume.shape[:3]} "
                                 f"differ from grid dims {self.grid.shape[:3]}")

    def volume(self) -> np.ndarray:
        if self.texture_volume is None:
            return self.grid
        return np.concatenate([self.grid, self.texture_volume.astype(self.grid.dtype)], axis=-1)


# --- parameter construction -------------------------------------------------------

def _he(rng, shape, fan_in, gain=1.0):
    return (rng.normal(size=shape) * gain * math.sqrt(2.0 / fan_in)).astype(np.float32)


def add_conv(store: ParamStore, rng, name: str, k: int, nd: int, cin: int, cout: int,
             act: bool = True, transpose: bool = False, stride: int = 1, gain: float = 1.0):
    ks = (k,) * nd
    fan_in = k**nd * cin / (stride**nd if transpose else 1)
    store.add(f"{name}.w", _he(rng, ks + (cin, cout), fan_in, gain))
    store.add(f"{name}.b", np.zeros(cout, np.float32))
    if act:
        store.add(f"{name}.a", np.full(cout, PRELU_INIT, np.float32))


def add_res(store: ParamStore, rng, name: str, k: int, nd: int, c: int):
    add_conv(store, rng, f"{name}.c1", k, nd, c, c)
    # second conv starts small so deep residual stacks begin close to identity
    add_conv(store, rng, f"{name}.c2", k, nd, c, c, act=False, gain=0.1)


def build(spec: NetworkSpec, seed: int = 0) -> ParamStore:
    """Create and initialize every RenderNet parameter (deterministic per seed)."""
    ledger = spec.shapes()
    rng = np.random.default_rng([seed, 7])
    store = ParamStore()
    cin = spec.input_dims[3]
    for i, layer in enumerate(spec.enc3d):
        cout = spec.ch(layer.channels)
        add_conv(store, rng, f"enc3d.{i}", layer.kernel, 3, cin, cout)
        cin = cout
    for i in range(spec.n_res3d):
        add_res(store, rng, f"res3d.{i}", spec.res_kernel, 3, cin)
    h, w, dc = ledger["squeeze"]
    k = ledger["project"][2]
    store.add("proj.w", _he(rng, (k, dc), dc))
    store.add("proj.b", np.zeros(k, np.float32))
    store.add("proj.a", np.full(k, PRELU_INIT, np.float32))
    for i in range(spec.n_res2d_pre):
        add_res(store, rng, f"res2d_pre.{i}", spec.res_kernel, 2, k)
    mid_k, mid_c = spec.mid_conv
    add_conv(store, rng, "mid", mid_k, 2, k, spec.ch(mid_c))
    cin = spec.ch(mid_c)
    for i in range(spec.n_res2d_post):
        add_res(store, rng, f"res2d_post.{i}", spec.res_kernel, 2, cin)
    split = spec.first_strided_upconv
    for i, layer in enumerate(spec.upconv[:split]):
        cout = spec.ch(layer.channels)
        add_conv(store, rng, f"up.{i}", layer.kernel, 2, cin, cout,
                 transpose=layer.stride > 1, stride=layer.stride)
        cin = cout
    shared_c = cin
    for name, nc in spec.branches.items():
        cin = shared_c
        last = len(spec.upconv) - 1
        for i in range(split, len(spec.upconv)):
            layer = spec.upconv[i]
            cout = nc if i == last else spec.ch(layer.channels)
            add_conv(store, rng, f"branch.{name}.up.{i}", layer.kernel, 2, cin, cout,
                     act=i != last, transpose=layer.stride > 1, stride=layer.stride,
                     gain=1.0 if i != last else 0.5)
            cin = cout
    return store


# --- layers -----------------------------------------------------------------------

def _conv_layer(p: ParamStore, name: str, x: Tensor, stride: int = 1, transpose: bool = False,
                act: bool = True) -> Tensor:
    w, b = p[f"{name}.w"], p[f"{name}.b"]
    y = de.conv_transpose(x, w, b, stride) if transpose else de.conv(x, w, b, stride)
    return de.prelu(y, p[f"{name}.a"]) if act else y


def _res_block(p: ParamStore, name: str, x: Tensor) -> Tensor:
    y = _conv_layer(p, f"{name}.c1", x)
    return x + _conv_layer(p, f"{name}.c2", y, act=False)


def squeeze(features: Tensor) -> Tensor:
    """(..., H, W, D, C) -> (..., H, W, D*C) with channel index d*C + c."""
    s = features.shape
    return de.reshape(features, s[:-2] + (s[-2] * s[-1],))


def project(features, weights, bias, slope) -> Tensor:
    """Projection unit: squeeze, per-pixel affine map over D*C, PReLU.

    ``weights`` is (K, D*C).  The affine map is applied as a 1x1 convolution.
    """
    features, weights, bias, slope = (as_tensor(v) for v in (features, weights, bias, slope))
    v = squeeze(features)
    k, dc = weights.shape
    if v.shape[-1] != dc:
        raise ValueError(f"projection weights expect D*C = {dc}, features give {v.shape[-1]}")
    if bias.shape != (k,):
        raise ValueError(f"projection bias must be ({k},), got {bias.shape}")
    kernel = de.reshape(de.transpose(weights, (1, 0)), (1, 1, dc, k))
    return de.prelu(de.conv(v, kernel, bias), slope)


def _drop(x: Tensor, spec: NetworkSpec, training: bool, rng) -> Tensor:
    return de.dropout(x, spec.dropout, training, rng)


def forward_camera(params: ParamStore, spec: NetworkSpec, volume, training: bool = False,
                   rng: np.random.Generator | None = None,
                   branches=None) -> dict[str, Tensor]:
    """Run the network on camera-space volumes (N, H, W, D, C) or (H, W, D, C).

    H and W may differ from the spec (fully convolutional); D and C may not,
    since the projection unit's width is D*C.
    """
    x = as_tensor(volume)
    single = x.ndim == 4
    if single:
        x = de.reshape(x, (1,) + x.shape)
    if x.shape[-1] != spec.input_dims[3]:
        raise ValueError(f"network expects {spec.input_dims[3]} input channels, got {x.shape[-1]} "
                         "(texture volume missing or extra?)")
    if x.shape[3] != spec.input_dims[2]:
        raise ValueError(f"network expects depth {spec.input_dims[2]}, got {x.shape[3]}")
    for i, layer in enumerate(spec.enc3d):
        x = _drop(_conv_layer(params, f"enc3d.{i}", x, layer.stride), spec, training, rng)
    for i in range(spec.n_res3d):
        x = _res_block(params, f"res3d.{i}", x)
    x = project(x, params["proj.w"], params["proj.b"], params["proj.a"])
    x = _drop(x, spec, training, rng)
    for i in range(spec.n_res2d_pre):
        x = _res_block(params, f"res2d_pre.{i}", x)
    x = _drop(_conv_layer(params, "mid", x), spec, training, rng)
    for i in range(spec.n_res2d_post):
        x = _res_block(params, f"res2d_post.{i}", x)
    split = spec.first_strided_upconv
    for i, layer in enumerate(spec.upconv[:split]):
        x = _drop(_conv_layer(params, f"up.{i}", x, layer.stride, layer.stride > 1),
                  spec, training, rng)
    out = {}
    last = len(spec.upconv) - 1
    for name in (branches or spec.branches):
        y = x
        for i in range(split, len(spec.upconv)):
            layer = spec.upconv[i]
            y = _conv_layer(params, f"branch.{name}.up.{i}", y, layer.stride, layer.stride > 1,
                            act=i != last)
            y = de.sigmoid(y) if i == last else _drop(y, spec, training, rng)
        out[name] = de.reshape(y, y.shape[1:]) if single else y
    return out


# --- shading head -----------------------------------------------------------------

def light_tensors(light, dtype=np.float64) -> tuple[Tensor, Tensor, Tensor]:
    if isinstance(light, LightSpec):
        return (Tensor(light.unit_direction().astype(dtype)), Tensor(np.asarray(light.ambient, dtype)),
                Tensor(np.asarray(light.intensity, dtype)))
    d, a, i = light
    return as_tensor(d), as_tensor(a), as_tensor(i)


def shade_head(normal_branch, albedo_branch, light) -> Tensor:
    """I = A * clamp(intensity * (l . n + a), 0, 1) with n decoded from RGB.

    ``light`` is a LightSpec or a (direction, ambient, intensity) tensor triple
    so the lighting can itself be optimized.
    """
    nrgb, alb = as_tensor(normal_branch), as_tensor(albedo_branch)
    if nrgb.shape[:-1] != alb.shape[:-1]:
        raise ValueError(f"branches not aligned: {nrgb.shape} vs {alb.shape}")
    l, amb, inten = light_tensors(light, nrgb.dtype)
    n = nrgb * 2.0 - 1.0
    n = n / de.sqrt((n * n).sum(axis=-1, keepdims=True) + 1e-8)
    if l.ndim == 2:
        # one light per batch sample: (N, 3) directions, (N,) ambient and intensity
        l = de.reshape(l, (l.shape[0], 1, 1, 3))
        amb = de.reshape(amb, (-1, 1, 1, 1))
        inten = de.reshape(inten, (-1, 1, 1, 1))
    ndotl = (n * l).sum(axis=-1, keepdims=True)
    s = de.clamp(inten * (ndotl + amb), 0.0, 1.0)
    return alb * s


# --- convenience ---------------------------------------------------------------

def render_tensor(params: ParamStore, spec: NetworkSpec, grid, azimuth, elevation,
                  scale: float = 1.0, light=None, training: bool = False, rng=None,
                  branches=None) -> dict[str, Tensor]:
    """Differentiable end-to-end render from a world-space grid and pose angles."""
    cam = rigid_transform_tensor(as_tensor(grid), as_tensor(azimuth), as_tensor(elevation), scale)
    out = forward_camera(params, spec, cam, training, rng, branches)
    if light is not None and "normal" in out and "albedo" in out:
        out["shaded"] = shade_head(out["normal"], out["albedo"], light)
    return out


def forward(params: ParamStore, spec: NetworkSpec, inputs: RenderInputs) -> dict[str, np.ndarray]:
    """Inference: rigid transform, network, and the shading head when a light is given."""
    vol = inputs.volume().astype(np.float32)
    if vol.shape[-1] != spec.input_dims[3]:
        raise ValueError(f"spec expects {spec.input_dims[3]} input channels, got {vol.shape[-1]} "
                         "(texture_volume missing?)")
    pose = inputs.pose
    with de.no_grad():
        out = render_tensor(params, spec, Tensor(vol), Tensor(np.float32(pose.azimuth)),
                            Tensor(np.float32(pose.elevation)), pose.scale, inputs.light)
    return {k: v.data for k, v in out.items()}


__all__ = ["RenderInputs", "SpecError", "build", "project", "squeeze", "forward_camera",
           "forward", "render_tensor", "shade_head", "light_tensors", "add_conv", "add_res"]
