"""Declarative RenderNet layer chain, its shape ledger and JSON form.

Channel counts are stored at full scale and multiplied by ``scale`` when the
network is built, so one spec describes both the full-size and the desk
network.  Output-head channel counts (``branches``) are never scaled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConvLayer:
    channels: int
    kernel: int
    stride: int = 1


def _layers(items) -> tuple[ConvLayer, ...]:
    out = []
    for it in items:
        if isinstance(it, ConvLayer):
            out.append(it)
        elif isinstance(it, dict):
            out.append(ConvLayer(int(it["channels"]), int(it["kernel"]), int(it.get("stride", 1))))
        else:
            out.append(ConvLayer(*[int(v) for v in it]))
    return tuple(out)


@dataclass(frozen=True)
class NetworkSpec:
    scale: float = 0.25
    enc3d: tuple[ConvLayer, ...] = (ConvLayer(8, 5, 2), ConvLayer(16, 3, 2), ConvLayer(16, 3, 1))
    n_res3d: int = 4
    projection: int | None = None          # K; None -> same as the squeezed D*C
    n_res2d_pre: int = 4
    mid_conv: tuple[int, int] = (4, 32 * 8)  # (kernel, channels)
    n_res2d_post: int = 2
    upconv: tuple[ConvLayer, ...] = (ConvLayer(32 * 4, 4, 1), ConvLayer(32 * 2, 4, 2),
                                     ConvLayer(32, 4, 2), ConvLayer(16, 4, 2), ConvLayer(1, 4, 1))
    branches: dict = field(default_factory=lambda: {"normal": 3, "albedo": 1})
    input_dims: tuple[int, int, int, int] = (32, 32, 32, 1)
    dropout: float = 0.0
    res_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "enc3d", _layers(self.enc3d))
        object.__setattr__(self, "upconv", _layers(self.upconv))
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "mid_conv", tuple(int(v) for v in self.mid_conv))
        object.__setattr__(self, "branches", {str(k): int(v) for k, v in self.branches.items()})

    # -- presets --------------------------------------------------------------
    @staticmethod
    def desk(branches=None, input_dims=(32, 32, 32, 1), dropout: float = 0.2) -> "NetworkSpec":
        """Quarter-width chain for 32^3 grids; light dropout offsets the small dataset."""
        return NetworkSpec(branches=branches or {"normal": 3, "albedo": 1}, input_dims=input_dims,
                           dropout=dropout)

    @staticmethod
    def full(branches=None, input_dims=(128, 128, 128, 1)) -> "NetworkSpec":
        """Full-width chain with ten/ten/five residual blocks and dropout 0.5."""
        return NetworkSpec(scale=1.0, n_res3d=10, n_res2d_pre=10, n_res2d_post=5,
                           branches=branches or {"image": 1}, input_dims=input_dims, dropout=0.5)

    # -- derived quantities ---------------------------------------------------
    def ch(self, c: int) -> int:
        return max(1, int(round(c * self.scale)))

    @property
    def first_strided_upconv(self) -> int:
        for i, layer in enumerate(self.upconv):
            if layer.stride > 1:
                return i
        return len(self.upconv) - 1

    def shapes(self) -> dict:
        """Stride ledger: the tensor shape after every stage.  Raises SpecError."""
        h, w, d, c = self.input_dims
        if min(h, w, d, c) < 1:
            raise SpecError(f"input dims must be positive, got {self.input_dims}")
        if not self.enc3d or not self.upconv:
            raise SpecError("enc3d and upconv must be non-empty")
        if not self.branches:
            raise SpecError("at least one output branch is required")
        if not 0.0 <= self.dropout < 1.0:
            raise SpecError("dropout must lie in [0, 1)")
        ledger = {"input": (h, w, d, c)}
        for i, layer in enumerate(self.enc3d):
            if layer.kernel < 1 or layer.stride < 1:
                raise SpecError(f"enc3d[{i}] has invalid kernel/stride")
            h, w, d = (math.ceil(n / layer.stride) for n in (h, w, d))
            c = self.ch(layer.channels)
            ledger[f"enc3d.{i}"] = (h, w, d, c)
        ledger["res3d"] = (h, w, d, c)
        dc = d * c
        k = self.projection if self.projection is not None else dc
        if k < 1:
            raise SpecError("projection needs K >= 1")
        ledger["squeeze"] = (h, w, dc)
        ledger["project"] = (h, w, k)
        mid_k, mid_c = self.mid_conv
        ledger["mid"] = (h, w, self.ch(mid_c))
        c = self.ch(mid_c)
        for i, layer in enumerate(self.upconv):
            if layer.kernel < 1 or layer.stride < 1:
                raise SpecError(f"upconv[{i}] has invalid kernel/stride")
            h, w = h * layer.stride, w * layer.stride
            c = self.ch(layer.channels)
            ledger[f"upconv.{i}"] = (h, w, c)
        for name, nc in self.branches.items():
            if nc < 1:
                raise SpecError(f"branch {name!r} needs >= 1 channel")
            ledger[f"branch.{name}"] = (h, w, nc)
        return ledger

    @property
    def output_hw(self) -> tuple[int, int]:
        s = self.shapes()
        last = s[f"branch.{next(iter(self.branches))}"]
        return last[0], last[1]

    @property
    def encoder_stride(self) -> int:
        return math.prod(layer.stride for layer in self.enc3d)

    @property
    def upsample_ratio(self) -> float:
        """Output pixels per input voxel along H and W."""
        return math.prod(layer.stride for layer in self.upconv) / self.encoder_stride

    def receptive_radius(self) -> float:
        """Conservative one-sided receptive radius, in input voxels, of one output pixel."""
        r, jump = 0.0, 1.0
        for layer in self.enc3d:
            r += (layer.kernel // 2) * jump
            jump *= layer.stride
        r += 2 * self.n_res3d * (self.res_kernel // 2) * jump
        r += 2 * self.n_res2d_pre * (self.res_kernel // 2) * jump
        r += (self.mid_conv[0] // 2) * jump
        r += 2 * self.n_res2d_post * (self.res_kernel // 2) * jump
        for layer in self.upconv:
            if layer.stride == 1:
                r += (layer.kernel // 2) * jump
            else:
                r += (math.ceil((layer.kernel // 2) / layer.stride) + 1) * jump
                jump /= layer.stride
        return r

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc3d"] = [asdict(l) for l in self.enc3d]
        d["upconv"] = [asdict(l) for l in self.upconv]
        d["input_dims"] = list(self.input_dims)
        d["mid_conv"] = list(self.mid_conv)
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        known = {f for f in NetworkSpec.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown NetworkSpec fields {sorted(extra)}")
        return NetworkSpec(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def load(path) -> "NetworkSpec":
        try:
            return NetworkSpec.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, KeyError) as e:
            raise SpecError(f"cannot read network spec {path}: {e}") from e
