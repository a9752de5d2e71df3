"""Named parameter storage and the Adam update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

PAPER_LR = 1e-5


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = PAPER_LR
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1, beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class ParamStore:
    """Trainable tensors by name plus per-parameter Adam moments."""

    params: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast (used for double-precision checks)."""
        out = ParamStore(step=self.step)
        for k, t in self.params.items():
            out.add(k, t.data.astype(dtype))
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}


def adam_step(store: ParamStore, cfg: AdamConfig) -> None:
    """One bias-corrected Adam update over every parameter that has a gradient."""
    store.step += 1
    t = store.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        if name not in store.m:
            store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        m, v = store.m[name], store.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        if cfg.learning_rate == 0.0:
            continue
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
        p.data -= update.astype(p.dtype, copy=False)
