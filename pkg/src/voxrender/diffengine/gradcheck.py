"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-6,
               precision: str = "double", probes: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` maps the input tensors to a scalar tensor.  Every coordinate is
    checked unless ``probes`` is given, in which case that many randomly
    chosen coordinates per input are checked.  Inputs are cast in place to
    the requested precision before checking.
    """
    dtype = np.float64 if precision == "double" else np.float32
    for t in inputs:
        t.data = t.data.astype(dtype)
        t.requires_grad = True
        t.grad = None
    loss = f(*inputs)
    if loss.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if probes is None or probes >= flat.size:
            idx = range(flat.size)
        else:
            idx = rng.choice(flat.size, size=probes, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data)
            flat[i] = orig - h
            fm = float(f(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            worst = max(worst, _rel_err(float(ga.reshape(-1)[i]), num))
    return worst
