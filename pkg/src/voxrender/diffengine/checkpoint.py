"""Parameter checkpoints: a JSON manifest plus one little-endian float32 blob per array."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import ParamStore

FORMAT = "voxrender-ckpt-1"


def _write_blob(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(path: Path, shape) -> np.ndarray:
    raw = path.read_bytes()
    n = int(np.prod(shape)) if shape else 1
    if len(raw) != 4 * n:
        raise ValueError(f"{path}: expected {4 * n} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def save_checkpoint(store: ParamStore, directory, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, t) in enumerate(store.items()):
        fname = f"p{i:04d}.f32"
        _write_blob(d / fname, t.data)
        entry = {"name": name, "shape": list(t.shape), "file": fname}
        if name in store.m:
            _write_blob(d / f"m{i:04d}.f32", store.m[name])
            _write_blob(d / f"v{i:04d}.f32", store.v[name])
            entry["adam"] = [f"m{i:04d}.f32", f"v{i:04d}.f32"]
        entries.append(entry)
    manifest = {"format": FORMAT, "adam_step": store.step, "params": entries}
    if extra:
        manifest["extra"] = extra
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return d


def load_checkpoint(directory) -> tuple[ParamStore, dict]:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable checkpoint at {d}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{d}: not a {FORMAT} checkpoint")
    store = ParamStore(step=int(manifest["adam_step"]))
    for e in manifest["params"]:
        shape = tuple(e["shape"])
        store.add(e["name"], _read_blob(d / e["file"], shape))
        if "adam" in e:
            store.m[e["name"]] = _read_blob(d / e["adam"][0], shape)
            store.v[e["name"]] = _read_blob(d / e["adam"][1], shape)
    return store, manifest.get("extra", {})
