"""PNG (8-bit, via Pillow) and PFM (little-endian float32) image files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _hwc(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"image must be (H, W), (H, W, 1) or (H, W, 3), got {a.shape}")
    return a


def to_uint8(img) -> np.ndarray:
    a = _hwc(img)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img, path) -> None:
    a = to_uint8(img)
    mode = "L" if a.shape[2] == 1 else "RGB"
    Image.fromarray(a[..., 0] if mode == "L" else a, mode=mode).save(Path(path), format="PNG")


def load_png(path) -> np.ndarray:
    """Float image in [0, 1], always (H, W, C)."""
    with Image.open(Path(path)) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im, dtype=np.float32) / 255.0
    return a[..., None] if a.ndim == 2 else a


def save_pfm(img, path) -> None:
    a = _hwc(img).astype("<f4")
    h, w, c = a.shape
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom to top
    Path(path).write_bytes(header + np.ascontiguousarray(a[::-1]).tobytes())


def load_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise ValueError(f"{path}: not a PFM file")
    c = 3 if parts[0] == b"PF" else 1
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=w * h * c)
    return data.reshape(h, w, c)[::-1].astype(np.float32)


def save_image(img, path) -> None:
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        save_pfm(img, p)
    else:
        save_png(img, p)


def load_image(path) -> np.ndarray:
    p = Path(path)
    return load_pfm(p) if p.suffix.lower() == ".pfm" else load_png(p)
