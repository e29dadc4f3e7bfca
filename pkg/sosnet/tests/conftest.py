"""Shared builders for toy record datasets."""

import json
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from sosnet.container import write_record


def phantom_map(rng: np.random.Generator,
                shape=(384, 384)) -> np.ndarray:
    """Uniform background plus one soft-edged elliptical inclusion."""
    hh, ww = shape
    yy, xx = np.mgrid[0:hh, 0:ww]
    bg = rng.uniform(1420.0, 1580.0)
    cy, cx = rng.uniform(0.2, 0.8, 2) * (hh, ww)
    ry, rx = rng.uniform(0.08, 0.2, 2) * (hh, ww)
    amp = rng.uniform(20.0, 60.0) * rng.choice([-1.0, 1.0])
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return (bg + amp / (1.0 + np.exp(4.0 * (d - 1.0)))).astype(np.float32)


def informative_rf(sos: np.ndarray, in_shape, rng: np.random.Generator,
                   noise: float = 0.3) -> np.ndarray:
    """Channel-data stand-in that encodes the map at its own scale."""
    t = torch.from_numpy((sos - 1500.0) / 100.0).reshape(1, 1, *sos.shape)
    x = F.interpolate(t, size=tuple(in_shape), mode="bilinear",
                      align_corners=False)
    out = x[0, 0].numpy() + noise * rng.standard_normal(in_shape)
    return out.astype(np.float32)


def write_toy_dataset(root: Path, n: int, in_shape=(128, 1024), seed=0,
                      n_train=None, resolution=1e-4) -> Path:
    """Write n informative records plus a manifest splitting them."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    if n_train is None:
        n_train = int(math.floor(0.9 * n))
    for i in range(n):
        sos = phantom_map(rng)
        rf = informative_rf(sos, in_shape, rng)
        name = f"rec_{i:06d}.paus"
        meta = {"record": {"id": i},
                "rf": {"sampling_rate": 20e6, "t0": 0.0},
                "sos": {"resolution": resolution, "origin": [0.0, 0.0]}}
        write_record(root / name, {"rf": rf, "sos": sos}, meta)
        rows.append({"file": name,
                     "split": "train" if i < n_train else "valid"})
    manifest = {"version": 1, "seed": seed, "train_fraction": 0.9,
                "records": rows}
    (root / "manifest.json").write_text(json.dumps(manifest))
    return root
