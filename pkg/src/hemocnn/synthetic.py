"""Structured synthetic blood-smear images for tests and demos.

Mononuclear cells get one large round nucleus, polynuclear cells three or
four small lobes.  Both sit on a noisy pink background, with position and
size jitter.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CLASS_NAMES, INPUT_SHAPE, LabeledDataset, encode_ppm

BACKGROUND = np.array([228.0, 196.0, 206.0], dtype=np.float32)
NUCLEUS = np.array([92.0, 60.0, 140.0], dtype=np.float32)


def _disk(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def cell_image(label: int, shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    h, w, _ = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h / 2 + rng.uniform(-0.1, 0.1) * h
    cx = w / 2 + rng.uniform(-0.1, 0.1) * w
    scale = min(h, w) * rng.uniform(0.9, 1.1)
    mask = np.zeros((h, w), dtype=bool)
    if label == 0:
        mask |= _disk(yy, xx, cy, cx, 0.28 * scale)
    else:
        n = int(rng.integers(3, 5))
        phase = rng.uniform(0, 2 * np.pi)
        for k in range(n):
            a = phase + 2 * np.pi * k / n
            mask |= _disk(yy, xx, cy + 0.2 * scale * np.sin(a),
                          cx + 0.2 * scale * np.cos(a), 0.11 * scale)
    img = np.broadcast_to(BACKGROUND, (h, w, 3)).copy()
    img[mask] = NUCLEUS
    img += rng.normal(0.0, 12.0, size=img.shape).astype(np.float32)
    return np.clip(img, 0, 255).round().astype(np.float32)


def make_cells(n_per_class: int, shape: Sequence[int] = INPUT_SHAPE,
               seed: int = 0) -> LabeledDataset:
    """``n_per_class`` images of each class, interleaved 0, 1, 0, 1, ..."""
    rng = np.random.default_rng(seed)
    labels = np.tile([0, 1], n_per_class)
    images = np.stack([cell_image(int(l), shape, rng) for l in labels])
    paths = tuple(f"synthetic/{CLASS_NAMES[l]}/{i:05d}" for i, l in enumerate(labels))
    return LabeledDataset(images, labels, paths)


def write_tree(root, n_per_class: int, shape: Sequence[int] = INPUT_SHAPE, seed: int = 0,
               folders=(("LYMPHOCYTE", "MONOCYTE"), ("NEUTROPHIL", "EOSINOPHIL"))) -> Path:
    """Write a ``<root>/<FOLDER>/*.ppm`` tree, spreading each class over its folders."""
    root = Path(root)
    ds = make_cells(n_per_class, shape, seed)
    counts = {}
    for img, label in zip(ds.images, ds.labels):
        group = folders[label]
        k = counts.get(label, 0)
        counts[label] = k + 1
        d = root / group[k % len(group)]
        d.mkdir(parents=True, exist_ok=True)
        (d / f"cell_{k:05d}.ppm").write_bytes(encode_ppm(img))
    return root
