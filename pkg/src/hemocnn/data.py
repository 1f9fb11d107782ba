"""Dataset ingestion: PPM decoding, bilinear resizing, folder-to-class mapping,
stratified splitting and minibatching.

The on-disk layout is one directory per cell type::

    <root>/TRAIN/EOSINOPHIL/*.ppm
    <root>/TRAIN/LYMPHOCYTE/*.ppm
    ...

and the four white-blood-cell types are grouped into two classes,
mononuclear (0) and polynuclear (1).
"""
from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, DecodeError, ShapeError

log = logging.getLogger(__name__)

CLASS_NAMES: Tuple[str, str] = ("MONONUCLEAR", "POLYNUCLEAR")
INPUT_SHAPE: Tuple[int, int, int] = (120, 160, 3)

DEFAULT_FOLDERS: Dict[str, str] = {
    "LYMPHOCYTE": "MONONUCLEAR",
    "MONOCYTE": "MONONUCLEAR",
    "NEUTROPHIL": "POLYNUCLEAR",
    "EOSINOPHIL": "POLYNUCLEAR",
    # already-grouped layouts
    "MONONUCLEAR": "MONONUCLEAR",
    "POLYNUCLEAR": "POLYNUCLEAR",
}

PIL_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"}
PPM_SUFFIXES = {".ppm", ".pnm"}


def worker_count() -> int:
    """Thread cap from ``HEMOCNN_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("HEMOCNN_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HEMOCNN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"HEMOCNN_THREADS must be >= 1, got {n}")
    return n


@dataclass(frozen=True)
class ClassMapping:
    folders: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_FOLDERS))
    class_names: Tuple[str, str] = CLASS_NAMES

    def __post_init__(self):
        folders = {k.upper(): v.upper() for k, v in self.folders.items()}
        for folder, cls in folders.items():
            if cls not in self.class_names:
                raise ConfigError(f"folder {folder!r} maps to unknown class {cls!r}; "
                                  f"expected one of {self.class_names}")
        object.__setattr__(self, "folders", folders)

    @classmethod
    def from_json(cls, path) -> "ClassMapping":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read class mapping {path}: {exc}") from exc
        if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
            raise ConfigError(f"class mapping {path} must be an object of folder -> class name")
        return cls(raw)

    def index_of(self, folder: str) -> int:
        try:
            return self.class_names.index(self.folders[folder.upper()])
        except KeyError:
            raise ConfigError(f"folder {folder!r} has no class mapping") from None


@dataclass
class LabeledDataset:
    images: np.ndarray          # [n, h, w, 3] float32, values in [0, 255]
    labels: np.ndarray          # [n] int, 0 or 1
    paths: Tuple[str, ...] = ()
    class_names: Tuple[str, str] = CLASS_NAMES

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"images {self.images.shape} and labels {self.labels.shape} "
                             "disagree")
        if self.labels.size and not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0 or 1")
        if not self.paths:
            self.paths = tuple(f"<sample {i}>" for i in range(len(self.labels)))
        self.paths = tuple(self.paths)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def onehot(self) -> np.ndarray:
        return one_hot(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx],
                              tuple(self.paths[i] for i in idx), self.class_names)

    def class_counts(self) -> Dict[str, int]:
        return {name: int(np.sum(self.labels == i)) for i, name in enumerate(self.class_names)}


def one_hot(labels: np.ndarray, classes: int = 2, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


# ---------------------------------------------------------------------------
# decoding

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary (P6) PPM with maxval 255 into a float32 ``[h, w, 3]`` array."""
    pos = 0

    def token(name: str) -> bytes:
        nonlocal pos
        pos = _TOKEN.match(data, pos).end()
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DecodeError(f"PPM {name}: missing")
        return data[start:pos]

    def number(name: str) -> int:
        raw = token(name)
        if not raw.isdigit():
            raise DecodeError(f"PPM {name}: not a number ({raw[:16]!r})")
        return int(raw)

    magic = data[:2]
    if magic != b"P6":
        raise DecodeError(f"PPM magic: unsupported {magic!r}, expected b'P6'")
    pos = 2
    width, height, maxval = number("width"), number("height"), number("maxval")
    if width < 1 or height < 1:
        raise DecodeError(f"PPM width/height: must be positive, got {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"PPM maxval: only 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DecodeError("PPM payload: missing separator after header")
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise DecodeError(f"PPM payload: truncated, expected {need} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).astype(np.float32)


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode ``[h, w, 3]`` values (rounded, clipped to 0..255) as binary PPM."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"PPM images are [h, w, 3], got {img.shape}")
    h, w, _ = img.shape
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def decode_image(path) -> np.ndarray:
    """Decode ``path`` by suffix: PPM natively, JPEG/PNG/BMP through Pillow."""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix in PPM_SUFFIXES:
            return decode_ppm(path.read_bytes())
        if suffix in PIL_SUFFIXES:
            try:
                from PIL import Image
            except ImportError:
                raise DecodeError(f"{path}: decoding {suffix} files needs Pillow") from None
            with Image.open(path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.float32)
    except DecodeError as exc:
        raise DecodeError(f"{path}: {exc}") from None
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    raise DecodeError(f"{path}: unsupported image type {suffix!r}")


def resize_bilinear(img: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Bilinear resize with half-pixel centres (``align_corners=False``).

    Interpolation is done as ``a + f*(b - a)`` so constant regions stay
    exactly constant.
    """
    th, tw = int(target[0]), int(target[1])
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected a non-empty [h, w, c] image, got {img.shape}")
    if th < 1 or tw < 1:
        raise ShapeError(f"target size must be positive, got {th}x{tw}")
    img = img.astype(np.float32, copy=False)
    h, w, _ = img.shape
    if (h, w) == (th, tw):
        return img.copy()

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(np.float32)

    r0, r1, fr = axis_weights(h, th)
    c0, c1, fc = axis_weights(w, tw)
    top, bottom = img[r0], img[r1]
    rows = top + fr[:, None, None] * (bottom - top)
    left, right = rows[:, c0], rows[:, c1]
    out = left + fc[None, :, None] * (right - left)
    return np.clip(out, 0, 255)


# ---------------------------------------------------------------------------
# directory ingestion


def _load_one(path: Path, target: Tuple[int, int, int]) -> np.ndarray:
    img = decode_image(path)
    if img.shape[2] != target[2]:
        raise DecodeError(f"{path}: expected {target[2]} channels, got {img.shape[2]}")
    return resize_bilinear(img, target[:2])


def load_dataset(root, mapping: Optional[ClassMapping] = None,
                 target_shape: Sequence[int] = INPUT_SHAPE,
                 workers: Optional[int] = None) -> LabeledDataset:
    """Decode, resize and label every image under ``root/<FOLDER>/``.

    Files are ordered lexicographically by path.  Any unmapped folder or
    undecodable file aborts the load.
    """
    root = Path(root)
    mapping = mapping or ClassMapping()
    target = tuple(int(d) for d in target_shape)
    if len(target) != 3 or target[2] != 3:
        raise ShapeError(f"target shape must be (h, w, 3), got {target}")
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")

    files, labels = [], []
    for folder in sorted(p for p in root.iterdir() if not p.name.startswith(".")):
        if not folder.is_dir():
            log.warning("ignoring stray file %s", folder)
            continue
        label = mapping.index_of(folder.name)
        for f in sorted(p for p in folder.rglob("*") if p.is_file()
                        and not p.name.startswith(".")):
            files.append(f)
            labels.append(label)
    if not files:
        raise DataError(f"no images found under {root}")

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(lambda p: _load_one(p, target), files))
    else:
        images = [_load_one(p, target) for p in files]

    ds = LabeledDataset(np.stack(images), np.array(labels), tuple(str(p) for p in files),
                        mapping.class_names)
    log.info("loaded %d images from %s: %s", len(ds), root, ds.class_counts())
    return ds


def split_stratified(d: LabeledDataset, val_fraction: float,
                     seed: int = 42) -> Tuple[LabeledDataset, LabeledDataset]:
    """Seeded per-class split; each class contributes ``round(val_fraction * n)``."""
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"validation fraction must be in [0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for cls in range(len(d.class_names)):
        idx = np.flatnonzero(d.labels == cls)
        if val_fraction > 0 and idx.size == 0:
            raise DataError(f"class {d.class_names[cls]} has no samples to split")
        idx = rng.permutation(idx)
        n_val = int(np.floor(val_fraction * idx.size + 0.5))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return (d.subset(np.sort(np.concatenate(train_idx))),
            d.subset(np.sort(np.concatenate(val_idx))))


def batches(d: LabeledDataset, batch_size: int, seed: int = 42, epoch: int = 1,
            shuffle: bool = True) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, one_hot_labels)``; the order is reshuffled per ``(seed, epoch)``
    and the last batch may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(d))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(d))
    targets = d.onehot()
    for start in range(0, len(d), batch_size):
        idx = order[start:start + batch_size]
        yield d.images[idx], targets[idx]
