"""Portable checkpoint files.

Layout (little-endian)::

    b"BCM1"                magic
    u32                    format version (1)
    u64                    header length in bytes
    header                 UTF-8 JSON: input_shape, seed, class_names, layers,
                           params (name, shape, offset into the payload)
    payload                float32 parameters in manifest order
    u32                    CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .layers import layer_from_config
from .model import SequentialModel

MAGIC = b"BCM1"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")


def dumps(model: SequentialModel) -> bytes:
    params, offset, chunks = [], 0, []
    for name, p, _ in model.parameters():
        raw = np.ascontiguousarray(p, dtype="<f4").tobytes()
        params.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = dict(model.config(), params=params)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + _CRC.pack(zlib.crc32(body))


def save(model: SequentialModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def _parse(blob: bytes):
    if len(blob) < _PREFIX.size + _CRC.size:
        raise FormatError("checkpoint truncated: shorter than its fixed header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    body, (crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch: checkpoint is corrupt or truncated")
    start = _PREFIX.size
    if start + hlen > len(body):
        raise FormatError("header length exceeds file size")
    try:
        header = json.loads(body[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    payload = body[start + hlen:]
    return header, payload


def _tensors(header: dict, payload: bytes) -> dict:
    out, end = {}, 0
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        lo, hi = entry["offset"], entry["offset"] + 4 * count
        if hi > len(payload):
            raise FormatError(f"parameter {entry['name']} extends past the payload")
        out[entry["name"]] = np.frombuffer(payload, "<f4", count, lo).reshape(entry["shape"])
        end = max(end, hi)
    if end != len(payload):
        raise FormatError(f"payload has {len(payload) - end} unexpected trailing bytes")
    return out


def _assign(model: SequentialModel, tensors: dict) -> None:
    expected = {name: p.shape for name, p, _ in model.parameters()}
    got = {name: t.shape for name, t in tensors.items()}
    if expected != got:
        raise FormatError(f"parameter manifest does not match the architecture: "
                          f"expected {expected}, found {got}")
    for layer in model.layers:
        for key in layer.params:
            layer.params[key] = tensors[f"{layer.name}/{key}"].astype(model.dtype)
        layer.zero_grad()


def loads(blob: bytes) -> SequentialModel:
    header, payload = _parse(blob)
    try:
        layers = [layer_from_config(l["kind"], l["hyper"]) for l in header["layers"]]
        model = SequentialModel(layers, header["input_shape"], header["seed"],
                                class_names=tuple(header["class_names"]))
        tensors = _tensors(header, payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from exc
    _assign(model, tensors)
    return model


def load(path) -> SequentialModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(blob)


def load_weights(model: SequentialModel, path) -> SequentialModel:
    """Load parameters into an existing model whose architecture must match."""
    header, payload = _parse(Path(path).read_bytes())
    mine = model.config()
    for key in ("input_shape", "layers"):
        if header.get(key) != mine[key]:
            raise FormatError(f"architecture mismatch in {key!r}")
    _assign(model, _tensors(header, payload))
    return model
