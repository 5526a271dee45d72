"""Binary tensor container (``.lftc``).

Layout, all integers little-endian::

    b"LFTC"            4-byte magic
    0x01               1-byte version
    uint32             manifest length N in bytes
    N bytes            UTF-8 JSON manifest
    payload            tensors back to back, row-major IEEE-754 little-endian

The manifest is ``{"entries": [...], "loss": ...}``, serialised with sorted
keys and no whitespace. Each entry carries ``name, dtype (f32|f64), shape,
byte_offset (from the start of the payload), role
(weight|bias|mask|codebook), layer_index, activation``. Entries are ordered
by ``(layer_index, role)``. f32 tensors are narrowed with round-to-nearest-even
on save and widened exactly on load.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError, SchemaError, ValidationError
from .net import ACTIVATIONS, LOSSES, Layer, NetworkModel

MAGIC = b"LFTC"
VERSION = 1
HEADER = struct.Struct("<4sBI")
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
ROLES = ("weight", "bias", "mask", "codebook")


@dataclass
class TensorEntry:
    name: str
    role: str
    layer_index: int
    data: np.ndarray
    activation: str = "identity"
    dtype: str = "f64"


def atomic_write(path, data: bytes | str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(entries: list[TensorEntry], loss: str | None = None) -> bytes:
    ordered = sorted(entries, key=lambda e: (e.layer_index, e.role))
    manifest, chunks, offset = [], [], 0
    for e in ordered:
        if e.dtype not in DTYPES:
            raise ValidationError(f"unsupported dtype {e.dtype!r}")
        if e.role not in ROLES:
            raise ValidationError(f"unsupported role {e.role!r}")
        arr = np.ascontiguousarray(np.asarray(e.data, dtype=np.float64).astype(DTYPES[e.dtype]))
        raw = arr.tobytes(order="C")
        manifest.append({
            "name": e.name,
            "dtype": e.dtype,
            "shape": list(arr.shape),
            "byte_offset": offset,
            "role": e.role,
            "layer_index": e.layer_index,
            "activation": e.activation,
        })
        chunks.append(raw)
        offset += len(raw)
    doc = {"entries": manifest, "loss": loss}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def decode(raw: bytes) -> tuple[list[TensorEntry], str | None]:
    if len(raw) < HEADER.size:
        raise FormatError("file too short for a container header")
    magic, version, length = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("bad magic, not a tensor container")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    start = HEADER.size
    if start + length > len(raw):
        raise CorruptionError("manifest runs past the end of the file")
    try:
        doc = json.loads(raw[start:start + length].decode("utf-8"))
        records = doc["entries"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    payload = memoryview(raw)[start + length:]
    spans, entries = [], []
    for rec in records:
        try:
            dtype = DTYPES[rec["dtype"]]
            shape = tuple(int(s) for s in rec["shape"])
            offset = int(rec["byte_offset"])
            role = rec["role"]
            layer_index = int(rec["layer_index"])
            name = rec["name"]
            activation = rec.get("activation", "identity")
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad manifest entry {rec!r}") from exc
        if role not in ROLES:
            raise SchemaError(f"unknown role {role!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise CorruptionError(f"tensor {name!r} lies outside the payload")
        spans.append((offset, offset + nbytes, name))
        data = np.frombuffer(payload[offset:offset + nbytes], dtype=dtype).reshape(shape)
        entries.append(TensorEntry(name, role, layer_index, data.astype(np.float64),
                                   activation, rec["dtype"]))
    spans.sort()
    for (_, end, a), (begin, _, b) in zip(spans, spans[1:]):
        if begin < end:
            raise CorruptionError(f"tensors {a!r} and {b!r} overlap")
    return entries, doc.get("loss")


def model_entries(model: NetworkModel, dtype: str = "f64", masks=None,
                  codebooks=None) -> list[TensorEntry]:
    out = []
    for k, layer in enumerate(model.layers):
        act = layer.activation
        out.append(TensorEntry(f"layer{k}.weight", "weight", k, layer.weight, act, dtype))
        out.append(TensorEntry(f"layer{k}.bias", "bias", k, layer.bias, act, dtype))
        if masks is not None and masks.get(k) is not None:
            out.append(TensorEntry(f"layer{k}.mask", "mask", k,
                                   np.asarray(masks[k], dtype=np.float64), act, dtype))
        if codebooks is not None and codebooks.get(k) is not None:
            out.append(TensorEntry(f"layer{k}.codebook", "codebook", k,
                                   np.asarray(codebooks[k], dtype=np.float64), act, "f64"))
    return out


def save_model(model: NetworkModel, path, dtype: str = "f64", masks=None, codebooks=None):
    atomic_write(path, encode(model_entries(model, dtype, masks, codebooks), model.loss))


def entries_to_model(entries: list[TensorEntry], loss: str | None) -> NetworkModel:
    by_layer: dict[int, dict[str, TensorEntry]] = {}
    for e in entries:
        by_layer.setdefault(e.layer_index, {})[e.role] = e
    if not by_layer:
        raise SchemaError("container holds no layers")
    if sorted(by_layer) != list(range(len(by_layer))):
        raise SchemaError("layer indices are not contiguous from 0")
    layers = []
    for k in range(len(by_layer)):
        roles = by_layer[k]
        if "weight" not in roles:
            raise SchemaError(f"layer {k} has no weight")
        if "bias" not in roles:
            raise SchemaError(f"layer {k} has no bias")
        w, b = roles["weight"], roles["bias"]
        if w.activation not in ACTIVATIONS:
            raise SchemaError(f"layer {k} has unknown activation {w.activation!r}")
        if w.data.ndim != 2 or b.data.shape != (w.data.shape[1],):
            raise SchemaError(f"layer {k} has inconsistent weight/bias shapes")
        layers.append(Layer(w.data.copy(), b.data.copy(), w.activation))
    if loss is not None and loss not in LOSSES:
        raise SchemaError(f"unknown loss {loss!r}")
    try:
        return NetworkModel(layers, loss or "cross_entropy_softmax")
    except ValidationError as exc:
        raise SchemaError(str(exc)) from exc


def load_container(path) -> tuple[list[TensorEntry], str | None]:
    return decode(Path(path).read_bytes())


def load_model(path) -> NetworkModel:
    return entries_to_model(*load_container(path))
