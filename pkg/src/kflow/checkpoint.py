"""Versioned model container: magic tag, JSON metadata, raw float64 blob.

File layout: 8-byte magic "KFLOWCK1", uint64 LE metadata length, UTF-8 JSON
metadata, then all parameter tensors raveled row-major as little-endian
float64 in declaration order. The metadata records a CRC-32 of the blob.
"""

from __future__ import annotations

import json
import os
import struct
import time
import zlib
from dataclasses import asdict

import numpy as np

from .cfm import VectorFieldModel
from .koopman import N_PRESERVED, KoopmanModel
from .ndcore import Tensor
from .nn import MlpSpec

MAGIC = b"KFLOWCK1"


class CheckpointError(IOError):
    """Unreadable, corrupted, or wrong-kind checkpoint file."""


def _timestamp() -> str:
    # honors SOURCE_DATE_EPOCH so identical runs can produce identical files
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def save_checkpoint(path, kind: str, tensors: list[Tensor], meta: dict | None = None) -> None:
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in tensors)
    header = {
        "kind": kind,
        "layout": [list(t.data.shape) for t in tensors],
        "created": _timestamp(),
        "crc32": zlib.crc32(blob),
    }
    if meta:
        header.update(meta)
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        fh.write(blob)


def load_checkpoint(path) -> tuple[dict, list[np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a recognized checkpoint (bad magic tag)")
    (meta_len,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    meta_start = len(MAGIC) + 8
    try:
        meta = json.loads(raw[meta_start:meta_start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata: {exc}") from exc
    blob = raw[meta_start + meta_len:]
    if zlib.crc32(blob) != meta.get("crc32"):
        raise CheckpointError(f"{path}: blob checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    tensors, offset = [], 0
    for shape in meta["layout"]:
        size = int(np.prod(shape)) if shape else 1
        tensors.append(flat[offset:offset + size].reshape(shape))
        offset += size
    if offset != flat.size:
        raise CheckpointError(f"{path}: blob size does not match layout")
    return meta, tensors


def _spec_dict(spec: MlpSpec) -> dict:
    return asdict(spec)


def _spec_from(d: dict) -> MlpSpec:
    return MlpSpec(**d)


def save_vector_field(path, model: VectorFieldModel, meta: dict | None = None) -> None:
    extra = {"spec": _spec_dict(model.spec)}
    if meta:
        extra.update(meta)
    save_checkpoint(path, "vector_field", model.params, extra)


def load_vector_field(path) -> tuple[VectorFieldModel, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "vector_field":
        raise CheckpointError(f"{path}: expected a vector_field checkpoint, got {meta.get('kind')!r}")
    model = VectorFieldModel(spec=_spec_from(meta["spec"]), params=[Tensor(a) for a in arrays])
    return model, meta


def save_koopman(path, model: KoopmanModel, meta: dict | None = None) -> None:
    extra = {
        "p_learned": model.p_learned,
        "p_total": model.p_total,
        "observable_layout": "x1,x2,t,1,g",
        "encoder_spec": _spec_dict(model.encoder_spec) if model.encoder_spec else None,
    }
    if meta:
        extra.update(meta)
    save_checkpoint(path, "koopman", list(model.encoder_params) + [model.L], extra)


def load_koopman(path) -> tuple[KoopmanModel, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "koopman":
        raise CheckpointError(f"{path}: expected a koopman checkpoint, got {meta.get('kind')!r}")
    spec = _spec_from(meta["encoder_spec"]) if meta.get("encoder_spec") else None
    p_total = meta["p_learned"] + N_PRESERVED
    if arrays[-1].shape != (p_total, p_total):
        raise CheckpointError(f"{path}: operator block shape mismatch")
    model = KoopmanModel(
        encoder_spec=spec,
        encoder_params=[Tensor(a) for a in arrays[:-1]],
        L=Tensor(arrays[-1]),
    )
    return model, meta
