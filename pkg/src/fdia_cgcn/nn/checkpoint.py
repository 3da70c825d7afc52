"""Binary model checkpoints.

Layout (little-endian): ``CGCN`` magic, u32 version, u32 JSON length, UTF-8
JSON architecture descriptor, then every parameter as float32 in layer order.
CGCN checkpoints embed the scaled Laplacian in the descriptor so they load
without the grid.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..spectral import ScaledLaplacian
from .model import CgcnArch, CgcnModel, FcnArch, FcnModel, build_fcn_baseline, init_model

MAGIC = b"CGCN"
VERSION = 1
_HEAD = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def model_descriptor(model, scaler_digest: str | None = None, extra: dict | None = None) -> dict:
    desc = model.arch.to_dict()
    desc["scaler_digest"] = scaler_digest
    desc["precision"] = np.dtype(model.dtype).name
    if isinstance(model, CgcnModel):
        m = model.ltilde.matrix.astype(np.float64).tocsr()
        desc["laplacian"] = {
            "lambda_max": model.ltilde.lambda_max,
            "indptr": m.indptr.tolist(),
            "indices": m.indices.tolist(),
            "data": m.data.tolist(),
        }
    if extra:
        desc.update(extra)
    return desc


def checkpoint_bytes(model, scaler_digest: str | None = None, extra: dict | None = None) -> bytes:
    blob = json.dumps(model_descriptor(model, scaler_digest, extra), sort_keys=True).encode("utf-8")
    params = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.parameters())
    return _HEAD.pack(MAGIC, VERSION, len(blob)) + blob + params


def save_checkpoint(path, model, scaler_digest: str | None = None, extra: dict | None = None) -> str:
    """Write the checkpoint and return its SHA-256 digest."""
    data = checkpoint_bytes(model, scaler_digest, extra)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path, precision: str | None = None):
    """Return ``(model, descriptor)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, jlen = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        desc = json.loads(data[_HEAD.size:_HEAD.size + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad descriptor: {exc}") from None
    precision = precision or desc.get("precision", "float32")
    if desc.get("kind") == "cgcn":
        lap = desc["laplacian"]
        n = desc["n"]
        mat = sp.csr_matrix((np.array(lap["data"]), np.array(lap["indices"]), np.array(lap["indptr"])),
                            shape=(n, n))
        ltilde = ScaledLaplacian(n, mat, float(lap["lambda_max"]))
        model = init_model(CgcnArch(n, tuple(desc["channels"]), desc["order"]), ltilde,
                           precision=precision, zero=True)
    elif desc.get("kind") == "fcn":
        model = build_fcn_baseline(FcnArch(desc["n"], tuple(desc["units"])), precision=precision, zero=True)
    else:
        raise CheckpointError(f"{path}: unknown model kind {desc.get('kind')!r}")
    params = model.parameters()
    expected = sum(p.size for p in params)
    flat = np.frombuffer(data, dtype="<f4", offset=_HEAD.size + jlen)
    if flat.size != expected:
        raise CheckpointError(f"{path}: expected {expected} parameters, found {flat.size}")
    off = 0
    for p in params:
        p[...] = flat[off:off + p.size].reshape(p.shape)
        off += p.size
    return model, desc
