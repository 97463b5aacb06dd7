"""Versioned binary checkpoint: magic, JSON header, raw little-endian float64 tensors.

No timestamps or compression, so saving the same parameters twice yields the same bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .model import EncoderConfig, ModelParams
from .vocab import Vocab

MAGIC = b"CXRLBL\x00"
FORMAT_VERSION = 1


def to_bytes(params: ModelParams) -> bytes:
    names = sorted(params.tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "encoder": {
            "embedding_dim": params.encoder.embedding_dim,
            "max_seq_len": params.encoder.max_seq_len,
            "pooling": params.encoder.pooling,
            "dropout_rate": params.encoder.dropout_rate,
        },
        "use_dual_encoder": params.use_dual_encoder,
        "rng_seed": params.rng_seed,
        "n_secondary": params.n_secondary,
        "n_primary": params.n_primary,
        "loss_trace": [float(x) for x in params.loss_trace],
        "vocab": params.vocab.tokens,
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)} for n in names],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<BQ", FORMAT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes() for n in names]
    return b"".join(parts)


def from_bytes(data: bytes) -> ModelParams:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a cxrlabel checkpoint (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<BQ", data, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<BQ")
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    tensors = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(data):
            raise CheckpointError(f"checkpoint truncated in tensor {spec['name']}")
        tensors[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return ModelParams(
        vocab=Vocab(header["vocab"]),
        encoder=EncoderConfig(**header["encoder"]),
        tensors=tensors,
        use_dual_encoder=header["use_dual_encoder"],
        rng_seed=header["rng_seed"],
        n_secondary=header["n_secondary"],
        n_primary=header["n_primary"],
        loss_trace=header["loss_trace"],
    )


def save(params: ModelParams, path) -> None:
    Path(path).write_bytes(to_bytes(params))


def load(path) -> ModelParams:
    try:
        return from_bytes(Path(path).read_bytes())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None


def write_loss_trace(params: ModelParams, path) -> None:
    lines = ["epoch\tloss"] + [f"{i + 1}\t{v:.10g}" for i, v in enumerate(params.loss_trace)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
