"""Binary checkpoint format shared by the trainer, predictor and evaluator.

Layout: magic ``PCQM``, format version (u32 LE), length-prefixed UTF-8 JSON
manifest (configs plus ordered tensor descriptors with name/shape/offset),
then raw little-endian float64 tensor blobs. Loading a saved file restores
every parameter bit-exactly. Optimizer state is deliberately not stored;
resuming training restarts the optimizer.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams, init_params
from .partition import PreprocessConfig

MAGIC = b"PCQM"
VERSION = 1


def save_checkpoint(path: Path | str, params: ModelParams, cfg: ModelConfig,
                    pre_cfg: PreprocessConfig) -> None:
    named = params.named_tensors()
    descriptors = []
    offset = 0
    blobs = []
    for name, t in named.items():
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        descriptors.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "model": cfg.to_dict(),
        "preprocess": {"num_partitions": pre_cfg.num_partitions,
                       "patch_size": pre_cfg.patch_size, "seed": pre_cfg.seed},
        "tensors": descriptors,
    }
    payload = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: Path | str) -> tuple[ModelParams, ModelConfig, PreprocessConfig]:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("bad-magic", "not a checkpoint file")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise CheckpointError("unsupported-version", f"format version {version}")
    (json_len,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + json_len:
        raise CheckpointError("truncated", "manifest extends past end of file")
    try:
        manifest = json.loads(data[12:12 + json_len].decode("utf-8"))
        cfg = ModelConfig.from_dict(manifest["model"])
        pre = manifest["preprocess"]
        pre_cfg = PreprocessConfig(num_partitions=pre["num_partitions"],
                                   patch_size=pre["patch_size"], seed=pre["seed"])
        descriptors = manifest["tensors"]
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError("bad-manifest", str(exc)) from None

    params = init_params(cfg, seed=0)
    named = params.named_tensors()
    if set(named) != {d["name"] for d in descriptors}:
        raise CheckpointError("bad-manifest", "tensor names do not match the config")
    blob_start = 12 + json_len
    for d in descriptors:
        t = named[d["name"]]
        shape = tuple(d["shape"])
        if shape != t.data.shape:
            raise CheckpointError("bad-manifest",
                                  f"{d['name']}: shape {shape} != expected {t.data.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        lo = blob_start + d["offset"]
        if lo + nbytes > len(data):
            raise CheckpointError("truncated", f"{d['name']}: blob extends past end of file")
        t.data = np.frombuffer(data[lo:lo + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
    return params, cfg, pre_cfg
