"""Versioned binary checkpoints.

Layout::

    b"GLCK" | version uint32 LE | header_len uint64 LE | header JSON | payload

The header carries the manifest hash, hyperparameters, seed, training
trace, convergence flag, a tensor directory (name, shape, dtype, offset,
nbytes) and the SHA-256 of the payload. The payload is the concatenation
of raw little-endian tensor bytes: trained parameters, batch-norm running
statistics, and the init snapshot. ``load(save(x))`` is bitwise exact;
writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .layers import BatchNorm2d
from .network import HyperConfig, build_nin
from .rng import make_rng
from .train import ModelRecord, TrainingTrace

MAGIC = b"GLCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensor_entries(record: ModelRecord) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = []
    for i, (layer, name) in enumerate(record.network.trainable()):
        entries.append((f"param/{i:03d}/{name}", layer.params[name]))
    bn_index = 0
    for layer in record.network.layers:
        if isinstance(layer, BatchNorm2d):
            entries.append((f"bnstat/{bn_index:03d}/mean", layer.running_mean))
            entries.append((f"bnstat/{bn_index:03d}/var", layer.running_var))
            bn_index += 1
    for i, tensor in enumerate(record.init):
        entries.append((f"init/{i:03d}", tensor))
    return entries


def save_checkpoint(path: str, record: ModelRecord, manifest_hash: str) -> None:
    entries = _tensor_entries(record)
    directory = []
    payload = bytearray()
    for name, tensor in entries:
        data = np.ascontiguousarray(tensor, dtype=np.float32).astype("<f4").tobytes()
        directory.append(
            {"name": name, "shape": list(tensor.shape), "offset": len(payload), "nbytes": len(data)}
        )
        payload.extend(data)
    header = {
        "format_version": VERSION,
        "manifest_hash": manifest_hash,
        "config": record.config.to_dict(),
        "seed": record.seed,
        "trace": record.trace.to_dict(),
        "converged": record.converged,
        "train_error": record.train_error,
        "test_error": record.test_error,
        "input_shape": list(record.network.input_shape),
        "num_classes": record.network.num_classes,
        "init_scheme": "he-fan-in-normal, zero biases",
        "tensors": directory,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def read_header(path: str) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(header_len).decode("utf-8"))


def load_checkpoint(path: str, expected_manifest_hash: str | None = None) -> ModelRecord:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    payload = blob[16 + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch")
    if expected_manifest_hash is not None and header["manifest_hash"] != expected_manifest_hash:
        raise CheckpointError(
            f"{path}: checkpoint belongs to manifest {header['manifest_hash'][:12]}, "
            f"not {expected_manifest_hash[:12]}"
        )

    config = HyperConfig.from_dict(header["config"])
    seed = header["seed"]
    # topology is a pure function of (config, input shape, classes); the
    # builder's rng draws are then overwritten by the stored tensors
    net, init = build_nin(config, tuple(header["input_shape"]), header["num_classes"], make_rng(seed, 0))

    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = np.ascontiguousarray(arr)

    for i, (layer, name) in enumerate(net.trainable()):
        key = f"param/{i:03d}/{name}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key}")
        layer.params[name] = tensors[key]
    bn_index = 0
    for layer in net.layers:
        if isinstance(layer, BatchNorm2d):
            layer.running_mean = tensors[f"bnstat/{bn_index:03d}/mean"]
            layer.running_var = tensors[f"bnstat/{bn_index:03d}/var"]
            bn_index += 1
    loaded_init = []
    for i in range(len(init)):
        key = f"init/{i:03d}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key}")
        loaded_init.append(tensors[key])

    record = ModelRecord(
        config=config,
        seed=seed,
        network=net,
        init=loaded_init,
        trace=TrainingTrace.from_dict(header["trace"]),
        train_error=header["train_error"],
        test_error=header["test_error"],
    )
    return record
