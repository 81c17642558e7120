"""LSNW weights/checkpoint files.

Layout (all integers unsigned 32-bit little-endian)::

    b"LSNW" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE data
    optional:   b"META" | byte length | UTF-8 JSON metadata

Metadata carries the network spec so a file can be rebuilt into a network
without outside information; checkpoints add epoch, rng and schedule state.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..exceptions import FormatError, ShapeError
from ..resnet import Network, NetworkSpec, build

MAGIC = b"LSNW"
META_MAGIC = b"META"
VERSION = 1
VELOCITY_PREFIX = "velocity/"


def encode_weights(tensors: dict, metadata: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            if arr.dtype.kind != "f" or not np.array_equal(arr.astype(np.float32), arr):
                raise FormatError(f"tensor {name!r} is not representable as float32")
            arr = arr.astype(np.float32)
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if metadata is not None:
        blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts += [META_MAGIC, struct.pack("<I", len(blob)), blob]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def decode_weights(buf: bytes):
    """Return ``(tensors, metadata)``; metadata is None when absent."""
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic: not an LSNW weights file")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported LSNW version {version} (expected {VERSION})")
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        rank = r.u32("rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        size = int(np.prod(dims, dtype=np.int64))
        data = r.take(4 * size, f"data of {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(dims)
    metadata = None
    if r.pos < len(buf):
        if r.take(4, "metadata magic") != META_MAGIC:
            raise FormatError("unexpected trailing bytes after tensors")
        blob = r.take(r.u32("metadata length"), "metadata")
        metadata = json.loads(blob.decode("utf-8"))
        if r.pos != len(buf):
            raise FormatError("unexpected trailing bytes after metadata")
    return tensors, metadata


def save_weights(path, tensors: dict, metadata: dict | None = None) -> None:
    data = encode_weights(tensors, metadata)
    with open(path, "wb") as fh:
        fh.write(data)


def load_weights(path):
    with open(path, "rb") as fh:
        return decode_weights(fh.read())


# -------------------------------------------------------- network-level API


def network_metadata(net: Network, **extra) -> dict:
    return {"kind": "network", "spec": net.spec.to_dict(), "seed": net.seed, **extra}


def save_network(path, net: Network, **extra) -> None:
    save_weights(path, net.state_dict(), network_metadata(net, **extra))


def network_from_tensors(tensors: dict, spec: NetworkSpec, seed: int = 0) -> Network:
    net = build(spec, seed=seed)
    net.load_state_dict(tensors)
    return net


def load_network(path, spec: NetworkSpec | None = None) -> Network:
    tensors, meta = load_weights(path)
    if spec is None:
        if not meta or "spec" not in meta:
            raise FormatError(f"{path}: no network spec in metadata; pass one explicitly")
        spec = NetworkSpec.from_dict(meta["spec"])
    return network_from_tensors(tensors, spec, int((meta or {}).get("seed", 0)))


def save_bundle(path, nets: dict, **extra) -> None:
    """Several named networks in one file, tensors prefixed ``<key>/``."""
    tensors, specs, seeds = {}, {}, {}
    for key, net in nets.items():
        if "/" in key:
            raise FormatError(f"bundle key {key!r} may not contain '/'")
        specs[key] = net.spec.to_dict()
        seeds[key] = net.seed
        for name, arr in net.state_dict().items():
            full = f"{key}/{name}"
            if full in tensors:
                raise FormatError(f"tensor name collision: {full}")
            tensors[full] = arr
    save_weights(path, tensors, {"kind": "bundle", "specs": specs, "seeds": seeds, **extra})


def load_bundle(path):
    """Return ``(nets, metadata)`` from a bundle or single-network file."""
    tensors, meta = load_weights(path)
    if meta and meta.get("kind") == "bundle":
        nets = {}
        for key, spec in meta["specs"].items():
            prefix = f"{key}/"
            sub = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            seed = int(meta.get("seeds", {}).get(key, 0))
            nets[key] = network_from_tensors(sub, NetworkSpec.from_dict(spec), seed)
        return nets, meta
    if not meta or "spec" not in meta:
        raise FormatError(f"{path}: missing network metadata")
    spec = NetworkSpec.from_dict(meta["spec"])
    return {"model": network_from_tensors(tensors, spec, int(meta.get("seed", 0)))}, meta


def save_checkpoint(path, ckpt) -> None:
    tensors = dict(ckpt.state)
    for name, v in ckpt.velocity.items():
        key = VELOCITY_PREFIX + name
        if key in tensors:
            raise FormatError(f"tensor name collision: {key}")
        tensors[key] = v
    save_weights(path, tensors, ckpt.metadata())


def load_checkpoint(path):
    from ..trainer import Checkpoint, TrainConfig

    tensors, meta = load_weights(path)
    if not meta or meta.get("kind") != "checkpoint":
        raise FormatError(f"{path}: not a checkpoint (missing checkpoint metadata)")
    state = {k: v for k, v in tensors.items() if not k.startswith(VELOCITY_PREFIX)}
    velocity = {k[len(VELOCITY_PREFIX):]: v.copy() for k, v in tensors.items()
                if k.startswith(VELOCITY_PREFIX)}
    return Checkpoint(
        spec=NetworkSpec.from_dict(meta["spec"]),
        state={k: v.copy() for k, v in state.items()},
        velocity=velocity,
        epoch=int(meta["epoch"]),
        config=TrainConfig.from_dict(meta["config"]),
        history=list(meta["history"]),
        steps=int(meta.get("steps", 0)),
        phase=int(meta.get("phase", 0)),
    )


def check_compatible(net: Network, tensors: dict) -> None:
    """Raise ShapeError naming the first tensor whose shape differs."""
    own = net.state_dict()
    for name, arr in tensors.items():
        if name in own and own[name].shape != arr.shape:
            raise ShapeError(f"tensor {name!r}: file has {arr.shape}, network expects {own[name].shape}")
