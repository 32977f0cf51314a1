"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes   b"ACTCKPT\\0"
    version   u32
    spec      u64 length + UTF-8 JSON (NetworkSpec)
    meta      u64 length + UTF-8 JSON (config, iteration, rng state, ...)
    count     u32
    count x   u16 name length + UTF-8 name
              u8 dtype code (0 = float64, 1 = int64)
              u8 ndim, ndim x u64 dims
              raw array bytes, C order, little-endian
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .nn import Network, NetworkSpec
from .optim import TrainConfig
from .train import Trainer

MAGIC = b"ACTCKPT\x00"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 0, np.dtype("int64"): 1}


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    meta: dict
    tensors: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def iteration(self):
        return int(self.meta.get("iteration", 0))


def save_checkpoint(path, ckpt):
    spec = ckpt.spec.to_text().encode()
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", ckpt.version))
        f.write(struct.pack("<Q", len(spec)) + spec)
        f.write(struct.pack("<Q", len(meta)) + meta)
        f.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            arr = np.asarray(arr)
            code = _CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            bname = name.encode()
            f.write(struct.pack("<H", len(bname)) + bname)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not an actconv checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<Q")
    spec = NetworkSpec.from_text(r.take(n).decode())
    (n,) = r.unpack("<Q")
    meta = json.loads(r.take(n).decode())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q")
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return Checkpoint(spec, meta, tensors, version)


# ---------------------------------------------------------------- trainer state

def capture(trainer, extra_meta=None):
    """Snapshot everything needed to resume ``trainer`` bit-for-bit."""
    net = trainer.net
    tensors = {}
    for k, v in net.params.items():
        tensors[f"param/{k}"] = v.copy()
    for k, v in net.buffers.items():
        tensors[f"buffer/{k}"] = v.copy()
    for k, v in trainer.sgd.velocity.items():
        tensors[f"velocity/{k}"] = v.copy()
    for name, entries in trainer.history.items():
        tensors[f"history/{name}/iters"] = np.array([it for it, _ in entries], dtype=np.int64)
        tensors[f"history/{name}/points"] = np.stack([p for _, p in entries])
    tensors["metrics"] = np.array(trainer.metrics, dtype=np.float64).reshape(-1, 4)
    meta = dict(extra_meta or {})
    meta.update({
        "config": trainer.cfg.to_text(),
        "input_shape": list(net.input_shape),
        "iteration": trainer.iteration,
        "rng_state": trainer.rng.bit_generator.state,
        "loss_sum": trainer._loss_sum,
        "loss_count": trainer._loss_count,
        "position_lr_scale": {name: layer.position_lr_scale for name, layer in net.acu.items()},
        "clamp_radius": {name: layer.clamp_radius for name, layer in net.acu.items()},
    })
    return Checkpoint(net.spec, meta, tensors)


def network_from_checkpoint(ckpt):
    net = Network(ckpt.spec, tuple(ckpt.meta["input_shape"]), np.random.default_rng(0))
    for k, v in net.params.items():
        np.copyto(v, ckpt.tensors[f"param/{k}"])
    for k, v in net.buffers.items():
        np.copyto(v, ckpt.tensors[f"buffer/{k}"])
    for name, layer in net.acu.items():
        layer.position_lr_scale = ckpt.meta["position_lr_scale"][name]
        layer.clamp_radius = ckpt.meta["clamp_radius"][name]
    return net


def history_from_checkpoint(ckpt):
    out = {}
    for key in ckpt.tensors:
        if key.startswith("history/") and key.endswith("/iters"):
            name = key[len("history/"):-len("/iters")]
            iters = ckpt.tensors[key]
            pts = ckpt.tensors[f"history/{name}/points"]
            out[name] = [(int(i), p) for i, p in zip(iters, pts)]
    return out


def restore_trainer(ckpt, train, test=None, cfg=None):
    """Rebuild a :class:`Trainer` positioned exactly where ``ckpt`` was taken."""
    cfg = cfg or TrainConfig.from_text(ckpt.meta["config"])
    net = network_from_checkpoint(ckpt)
    tr = Trainer(net, cfg, train, test)
    for k, v in tr.sgd.velocity.items():
        np.copyto(v, ckpt.tensors[f"velocity/{k}"])
    tr.iteration = ckpt.iteration
    tr.rng.bit_generator.state = ckpt.meta["rng_state"]
    tr.metrics = [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in ckpt.tensors["metrics"]]
    tr.history = {name: [(it, p.copy()) for it, p in entries]
                  for name, entries in history_from_checkpoint(ckpt).items()}
    tr._loss_sum = ckpt.meta["loss_sum"]
    tr._loss_count = ckpt.meta["loss_count"]
    return tr
