"""Parameter storage, the Adam optimizer and checkpoint files."""

import hashlib
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from ..errors import IntegrityError, ShapeError, UsageError, VersionError
from .tensor import Tensor, parameter

CKPT_MAGIC = "PIDT-CKPT v1"
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class ParamStore:
    """Named parameters with Adam moment estimates and a step counter."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0
        self.config = {}

    def add(self, name, init) -> Tensor:
        if name in self.params:
            raise UsageError(f"duplicate parameter name {name!r}")
        t = parameter(init)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def num_values(self):
        return sum(t.size for t in self.params.values())

    def values(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def assign(self, other: "ParamStore"):
        """Copy values, moments and step from ``other``; names and shapes must match."""
        missing = set(self.params) ^ set(other.params)
        if missing:
            raise ShapeError(f"parameter sets differ: {sorted(missing)[0]!r}")
        for k, t in self.params.items():
            src = other.params[k].data
            if src.shape != t.shape:
                raise ShapeError(f"parameter {k!r}: checkpoint shape {src.shape} != model shape {t.shape}")
        for k, t in self.params.items():
            t.data[...] = other.params[k].data
            self.m[k][...] = other.m[k]
            self.v[k][...] = other.v[k]
        self.step = other.step


def grad_dict(store: ParamStore, grads) -> dict:
    return {k: g.data if isinstance(g, Tensor) else np.asarray(g) for k, g in zip(store.names(), grads)}


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float):
    """Scale all gradients together so their joint norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}, norm


def opt_step(store: ParamStore, grads: dict, lr: float):
    """One Adam update of every parameter named in ``grads``."""
    for k, g in grads.items():
        if k not in store.params:
            raise UsageError(f"unknown parameter {k!r}")
        if np.shape(g) != store.params[k].shape:
            raise ShapeError(f"gradient for {k!r} has shape {np.shape(g)}, parameter has {store.params[k].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for k, g in grads.items():
        m = store.m[k]
        v = store.v[k]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        store.params[k].data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _payload(store):
    parts = []
    for k, t in store.params.items():
        for a in (t.data, store.m[k], store.v[k]):
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(store: ParamStore, sink, config: dict = None):
    """Write ``store`` (values, moments, step) to a path or binary file object."""
    payload = _payload(store)
    cfg = store.config if config is None else config
    lines = [CKPT_MAGIC, "config " + json.dumps(cfg, sort_keys=True), f"step {store.step}"]
    for k, t in store.params.items():
        lines.append(f"param {k} {','.join(map(str, t.shape))}")
    lines.append(f"payload {len(payload)} {hashlib.sha256(payload).hexdigest()}")
    blob = ("\n".join(lines) + "\n").encode() + payload
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(blob)
    else:
        sink.write(blob)


@dataclass
class _Manifest:
    config: dict
    step: int
    params: list
    size: int
    digest: str


def _read_manifest(fh):
    def line():
        raw = fh.readline()
        if not raw.endswith(b"\n"):
            raise IntegrityError("checkpoint manifest is truncated")
        return raw.decode().rstrip("\n")

    head = line()
    if head != CKPT_MAGIC:
        if head.startswith("PIDT-CKPT"):
            raise VersionError(f"unsupported checkpoint version {head!r}")
        raise IntegrityError("not a checkpoint file")
    cfg = line()
    if not cfg.startswith("config "):
        raise IntegrityError("checkpoint manifest lacks a config line")
    step = line()
    if not step.startswith("step "):
        raise IntegrityError("checkpoint manifest lacks a step line")
    params = []
    while True:
        ln = line()
        kind, rest = ln.split(" ", 1)
        if kind == "param":
            name, shape = rest.rsplit(" ", 1)
            params.append((name, tuple(int(s) for s in shape.split(",") if s)))
        elif kind == "payload":
            size, digest = rest.split()
            return _Manifest(json.loads(cfg[7:]), int(step[5:]), params, int(size), digest)
        else:
            raise IntegrityError(f"unexpected manifest line {ln!r}")


def load_checkpoint(source) -> ParamStore:
    """Read a checkpoint from a path, bytes, or binary file object."""
    if isinstance(source, (bytes, bytearray)):
        fh = io.BytesIO(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            fh = io.BytesIO(f.read())
    else:
        fh = source
    man = _read_manifest(fh)
    payload = fh.read()
    expected = sum(3 * 8 * int(np.prod(s)) for _, s in man.params)
    if len(payload) != man.size or man.size != expected:
        raise IntegrityError(f"payload has {len(payload)} bytes, manifest expects {man.size} ({expected} from shapes)")
    if hashlib.sha256(payload).hexdigest() != man.digest:
        raise IntegrityError("payload checksum mismatch")
    store = ParamStore()
    store.config = man.config
    store.step = man.step
    off = 0
    for name, shape in man.params:
        n = int(np.prod(shape))
        arrs = []
        for _ in range(3):
            arrs.append(np.frombuffer(payload, "<f8", n, off).reshape(shape).astype(np.float64))
            off += 8 * n
        store.add(name, arrs[0])
        store.m[name] = arrs[1]
        store.v[name] = arrs[2]
    return store
