"""Parameter storage, the Adam optimizer, and the checkpoint container."""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from .core import Var

CHECKPOINT_MAGIC = b"FRAMEPARSE-CKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class Param(Var):
    """A named parameter with a persistent gradient buffer and Adam moments.

    ``frozen_rows`` (a boolean mask over the first axis) excludes rows from
    optimizer updates; used for pretrained embedding rows.
    """

    __slots__ = ("name", "m", "v", "frozen_rows")

    def __init__(self, name: str, value: np.ndarray):
        super().__init__(value)
        self.name = name
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.frozen_rows: Optional[np.ndarray] = None


class ParamStore:
    """All learned parameters of a model, keyed by name.

    Initialization draws from a generator seeded at construction, so a
    fixed seed gives bit-identical parameters.  Matrices use uniform
    +-sqrt(6 / (fan_in + fan_out)); vectors start at zero.
    """

    def __init__(self, seed=0, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict = {}
        self.t = 0  # shared Adam timestep

    def add(self, name: str, shape, init: str = "auto") -> Param:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if init == "auto":
            init = "glorot" if len(shape) == 2 else "zeros"
        if init == "zeros":
            value = np.zeros(shape, dtype=self.dtype)
        elif init == "glorot":
            scale = np.sqrt(6.0 / sum(shape))
            value = self.rng.uniform(-scale, scale, shape).astype(self.dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        param = Param(name, value)
        self.params[name] = param
        return param

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(sorted(self.params))

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad[...] = 0

    def num_values(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def adam_step(self, lr: float, weight_decay: float = 0.0,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Adam with decoupled weight decay; increments the shared timestep."""
        self.t += 1
        bias1 = 1.0 - beta1 ** self.t
        bias2 = 1.0 - beta2 ** self.t
        for param in self.params.values():
            g = param.grad
            param.m *= beta1
            param.m += (1.0 - beta1) * g
            param.v *= beta2
            param.v += (1.0 - beta2) * (g * g)
            update = (param.m / bias1) / (np.sqrt(param.v / bias2) + eps)
            if weight_decay:
                update = update + weight_decay * param.value
            if param.frozen_rows is not None:
                update[param.frozen_rows] = 0
            param.value -= lr * update

    def value_arrays(self) -> dict:
        return {name: self.params[name].value for name in sorted(self.params)}

    def load_values(self, arrays: dict) -> None:
        for name, param in self.params.items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
            value = arrays[name]
            if tuple(value.shape) != tuple(param.value.shape):
                raise CheckpointError(
                    f"parameter {name!r}: checkpoint shape {value.shape} != model "
                    f"shape {param.value.shape}"
                )
            param.value[...] = value.astype(self.dtype, copy=False)


def adam_step(store: ParamStore, lr: float, weight_decay: float = 0.0, **kwargs) -> ParamStore:
    store.adam_step(lr, weight_decay, **kwargs)
    return store


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Write a deterministic binary container: magic line, one JSON header
    line (version, metadata, array table), then raw array bytes in header
    order.  Identical inputs produce identical bytes."""
    names = sorted(arrays)
    table = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        table.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "nbytes": len(blob)}
        )
        blobs.append(blob)
    header = {"version": CHECKPOINT_VERSION, "meta": meta, "arrays": table}
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC + b"\n")
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            handle.write(blob)


def load_checkpoint(path):
    """Read a container written by :func:`save_checkpoint`; returns
    (arrays, meta)."""
    with open(path, "rb") as handle:
        magic = handle.readline().rstrip(b"\n")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a frameparse checkpoint")
        try:
            header = json.loads(handle.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"{path}: corrupt checkpoint header: {err}") from None
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {header.get('version')} is not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        arrays = {}
        for entry in header["arrays"]:
            blob = handle.read(entry["nbytes"])
            if len(blob) != entry["nbytes"]:
                raise CheckpointError(f"{path}: truncated checkpoint")
            arrays[entry["name"]] = (
                np.frombuffer(blob, dtype=np.dtype(entry["dtype"]))
                .reshape(entry["shape"])
                .copy()
            )
    return arrays, header["meta"]
