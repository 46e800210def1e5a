"""Named trainable parameters plus a value-exact checkpoint container."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from hstgnn.diffengine.tensor import DTYPE, Tensor
from hstgnn.errors import CheckpointError, RegistrationError, ShapeError

CHECKPOINT_FORMAT = "hstgnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class InitSpec:
    """How to fill a freshly registered parameter.

    ``kind`` is one of ``zeros``, ``glorot`` (uniform on +-sqrt(6/(fan_in+fan_out)),
    fans taken from the last two axes) or ``uniform`` (uniform on +-``scale``).
    """

    kind: str = "glorot"
    scale: float = 0.1

    @classmethod
    def zeros(cls) -> InitSpec:
        return cls("zeros")

    @classmethod
    def glorot(cls) -> InitSpec:
        return cls("glorot")

    @classmethod
    def uniform(cls, scale: float) -> InitSpec:
        return cls("uniform", scale)

    def sample(self, shape: tuple[int, ...], rng: np.random.Generator | None) -> np.ndarray:
        if self.kind == "zeros":
            return np.zeros(shape, dtype=DTYPE)
        if rng is None:
            raise RegistrationError(f"init {self.kind!r} needs a seeded generator")
        if self.kind == "glorot":
            fan_in = shape[-2] if len(shape) > 1 else shape[0]
            fan_out = shape[-1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        elif self.kind == "uniform":
            bound = self.scale
        else:
            raise RegistrationError(f"unknown init kind {self.kind!r}")
        return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class ParameterStore:
    """All trainable arrays of a model, keyed by unique name.

    ``values[name]`` and ``grads[name]`` are never reallocated after
    registration; optimizers and :meth:`tensor` leaves update them in place.
    """

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def register(self, name: str, shape, init: InitSpec = InitSpec(),
                 rng: np.random.Generator | None = None) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        if name in self.values:
            raise RegistrationError(f"parameter {name!r} already registered")
        if not shape or any(s <= 0 for s in shape):
            raise ShapeError(f"parameter {name!r}: shape must be positive, got {shape}")
        self.values[name] = init.sample(shape, rng)
        self.grads[name] = np.zeros(shape, dtype=DTYPE)
        return self.values[name]

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor aliasing the stored value and gradient buffers."""
        return Tensor(self.values[name], requires_grad=True, grad=self.grads[name])

    def names(self) -> list[str]:
        return sorted(self.values)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)

    def shape(self, name: str) -> tuple[int, ...]:
        return self.values[name].shape

    def num_values(self) -> int:
        return sum(v.size for v in self.values.values())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> ParameterStore:
        out = ParameterStore(self.seed)
        for name in self.names():
            out.values[name] = self.values[name].copy()
            out.grads[name] = np.zeros_like(self.values[name])
        return out

    def load_values(self, other: ParameterStore) -> None:
        """Overwrite values in place from a store with identical layout."""
        if self.names() != other.names():
            raise CheckpointError("parameter layouts differ")
        for name in self.names():
            if self.values[name].shape != other.values[name].shape:
                raise CheckpointError(f"{name}: shape {other.values[name].shape} "
                                      f"!= {self.values[name].shape}")
            self.values[name][...] = other.values[name]

    def equal(self, other: ParameterStore) -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.values[n], other.values[n]) for n in self.names())


def save_checkpoint(store: ParameterStore, path: str | Path, meta: dict | None = None) -> None:
    """Write an ``.npz`` with a JSON header and one row-major array per parameter.

    The header records format name/version, creation seed, parameter count and
    every name with its shape, followed by any caller metadata.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": store.seed,
        "param_count": len(store),
        "params": [{"name": n, "shape": list(store.shape(n))} for n in store.names()],
        "meta": meta or {},
    }
    arrays = {f"p{i}": np.ascontiguousarray(store.values[n])
              for i, n in enumerate(store.names())}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            arrays = {k: z[k] for k in z.files if k != "__header__"}
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an hstgnn checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    entries = header["params"]
    if header["param_count"] != len(entries) or len(arrays) != len(entries):
        raise CheckpointError(f"{path}: parameter count mismatch")
    store = ParameterStore(header.get("seed"))
    for i, entry in enumerate(entries):
        arr = arrays[f"p{i}"]
        if list(arr.shape) != entry["shape"] or arr.dtype != DTYPE:
            raise CheckpointError(f"{path}: record {entry['name']} has bad shape/dtype")
        store.values[entry["name"]] = arr.copy()
        store.grads[entry["name"]] = np.zeros_like(arr)
    return store, header["meta"]
