"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from hstgnn.diffengine.params import InitSpec, ParameterStore
from hstgnn.diffengine.tensor import Tensor, backward, no_grad
from hstgnn.errors import GradCheckError

SUBSAMPLE_THRESHOLD = 200
REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _coordinates(shape, rng: np.random.Generator, limit: int) -> list[tuple[int, ...]]:
    size = int(np.prod(shape))
    if size <= limit:
        flat = range(size)
    else:
        flat = np.sort(rng.choice(size, size=limit, replace=False))
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in flat]


def grad_check(loss_fn: Callable[[], Tensor], store: ParameterStore, eps: float = 1e-5,
               names: Iterable[str] | None = None, seed: int = 0,
               limit: int = SUBSAMPLE_THRESHOLD) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` against finite differences.

    ``loss_fn`` must rebuild the loss from the current values in ``store``.
    Parameters with more than ``limit`` coordinates are checked on a seeded
    random subset of ``limit`` coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    store.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {n: g.copy() for n, g in store.grads.items()}
    store.zero_grad()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, None, 0)
    for name in (store.names() if names is None else sorted(names)):
        values = store.values[name]
        worst = 0.0
        for idx in _coordinates(values.shape, rng, limit):
            orig = values[idx]
            with no_grad():
                values[idx] = orig + eps
                plus = loss_fn().item()
                values[idx] = orig - eps
                minus = loss_fn().item()
            values[idx] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise GradCheckError(f"non-finite loss when perturbing {name}{list(idx)}")
            err = rel_error(float(analytic[name][idx]), (plus - minus) / (2.0 * eps))
            report.checked += 1
            worst = max(worst, err)
            if report.worst is None or err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, idx)
        report.per_param[name] = worst
    return report


def check_function(fn: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error of d fn(x).sum() / dx for a free-standing input array."""
    store = ParameterStore()
    store.register("x", np.shape(x) or (1,), InitSpec.zeros())
    store.values["x"][...] = np.reshape(x, store.shape("x"))

    def loss() -> Tensor:
        return fn(store.tensor("x")).sum()

    return grad_check(loss, store, eps).max_rel_error
