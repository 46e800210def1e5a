from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hstgnn.diffengine.params import ParameterStore
from hstgnn.errors import NonFiniteGradientError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, **hyper) -> AdamState:
        state = cls(**hyper)
        for name in store.names():
            state.m[name] = np.zeros_like(store.values[name])
            state.v[name] = np.zeros_like(store.values[name])
        return state


def adam_step(store: ParameterStore, opt: AdamState) -> None:
    """One bias-corrected Adam update over every parameter, then zero grads.

    All gradients are checked before anything is written, so a non-finite
    gradient leaves both the store and the optimizer state untouched.
    """
    for name in store.names():
        if not np.all(np.isfinite(store.grads[name])):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for name in store.names():
        g = store.grads[name]
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        store.values[name] -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    store.zero_grad()
