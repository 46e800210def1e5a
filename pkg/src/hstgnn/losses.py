"""CTC, word cross-entropy and the weighted total objective."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from hstgnn.diffengine import ParameterStore, Tensor
from hstgnn.diffengine import ops
from hstgnn.errors import ConfigError, GuardError, ShapeError, VocabularyError

INFEASIBLE_LOSS = 1e30
BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class LossWeights:
    lambda_ctc: float = 0.5
    lambda_ce: float = 0.5
    lambda_r: float = 1e-4

    def validate(self) -> None:
        for name in ("lambda_ctc", "lambda_ce", "lambda_r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


class CTCResult(NamedTuple):
    loss: Tensor
    feasible: bool


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge consecutive repeats, then remove blanks."""
    out = []
    prev = None
    for k in path:
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def min_frames(target: Sequence[int]) -> int:
    """Shortest path length that collapses to ``target``."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check_target(target: Sequence[int], n_labels: int, blank: int) -> list[int]:
    target = [int(k) for k in target]
    for k in target:
        if k < 0 or k >= n_labels or k == blank:
            raise VocabularyError(f"target label {k} outside the gloss vocabulary")
    return target


def _extend(target: list[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def _alpha_beta(lp: np.ndarray, ext: np.ndarray, blank: int):
    T, S = lp.shape[0], ext.shape[0]
    em = lp[:, ext]  # (T, S) log-emission of each extended state
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = em[0, 0]
    if S > 1:
        alpha[0, 1] = em[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + em[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = em[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = em[T - 1, S - 2]
    skip_fwd = np.zeros(S, dtype=bool)  # transition s -> s+2 allowed
    skip_fwd[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip_fwd[:-2], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + em[t]
    return alpha, beta


def ctc_log_prob(log_probs: np.ndarray, target: Sequence[int], blank: int) -> float:
    """``log p_ctc`` by the forward recursion over the blank-interleaved target."""
    lp = np.asarray(log_probs, dtype=np.float64)
    target = _check_target(target, lp.shape[1], blank)
    if lp.shape[0] < 1:
        raise ShapeError("CTC needs at least one frame")
    alpha, _ = _alpha_beta(lp, _extend(target, blank), blank)
    return float(np.logaddexp.reduce(alpha[-1, -2:])) if target else float(alpha[-1, -1])


def ctc_nll(log_probs: Tensor, target: Sequence[int], blank: int) -> CTCResult:
    """Differentiable ``-log p_ctc`` from frame-major log-probabilities ``(T, C)``.

    Infeasible targets (too few frames for the labels plus the blanks that must
    separate repeats) give ``INFEASIBLE_LOSS`` with ``feasible=False`` and a
    zero gradient.
    """
    lp = log_probs.data
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ShapeError(f"CTC needs a non-empty (T, C) emission matrix, got {lp.shape}")
    target = _check_target(target, lp.shape[1], blank)
    T = lp.shape[0]
    if T < min_frames(target):
        return CTCResult(ops.custom_op(np.array(INFEASIBLE_LOSS), (log_probs,),
                                       lambda g: (np.zeros_like(lp),), "ctc"), False)
    ext = _extend(target, blank)
    alpha, beta = _alpha_beta(lp, ext, blank)
    log_p = np.logaddexp.reduce(alpha[-1, -2:]) if target else alpha[-1, -1]
    if not np.isfinite(log_p):
        return CTCResult(ops.custom_op(np.array(INFEASIBLE_LOSS), (log_probs,),
                                       lambda g: (np.zeros_like(lp),), "ctc"), False)

    def back(g):
        # d(-log p)/d lp[t,k] = -sum_{s: ext_s = k} exp(alpha + beta - lp[t,k] - log p)
        occ = alpha + beta - lp[:, ext] - log_p
        grad = np.zeros_like(lp)
        np.add.at(grad.T, ext, np.exp(occ).T)
        return (-g * grad,)

    return CTCResult(ops.custom_op(np.array(-log_p), (log_probs,), back, "ctc"), True)


def ctc_loss(Y: Tensor, target: Sequence[int], blank: int) -> CTCResult:
    """CTC negative log-likelihood from an emission matrix of probabilities."""
    Y = ops.as_tensor(Y)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise ShapeError(f"CTC needs a non-empty (T, C) emission matrix, got {Y.shape}")
    with np.errstate(divide="ignore"):
        return ctc_nll(ops.log(Y), target, blank)


def ctc_brute_force(Y, target: Sequence[int], blank: int) -> float:
    """``p_ctc`` by summing the probability of every length-T path that collapses to ``target``."""
    Y = np.asarray(Y.data if isinstance(Y, Tensor) else Y, dtype=np.float64)
    T, C = Y.shape
    if C ** T > BRUTE_FORCE_LIMIT:
        raise GuardError(f"brute force over {C}^{T} paths exceeds {BRUTE_FORCE_LIMIT}")
    target = _check_target(target, C, blank)
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        if collapse(path, blank) == target:
            total += math.prod(Y[t, k] for t, k in enumerate(path))
    return total


def cross_entropy(dists: Tensor, targets: Sequence[int]) -> Tensor:
    """``-sum_l log dists[l, targets[l]]`` (summed over positions)."""
    dists = ops.as_tensor(dists)
    if dists.ndim != 2 or dists.shape[0] != len(targets):
        raise ShapeError(f"cross_entropy: {dists.shape[0] if dists.ndim else 0} distributions "
                         f"for {len(targets)} targets")
    picked = dists[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
    return -ops.log(picked).sum()


def cross_entropy_logits(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Same as :func:`cross_entropy` on ``softmax(logits)``, computed stably."""
    if logits.ndim != 2 or logits.shape[0] != len(targets):
        raise ShapeError(f"cross_entropy: {logits.shape[0]} rows for {len(targets)} targets")
    lp = ops.log_softmax(logits, axis=-1)
    return -lp[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)].sum()


def l2_penalty(store: ParameterStore) -> Tensor:
    """Sum of squares over every trainable value, as one graph node."""
    names = store.names()
    leaves = [store.tensor(n) for n in names]
    value = math.fsum(float(np.dot(v.ravel(), v.ravel())) for v in (l.data for l in leaves))
    return ops.custom_op(np.array(value), leaves,
                         lambda g: tuple(2.0 * g * l.data for l in leaves), "l2")


def total_loss(l_ctc, l_ce, store: ParameterStore | None, weights: LossWeights) -> Tensor:
    """``lambda_ctc * L_ctc + lambda_ce * L_ce + lambda_r * ||theta||^2``."""
    out = ops.as_tensor(l_ctc) * weights.lambda_ctc + ops.as_tensor(l_ce) * weights.lambda_ce
    if weights.lambda_r and store is not None and len(store):
        out = out + l2_penalty(store) * weights.lambda_r
    return out


def ctc_oracle_check(trials: int = 200, seed: int = 0, max_frames: int = 6, max_labels: int = 3,
                     max_glosses: int = 3) -> float:
    """Largest ``|log p_dp - log p_enum|`` over random feasible instances.

    Each trial draws ``T <= max_frames``, a gloss vocabulary of at most
    ``max_glosses`` plus blank, a target of at most ``max_labels`` glosses
    that fits in ``T`` frames, and a random row-stochastic emission matrix.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n_gloss = int(rng.integers(1, max_glosses + 1))
        blank = n_gloss
        while True:
            T = int(rng.integers(1, max_frames + 1))
            L = int(rng.integers(0, max_labels + 1))
            target = rng.integers(0, n_gloss, size=L).tolist()
            if min_frames(target) <= T:
                break
        logits = rng.normal(size=(T, n_gloss + 1))
        lp = logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)
        dp = ctc_log_prob(lp, target, blank)
        enum = math.log(ctc_brute_force(np.exp(lp), target, blank))
        worst = max(worst, abs(dp - enum))
    return worst
