"""Spatio-temporal graphs with learned, symmetrized, unit-norm adjacency.

All functions accept arbitrary leading batch axes, so a whole sample is built
at once as a stack of T per-frame graphs: ``V`` has shape ``(..., n, d)`` and
``A`` has shape ``(..., n, n)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hstgnn.dataio import KEYPOINT_COUNTS, REGIONS, SampleRecord
from hstgnn.diffengine import InitSpec, ParameterStore, Tensor
from hstgnn.diffengine import ops
from hstgnn.errors import ConfigError, ShapeError

DEGENERATE_NORM = 1e-12

HIGH_LEVEL_IDS = REGIONS  # vertex ids of a high-level frame: face, lhand, rhand


@dataclass
class StGraph:
    """Vertex features ``V`` and adjacency ``A``; leading axes index frames."""

    V: Tensor
    A: Tensor
    tags: list[tuple[str, int]] | None = None
    degenerate: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.V.shape[-2]

    def dump(self, path: str | Path) -> None:
        """Debug dump as JSON text (same conventions as sample fixtures)."""
        doc = {"format": "hstgnn-graph", "version": 1, "V": self.V.data.tolist(),
               "A": self.A.data.tolist(),
               "tags": [list(t) for t in self.tags] if self.tags else None}
        Path(path).write_text(json.dumps(doc), encoding="utf-8")


@dataclass
class AdjacencyLearner:
    """Low-rank bilinear scorer ``sigma(v_i^T M1 M2^T v_j)``."""

    prefix: str
    d: int
    rank: int
    sigma: str = "sigmoid"

    @classmethod
    def register(cls, store: ParameterStore, prefix: str, d: int, rank: int,
                 rng: np.random.Generator, sigma: str = "sigmoid") -> AdjacencyLearner:
        if not 0 < rank < d:
            raise ConfigError(f"{prefix}: adjacency rank must satisfy 0 < p < d, got p={rank}, d={d}")
        store.register(f"{prefix}.M1", (d, rank), InitSpec.glorot(), rng)
        store.register(f"{prefix}.M2", (d, rank), InitSpec.glorot(), rng)
        return cls(prefix, d, rank, sigma)

    def params(self, store: ParameterStore) -> tuple[Tensor, Tensor]:
        return store.tensor(f"{self.prefix}.M1"), store.tensor(f"{self.prefix}.M2")


def fine_rank(rank: int, d: int) -> int:
    """Largest admissible rank not exceeding ``rank`` for feature size ``d``."""
    return max(1, min(rank, d - 1))


def window_index(num_frames: int, span: int) -> np.ndarray:
    """``(T, span)`` frame indices t-W..t+W, clamped to the valid range."""
    if span < 1 or span % 2 == 0:
        raise ConfigError(f"window span must be odd and positive, got {span}")
    if num_frames < 1:
        raise ShapeError("window_vertices needs at least one frame")
    W = (span - 1) // 2
    offsets = np.arange(-W, W + 1)
    return np.clip(np.arange(num_frames)[:, None] + offsets[None, :], 0, num_frames - 1)


def window_tags(ids, span: int) -> list[tuple[str, int]]:
    W = (span - 1) // 2
    return [(i, w) for w in range(-W, W + 1) for i in ids]


def window_vertices(frames: np.ndarray, t: int | None, span: int) -> tuple[np.ndarray, list]:
    """Union of per-frame base vertices over the window around ``t``.

    ``frames`` is ``(T, k, d)`` (k base vertices per frame).  Rows are ordered
    by frame offset first, then base-vertex id.  With ``t=None`` the result is
    stacked for every frame: ``(T, span*k, d)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError("frames must be (T, vertices, features)")
    T, k, d = frames.shape
    idx = window_index(T, span)
    stacked = frames[idx].reshape(T, span * k, d)
    tags = window_tags(range(k), span)
    return (stacked if t is None else stacked[t]), tags


def raw_adjacency(V: Tensor, learner: AdjacencyLearner, store: ParameterStore) -> Tensor:
    """``sigma((V M1)(V M2)^T)`` elementwise."""
    V = ops.as_tensor(V)
    if V.shape[-1] != learner.d:
        raise ShapeError(f"{learner.prefix}: vertex dim {V.shape[-1]} != learner dim {learner.d}")
    M1, M2 = learner.params(store)
    scores = (V @ M1) @ ops.swap_last(V @ M2)
    return ops.ACTIVATIONS[learner.sigma](scores)


def _triangle_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    upper = np.triu(np.ones((n, n)))
    return upper, upper - np.eye(n)


def symmetrize(A: Tensor) -> Tensor:
    """``A^T A`` with the lower triangle copied from the upper one.

    Mirroring makes the result symmetric bit for bit regardless of how the
    matrix product rounds.
    """
    A = ops.as_tensor(A)
    if A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"symmetrize needs a square matrix, got {A.shape}")
    P = ops.swap_last(A) @ A
    upper, strict = _triangle_masks(A.shape[-1])
    return P * upper + ops.swap_last(P * strict)


def normalize(A: Tensor) -> tuple[Tensor, np.ndarray]:
    """Divide by the Frobenius norm; degenerate (norm < 1e-12) matrices pass through.

    Returns the normalized tensor and a boolean array (one entry per matrix in
    the batch) flagging the degenerate ones.
    """
    A = ops.as_tensor(A)
    norm = ops.sqrt((A * A).sum(axis=(-2, -1), keepdims=True))
    degenerate = norm.data < DEGENERATE_NORM
    if degenerate.any():
        keep = (~degenerate).astype(np.float64)
        # norm is ~0 on flagged entries; add 1 there so they divide by exactly 1
        safe = ops.add(norm * keep, 1.0 - keep)
        out = A / safe
    else:
        out = A / norm
    return out, degenerate.reshape(degenerate.shape[:-2])


def learned_adjacency(V: Tensor, learner: AdjacencyLearner,
                      store: ParameterStore) -> tuple[Tensor, np.ndarray]:
    return normalize(symmetrize(raw_adjacency(V, learner, store)))


def build_high_level(sample: SampleRecord, t: int | None, span: int, modality: str,
                     learner: AdjacencyLearner, store: ParameterStore) -> StGraph:
    """Region graph of one modality (``appearance`` or ``flow``) at frame ``t``.

    ``t=None`` builds every frame of the sample at once.
    """
    if modality not in ("appearance", "flow"):
        raise ConfigError(f"unknown modality {modality!r}")
    feats = getattr(sample, modality)
    V, _ = window_vertices(feats, t, span)
    V = Tensor(V)
    A, flags = learned_adjacency(V, learner, store)
    return StGraph(V, A, window_tags(HIGH_LEVEL_IDS, span), flags)


def build_fine_level(sample: SampleRecord, t: int | None, span: int, region: str,
                     learner: AdjacencyLearner, store: ParameterStore) -> StGraph:
    """Keypoint graph of one region; vertex features are raw 2-d coordinates."""
    if region not in REGIONS:
        raise ConfigError(f"unknown region {region!r}")
    V, _ = window_vertices(sample.keypoints[region], t, span)
    V = Tensor(V)
    A, flags = learned_adjacency(V, learner, store)
    ids = [f"{region}{k}" for k in range(KEYPOINT_COUNTS[region])]
    return StGraph(V, A, window_tags(ids, span), flags)
