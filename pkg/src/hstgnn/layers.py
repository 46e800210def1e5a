"""Graph convolution, adjacency-gated graph self-attention, hierarchical pooling.

As in :mod:`hstgnn.graphs`, every operation works on stacks of graphs
(leading batch axes), which is how a sample's T frames go through a stream in
one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hstgnn.diffengine import InitSpec, ParameterStore, Tensor
from hstgnn.diffengine import ops
from hstgnn.errors import ConfigError, ShapeError
from hstgnn.graphs import AdjacencyLearner, StGraph, learned_adjacency

DEGENERATE_ROW = 1e-12

STREAMS = ("app", "flow", "face", "lhand", "rhand")
FINE_STREAMS = ("face", "lhand", "rhand")


@dataclass(frozen=True)
class EncoderConfig:
    n_conv_layers: int = 2
    n_transformer_layers: int = 1
    d_model: int = 32
    d_ff: int = 64
    n_heads: int = 4
    d_head: int = 8
    conv_activation: str = "relu"
    ffn_activation: str = "relu"

    def validate(self) -> None:
        if self.n_conv_layers < 1:
            raise ConfigError("n_conv_layers must be >= 1 (the first layer lifts inputs to d_model)")
        if self.n_transformer_layers < 0:
            raise ConfigError("n_transformer_layers must be >= 0")
        for name in ("d_model", "d_ff", "n_heads", "d_head"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("conv_activation", "ffn_activation"):
            if getattr(self, name) not in ops.ACTIVATIONS:
                raise ConfigError(f"{name}: unknown activation {getattr(self, name)!r}")


# ---------------------------------------------------------------------------
# graph convolution


def graph_conv(H: Tensor, A: Tensor, W: Tensor, activation: str = "relu") -> Tensor:
    """One message-passing layer ``f(A H W)``."""
    if H.shape[-1] != W.shape[0]:
        raise ShapeError(f"graph_conv: feature dim {H.shape[-1]} != weight rows {W.shape[0]}")
    if A.shape[-1] != H.shape[-2]:
        raise ShapeError(f"graph_conv: adjacency {A.shape} vs features {H.shape}")
    return ops.ACTIVATIONS[activation](A @ (H @ W))


@dataclass
class GraphConvStack:
    names: list[str]
    activation: str = "relu"

    @classmethod
    def register(cls, store: ParameterStore, prefix: str, dims: list[int],
                 rng: np.random.Generator, activation: str = "relu") -> GraphConvStack:
        names = []
        for l, (a, b) in enumerate(zip(dims, dims[1:])):
            name = f"{prefix}.conv{l}.W"
            store.register(name, (a, b), InitSpec.glorot(), rng)
            names.append(name)
        return cls(names, activation)

    def __call__(self, H: Tensor, A: Tensor, store: ParameterStore) -> Tensor:
        for name in self.names:
            H = graph_conv(H, A, store.tensor(name), self.activation)
        return H


# ---------------------------------------------------------------------------
# graph transformer


def attention_scores(V: Tensor, Wq: Tensor, Wk: Tensor) -> Tensor:
    """Row-softmax of ``(V Wq)(V Wk)^T / sqrt(n)``, n = number of vertices."""
    n = V.shape[-2]
    S = (V @ Wq) @ ops.swap_last(V @ Wk)
    return ops.softmax(S * (1.0 / math.sqrt(n)), axis=-1)


def gate_scores(S_dot: Tensor, A: Tensor) -> tuple[Tensor, np.ndarray]:
    """Reweight attention rows by adjacency: ``a_ij e^{s_ij} / sum_k a_ik e^{s_ik}``.

    The exponential is applied to the already-normalized scores.  Rows whose
    denominator falls below 1e-12 keep ``S_dot`` unchanged and are flagged in
    the returned boolean mask.
    """
    num = A * ops.exp(S_dot)
    den = num.sum(axis=-1, keepdims=True)
    degenerate = den.data < DEGENERATE_ROW
    if not degenerate.any():
        return num / den, degenerate[..., 0]
    keep = (~degenerate).astype(np.float64)
    gated = num / ops.add(den * keep, 1.0 - keep)
    return gated * keep + S_dot * (1.0 - keep), degenerate[..., 0]


def attend(S: Tensor, L: Tensor) -> Tensor:
    if S.shape[-1] != L.shape[-2]:
        raise ShapeError(f"attend: scores {S.shape} vs values {L.shape}")
    return S @ L


def _heads_last(x: Tensor) -> Tensor:
    # (..., K, n, dh) -> (..., n, K*dh)
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    y = ops.transpose(x, axes)
    return y.reshape(y.shape[:-2] + (y.shape[-2] * y.shape[-1],))


@dataclass
class GraphTransformerLayer:
    """Multi-head adjacency-gated self-attention followed by a vertex-wise FFN.

    Per-head projections are stored stacked: ``Wq``, ``Wk``, ``Wv`` have shape
    ``(n_heads, d_model, d_head)``.
    """

    prefix: str
    ffn_activation: str = "relu"
    last_degenerate: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def register(cls, store: ParameterStore, prefix: str, cfg: EncoderConfig,
                 rng: np.random.Generator) -> GraphTransformerLayer:
        K, dm, dh = cfg.n_heads, cfg.d_model, cfg.d_head
        for w in ("Wq", "Wk", "Wv"):
            store.register(f"{prefix}.{w}", (K, dm, dh), InitSpec.glorot(), rng)
        store.register(f"{prefix}.Wmh", (K * dh, dm), InitSpec.glorot(), rng)
        store.register(f"{prefix}.ffn.W1", (dm, cfg.d_ff), InitSpec.glorot(), rng)
        store.register(f"{prefix}.ffn.b1", (cfg.d_ff,), InitSpec.zeros())
        store.register(f"{prefix}.ffn.W2", (cfg.d_ff, dm), InitSpec.glorot(), rng)
        store.register(f"{prefix}.ffn.b2", (dm,), InitSpec.zeros())
        return cls(prefix, cfg.ffn_activation)

    def __call__(self, V: Tensor, A: Tensor, store: ParameterStore) -> Tensor:
        p = self.prefix
        Wq, Wk, Wv = (store.tensor(f"{p}.{w}") for w in ("Wq", "Wk", "Wv"))
        # insert a head axis so (..., 1, n, d) @ (K, d, dh) -> (..., K, n, dh)
        Vh = V.reshape(V.shape[:-2] + (1,) + V.shape[-2:])
        Ah = A.reshape(A.shape[:-2] + (1,) + A.shape[-2:])
        S_dot = attention_scores(Vh, Wq, Wk)
        S, self.last_degenerate = gate_scores(S_dot, Ah)
        heads = attend(S, Vh @ Wv)
        mixed = _heads_last(heads) @ store.tensor(f"{p}.Wmh")
        hidden = ops.ACTIVATIONS[self.ffn_activation](
            mixed @ store.tensor(f"{p}.ffn.W1") + store.tensor(f"{p}.ffn.b1"))
        return hidden @ store.tensor(f"{p}.ffn.W2") + store.tensor(f"{p}.ffn.b2")


def transformer_layer(G: StGraph, layer: GraphTransformerLayer, store: ParameterStore) -> StGraph:
    """Apply one layer; the adjacency object passes through untouched."""
    return StGraph(layer(G.V, G.A, store), G.A, G.tags, G.degenerate)


# ---------------------------------------------------------------------------
# stream encoder and pooling


@dataclass
class StreamEncoder:
    convs: GraphConvStack
    transformers: list[GraphTransformerLayer]

    @classmethod
    def register(cls, store: ParameterStore, prefix: str, in_dim: int, cfg: EncoderConfig,
                 rng: np.random.Generator) -> StreamEncoder:
        dims = [in_dim] + [cfg.d_model] * cfg.n_conv_layers
        convs = GraphConvStack.register(store, prefix, dims, rng, cfg.conv_activation)
        tfs = [GraphTransformerLayer.register(store, f"{prefix}.tf{k}", cfg, rng)
               for k in range(cfg.n_transformer_layers)]
        return cls(convs, tfs)


def encode_stream(G: StGraph, encoder: StreamEncoder, store: ParameterStore) -> StGraph:
    """Graph convolutions then transformer layers; works on a stack of frames."""
    H = encoder.convs(G.V, G.A, store)
    for layer in encoder.transformers:
        H = layer(H, G.A, store)
    return StGraph(H, G.A, G.tags, G.degenerate)


def avg_pool(G: StGraph | Tensor) -> Tensor:
    V = G.V if isinstance(G, StGraph) else G
    if V.shape[-2] < 1:
        raise ShapeError("avg_pool needs at least one vertex")
    return V.mean(axis=-2)


@dataclass
class PooledFrame:
    p: Tensor
    fused_graph: StGraph


def hierarchical_pool(encoded: dict[str, StGraph], fusion: AdjacencyLearner,
                      store: ParameterStore) -> PooledFrame:
    """Fuse the five encoded streams into one vector per frame.

    Fine-level graphs are mean-pooled and stacked (face, lhand, rhand) as a
    three-vertex graph whose adjacency comes from ``fusion``; that graph and
    the two high-level graphs are then mean-pooled and concatenated as
    (appearance, flow, fine).
    """
    missing = [s for s in STREAMS if s not in encoded]
    if missing:
        raise ShapeError(f"hierarchical_pool: missing encoded stream {missing[0]!r}")
    pooled = [avg_pool(encoded[s]) for s in FINE_STREAMS]
    dims = {v.shape[-1] for v in pooled}
    if len(dims) != 1:
        raise ShapeError(f"fine streams disagree on d_model: {sorted(dims)}")
    V = ops.stack(pooled, axis=-2)
    A, flags = learned_adjacency(V, fusion, store)
    fused = StGraph(V, A, [(s, 0) for s in FINE_STREAMS], flags)
    p = ops.concat([avg_pool(encoded["app"]), avg_pool(encoded["flow"]), avg_pool(fused)],
                   axis=-1)
    return PooledFrame(p, fused)
