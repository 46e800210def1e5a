"""Two-stage language decoder.

Stage 1 (feats2gloss) runs an LSTM over the fused frame vectors and emits a
distribution over glosses plus blank for every frame.  Storage is frame-major:
``Y[t, k]`` is the probability of gloss ``k`` at frame ``t`` (blank is the
last column).  Emissions are conditioned on the frame vectors only, never on
previously emitted glosses, which keeps them conditionally independent across
frames as the CTC marginalization requires.

Stage 2 (gloss2text) encodes a gloss sequence with one LSTM and decodes words
with another, using general (bilinear) attention over the encoder states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hstgnn.diffengine import InitSpec, ParameterStore, Tensor
from hstgnn.diffengine import ops
from hstgnn.errors import ShapeError

State = tuple[Tensor, Tensor]


@dataclass
class LSTMCell:
    """Single-layer LSTM; gate columns ordered input, forget, output, candidate."""

    prefix: str
    hidden: int

    @classmethod
    def register(cls, store: ParameterStore, prefix: str, in_dim: int, hidden: int,
                 rng: np.random.Generator) -> LSTMCell:
        store.register(f"{prefix}.Wx", (in_dim, 4 * hidden), InitSpec.glorot(), rng)
        store.register(f"{prefix}.Wh", (hidden, 4 * hidden), InitSpec.glorot(), rng)
        store.register(f"{prefix}.b", (4 * hidden,), InitSpec.zeros())
        return cls(prefix, hidden)

    def zero_state(self) -> State:
        z = Tensor(np.zeros(self.hidden))
        return z, z

    def project_inputs(self, X: Tensor, store: ParameterStore) -> Tensor:
        """Input half of the gate pre-activations for a whole sequence at once."""
        return X @ store.tensor(f"{self.prefix}.Wx") + store.tensor(f"{self.prefix}.b")

    def step(self, x_proj: Tensor, state: State, Wh: Tensor) -> State:
        h, c = state
        gates = x_proj + h @ Wh
        H = self.hidden
        sig = ops.sigmoid(gates[: 3 * H])
        cand = ops.tanh(gates[3 * H:])
        c = sig[H: 2 * H] * c + sig[:H] * cand
        h = sig[2 * H: 3 * H] * ops.tanh(c)
        return h, c

    def run(self, X: Tensor, store: ParameterStore, state: State | None = None
            ) -> tuple[list[Tensor], State]:
        proj = self.project_inputs(X, store)
        Wh = store.tensor(f"{self.prefix}.Wh")
        state = state or self.zero_state()
        hs = []
        for t in range(X.shape[0]):
            state = self.step(proj[t], state, Wh)
            hs.append(state[0])
        return hs, state


# ---------------------------------------------------------------------------
# stage 1


@dataclass
class Feats2Gloss:
    in_dim: int
    n_labels: int  # glosses + blank
    cell: LSTMCell

    @classmethod
    def register(cls, store: ParameterStore, in_dim: int, hidden: int, n_labels: int,
                 rng: np.random.Generator) -> Feats2Gloss:
        store.register("f2g.in.W", (in_dim, hidden), InitSpec.glorot(), rng)
        store.register("f2g.in.b", (hidden,), InitSpec.zeros())
        cell = LSTMCell.register(store, "f2g.lstm", hidden, hidden, rng)
        store.register("f2g.out.W", (hidden, n_labels), InitSpec.glorot(), rng)
        store.register("f2g.out.b", (n_labels,), InitSpec.zeros())
        return cls(in_dim, n_labels, cell)

    def logits(self, p: Tensor, store: ParameterStore) -> Tensor:
        if p.ndim != 2 or p.shape[0] < 1:
            raise ShapeError(f"feats2gloss expects a non-empty (T, d) sequence, got {p.shape}")
        if p.shape[1] != self.in_dim:
            raise ShapeError(f"feats2gloss: input dim {p.shape[1]} != {self.in_dim}")
        X = p @ store.tensor("f2g.in.W") + store.tensor("f2g.in.b")
        hs, _ = self.cell.run(X, store)
        return ops.stack(hs) @ store.tensor("f2g.out.W") + store.tensor("f2g.out.b")


def feats2gloss(p: Tensor, stage: Feats2Gloss, store: ParameterStore) -> Tensor:
    """Emission matrix ``(T, n_glosses + 1)`` with rows summing to one."""
    return ops.softmax(stage.logits(p, store), axis=-1)


def best_path_decode(Y, blank: int) -> list[int]:
    """Per-frame argmax (lowest index on ties), merge repeats, drop blanks."""
    Y = Y.data if isinstance(Y, Tensor) else np.asarray(Y)
    path = np.argmax(Y, axis=1)  # argmax returns the first maximal index
    out = []
    prev = None
    for k in path.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


# ---------------------------------------------------------------------------
# stage 2


def general_attention(h_dec: Tensor, enc: Tensor, Wa: Tensor) -> tuple[Tensor, Tensor]:
    """Luong "general" scoring ``h^T Wa e_j``; returns (context, weights)."""
    if enc.ndim != 2 or enc.shape[0] < 1:
        raise ShapeError("general_attention needs at least one encoder state")
    weights = ops.softmax(enc @ (h_dec @ Wa), axis=-1)
    return weights @ enc, weights


@dataclass
class Gloss2Text:
    n_glosses: int  # embedding rows, blank included
    n_words: int
    encoder: LSTMCell
    decoder: LSTMCell
    placeholder: int  # gloss id fed when the gloss sequence is empty

    @classmethod
    def register(cls, store: ParameterStore, n_glosses: int, n_words: int, embed: int,
                 hidden: int, placeholder: int, rng: np.random.Generator) -> Gloss2Text:
        store.register("g2t.gloss_emb", (n_glosses, embed), InitSpec.glorot(), rng)
        enc = LSTMCell.register(store, "g2t.enc", embed, hidden, rng)
        store.register("g2t.word_emb", (n_words, embed), InitSpec.glorot(), rng)
        dec = LSTMCell.register(store, "g2t.dec", embed, hidden, rng)
        store.register("g2t.attn.Wa", (hidden, hidden), InitSpec.glorot(), rng)
        store.register("g2t.out.W", (2 * hidden, n_words), InitSpec.glorot(), rng)
        store.register("g2t.out.b", (n_words,), InitSpec.zeros())
        return cls(n_glosses, n_words, enc, dec, placeholder)

    def encode(self, glosses: Sequence[int], store: ParameterStore) -> tuple[Tensor, State]:
        ids = np.asarray(list(glosses) or [self.placeholder], dtype=np.int64)
        if ids.min() < 0 or ids.max() >= self.n_glosses:
            raise ShapeError("gloss id outside the embedding table")
        X = store.tensor("g2t.gloss_emb")[ids]
        hs, state = self.encoder.run(X, store)
        return ops.stack(hs), state

    def _output(self, h: Tensor, enc: Tensor, store: ParameterStore) -> Tensor:
        ctx, _ = general_attention(h, enc, store.tensor("g2t.attn.Wa"))
        return ops.concat([h, ctx]) @ store.tensor("g2t.out.W") + store.tensor("g2t.out.b")

    def step(self, state: State, prev_word: int, enc: Tensor, store: ParameterStore
             ) -> tuple[Tensor, State]:
        """One decoding step; returns (logits over words, new state)."""
        x = store.tensor("g2t.word_emb")[prev_word]
        proj = self.decoder.project_inputs(x, store)
        state = self.decoder.step(proj, state, store.tensor("g2t.dec.Wh"))
        return self._output(state[0], enc, store), state

    def teacher_forced(self, glosses: Sequence[int], inputs: Sequence[int],
                       store: ParameterStore) -> Tensor:
        """Logits ``(len(inputs), n_words)`` when feeding ``inputs`` one per step."""
        enc, state = self.encode(glosses, store)
        proj = self.decoder.project_inputs(
            store.tensor("g2t.word_emb")[np.asarray(inputs, dtype=np.int64)], store)
        Wh = store.tensor("g2t.dec.Wh")
        rows = []
        for l in range(len(inputs)):
            state = self.decoder.step(proj[l], state, Wh)
            rows.append(self._output(state[0], enc, store))
        return ops.stack(rows)

    def generate(self, glosses: Sequence[int], start: int, end: int, max_len: int,
                 store: ParameterStore) -> list[int]:
        """Greedy decoding from ``start`` until ``end`` or ``max_len`` words."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        enc, state = self.encode(glosses, store)
        out: list[int] = []
        prev = start
        for _ in range(max_len):
            logits, state = self.step(state, prev, enc, store)
            prev = int(np.argmax(logits.data))
            if prev == end:
                break
            if prev != start:
                out.append(prev)
        return out


def gloss2text_step(stage: Gloss2Text, state: State, prev_word: int, enc: Tensor,
                    store: ParameterStore) -> tuple[Tensor, State]:
    """Distribution over words for the next position, plus the advanced state."""
    logits, state = stage.step(state, prev_word, enc, store)
    return ops.softmax(logits), state
