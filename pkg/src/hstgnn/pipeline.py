"""Model assembly, training, evaluation and the window-span sweep."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from hstgnn.dataio import (
    REGIONS,
    Manifest,
    SampleRecord,
    SynthConfig,
    Vocabulary,
    build_vocab,
    load_corpus,
    synth_corpus,
    synth_samples,
)
from hstgnn.decoder import Feats2Gloss, Gloss2Text, best_path_decode
from hstgnn.diffengine import (
    AdamState,
    GradCheckReport,
    ParameterStore,
    Tensor,
    adam_step,
    backward,
    grad_check,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)
from hstgnn.diffengine import ops
from hstgnn.errors import CheckpointError, ConfigError
from hstgnn.graphs import AdjacencyLearner, build_fine_level, build_high_level, fine_rank
from hstgnn.layers import EncoderConfig, StreamEncoder, encode_stream, hierarchical_pool
from hstgnn.losses import LossWeights, ctc_nll, cross_entropy_logits, total_loss
from hstgnn.metrics import ScoreReport, score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    span: int = 3
    rank: int = 8
    n_conv_layers: int = 2
    n_transformer_layers: int = 1
    d_model: int = 32
    d_ff: int = 64
    n_heads: int = 4
    d_head: int = 8
    conv_activation: str = "relu"
    ffn_activation: str = "relu"
    hidden: int = 64
    embed: int = 32
    lambda_ctc: float = 0.5
    lambda_ce: float = 0.5
    lambda_r: float = 1e-4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    seed: int = 0
    max_text_len: int = 32

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.n_conv_layers, self.n_transformer_layers, self.d_model,
                             self.d_ff, self.n_heads, self.d_head, self.conv_activation,
                             self.ffn_activation)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_ctc, self.lambda_ce, self.lambda_r)

    def validate(self) -> None:
        if self.span < 1 or self.span % 2 == 0:
            raise ConfigError(f"span must be odd and >= 1, got {self.span}")
        for name in ("rank", "hidden", "embed", "max_text_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("invalid optimizer settings")
        self.encoder.validate()
        self.loss_weights.validate()
        if self.rank >= self.d_model:
            raise ConfigError(f"rank {self.rank} must be < d_model {self.d_model}")


# ---------------------------------------------------------------------------
# flat key=value config files

def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> tuple[ModelConfig, SynthConfig]:
    """Parse ``key=value`` lines; ``synth.<field>`` keys configure the corpus generator.

    Blank lines and ``#`` comments are ignored; unknown or repeated keys are errors.
    """
    model_defaults = {f.name: getattr(ModelConfig(), f.name) for f in fields(ModelConfig)}
    synth_defaults = {f.name: getattr(SynthConfig(), f.name) for f in fields(SynthConfig)}
    model_kw: dict = {}
    synth_kw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        if key.startswith("synth."):
            name, table, target = key[6:], synth_defaults, synth_kw
        else:
            name, table, target = key, model_defaults, model_kw
        if name not in table:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if name in target:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        target[name] = _coerce(raw, table[name], key)
    model, synth = ModelConfig(**model_kw), SynthConfig(**synth_kw)
    model.validate()
    synth.validate()
    return model, synth


def load_config(path: str | Path) -> tuple[ModelConfig, SynthConfig]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def format_config(model: ModelConfig, synth: SynthConfig | None = None) -> str:
    lines = [f"{k}={v}" for k, v in asdict(model).items()]
    if synth is not None:
        lines += [f"synth.{k}={v}" for k, v in asdict(synth).items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model


@dataclass
class ForwardResult:
    log_probs: Tensor  # (T, |G|+1) log of the emission matrix
    word_logits: Tensor | None = None  # (L_w + 1, |W|) teacher-forced
    gloss_hyp: list[str] | None = None
    text_hyp: list[str] | None = None
    degenerate_graphs: int = 0

    @property
    def emissions(self) -> np.ndarray:
        return np.exp(self.log_probs.data)


@dataclass
class SampleLoss:
    total: Tensor
    ctc: float
    ce: float
    feasible: bool


class HstGnn:
    """All parameters and the forward computation of the model."""

    def __init__(self, config: ModelConfig, gloss_vocab: Vocabulary, text_vocab: Vocabulary,
                 d_a: int, d_o: int, store: ParameterStore | None = None):
        config.validate()
        for name, d in (("d_a", d_a), ("d_o", d_o)):
            if config.rank >= d:
                raise ConfigError(f"rank {config.rank} must be < {name} {d}")
        self.config = config
        self.gloss_vocab = gloss_vocab
        self.text_vocab = text_vocab
        self.d_a, self.d_o = d_a, d_o
        fresh = ParameterStore(seed=config.seed)
        self._register(fresh, np.random.default_rng(config.seed))
        if store is None:
            self.store = fresh
        else:
            fresh.load_values(store)
            self.store = fresh

    def _register(self, store: ParameterStore, rng: np.random.Generator) -> None:
        cfg = self.config
        enc = cfg.encoder
        in_dims = {"app": self.d_a, "flow": self.d_o, "face": 2, "lhand": 2, "rhand": 2}
        self.learners: dict[str, AdjacencyLearner] = {}
        self.encoders: dict[str, StreamEncoder] = {}
        for s, d in in_dims.items():
            rank = cfg.rank if s in ("app", "flow") else fine_rank(cfg.rank, d)
            self.learners[s] = AdjacencyLearner.register(store, f"adj.{s}", d, rank, rng)
            self.encoders[s] = StreamEncoder.register(store, f"enc.{s}", d, enc, rng)
        self.learners["fuse"] = AdjacencyLearner.register(store, "adj.fuse", cfg.d_model,
                                                          cfg.rank, rng)
        self.f2g = Feats2Gloss.register(store, 3 * cfg.d_model, cfg.hidden,
                                        len(self.gloss_vocab), rng)
        self.g2t = Gloss2Text.register(store, len(self.gloss_vocab), len(self.text_vocab),
                                       cfg.embed, cfg.hidden, self.gloss_vocab.blank, rng)

    # -- forward -----------------------------------------------------------

    def encode(self, sample: SampleRecord) -> tuple[Tensor, int]:
        """Fused frame sequence ``p`` of shape (T, 3*d_model) and a degenerate-graph count."""
        st, span = self.store, self.config.span
        graphs = {
            "app": build_high_level(sample, None, span, "appearance", self.learners["app"], st),
            "flow": build_high_level(sample, None, span, "flow", self.learners["flow"], st),
        }
        for r in REGIONS:
            graphs[r] = build_fine_level(sample, None, span, r, self.learners[r], st)
        encoded = {s: encode_stream(g, self.encoders[s], st) for s, g in graphs.items()}
        pooled = hierarchical_pool(encoded, self.learners["fuse"], st)
        flagged = sum(int(np.sum(g.degenerate)) for g in graphs.values())
        flagged += int(np.sum(pooled.fused_graph.degenerate))
        return pooled.p, flagged

    def emission_log_probs(self, sample: SampleRecord) -> tuple[Tensor, int]:
        p, flagged = self.encode(sample)
        return ops.log_softmax(self.f2g.logits(p, self.store), axis=-1), flagged

    def forward_sample(self, sample: SampleRecord, train: bool = True) -> ForwardResult:
        lp, flagged = self.emission_log_probs(sample)
        if train:
            g_ids = self.gloss_vocab.encode(sample.glosses, strict=True)
            w_ids = self.text_vocab.encode(sample.text)
            inputs = [self.text_vocab.start] + w_ids
            logits = self.g2t.teacher_forced(g_ids, inputs, self.store)
            return ForwardResult(lp, word_logits=logits, degenerate_graphs=flagged)
        g_hat = best_path_decode(lp.data, self.gloss_vocab.blank)
        words = self.g2t.generate(g_hat, self.text_vocab.start, self.text_vocab.end,
                                  self.config.max_text_len, self.store)
        return ForwardResult(lp, gloss_hyp=self.gloss_vocab.decode(g_hat),
                             text_hyp=self.text_vocab.decode(words), degenerate_graphs=flagged)

    def sample_loss(self, sample: SampleRecord) -> SampleLoss:
        out = self.forward_sample(sample, train=True)
        g_ids = self.gloss_vocab.encode(sample.glosses, strict=True)
        ctc = ctc_nll(out.log_probs, g_ids, self.gloss_vocab.blank)
        targets = self.text_vocab.encode(sample.text) + [self.text_vocab.end]
        ce = cross_entropy_logits(out.word_logits, targets)
        total = total_loss(ctc.loss, ce, self.store, self.config.loss_weights)
        return SampleLoss(total, ctc.loss.item(), ce.item(), ctc.feasible)

    def decode(self, sample: SampleRecord) -> tuple[list[str], list[str]]:
        with no_grad():
            out = self.forward_sample(sample, train=False)
        return out.gloss_hyp, out.text_hyp

    # -- persistence -------------------------------------------------------

    def meta(self, **extra) -> dict:
        return {"config": asdict(self.config), "gloss_vocab": self.gloss_vocab.tokens,
                "text_vocab": self.text_vocab.tokens, "d_a": self.d_a, "d_o": self.d_o,
                **extra}

    def save(self, path: str | Path, store: ParameterStore | None = None, **extra) -> None:
        save_checkpoint(store or self.store, path, self.meta(**extra))

    @classmethod
    def load(cls, path: str | Path) -> HstGnn:
        store, meta = load_checkpoint(path)
        try:
            config = ModelConfig(**meta["config"])
            gv = Vocabulary("gloss", meta["gloss_vocab"])
            tv = Vocabulary("text", meta["text_vocab"])
            return cls(config, gv, tv, int(meta["d_a"]), int(meta["d_o"]), store)
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: checkpoint metadata incomplete ({exc})") from None


def build_model(config: ModelConfig, train_samples: Sequence[SampleRecord]) -> HstGnn:
    d_a = train_samples[0].appearance.shape[2]
    d_o = train_samples[0].flow.shape[2]
    return HstGnn(config, build_vocab(train_samples, "gloss"), build_vocab(train_samples, "text"),
                  d_a, d_o)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    loss: float
    ctc: float
    ce: float
    dev_wer: float | None
    dev_bleu: list[float] | None
    wall_time: float
    infeasible: int

    def row(self) -> str:
        dev = ("-" if self.dev_wer is None else repr(self.dev_wer))
        bleu = ("-\t-\t-\t-" if self.dev_bleu is None
                else "\t".join(repr(b) for b in self.dev_bleu))
        return (f"{self.epoch}\t{self.loss!r}\t{self.ctc!r}\t{self.ce!r}\t{dev}\t{bleu}\t"
                f"{self.wall_time:.3f}\t{self.infeasible}")


TRAINLOG_HEADER = ("epoch\tloss\tctc\tce\tdev_wer\tdev_bleu1\tdev_bleu2\tdev_bleu3\tdev_bleu4\t"
                   "wall_time\tinfeasible")


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0

    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def format(self) -> str:
        return "\n".join([TRAINLOG_HEADER] + [e.row() for e in self.epochs]) + "\n"


class Trainer:
    """Per-sample Adam training with best-dev-WER checkpoint tracking."""

    def __init__(self, model: HstGnn, train: Sequence[SampleRecord],
                 dev: Sequence[SampleRecord] = ()):
        if not train:
            raise ConfigError("training split is empty")
        cfg = model.config
        self.model = model
        self.train_samples = list(train)
        self.dev_samples = list(dev)
        self.opt = AdamState.for_store(model.store, lr=cfg.lr, beta1=cfg.beta1,
                                       beta2=cfg.beta2, eps=cfg.adam_eps)
        self.order_rng = np.random.default_rng(cfg.seed + 1)
        self.log = TrainLog()
        self.best_store = model.store.copy()
        self.best_wer = math.inf

    def run_epoch(self) -> EpochLog:
        start = time.perf_counter()
        store = self.model.store
        totals = np.zeros(3)
        used = infeasible = 0
        for i in self.order_rng.permutation(len(self.train_samples)):
            sample = self.train_samples[i]
            store.zero_grad()
            sl = self.model.sample_loss(sample)
            if not sl.feasible:
                infeasible += 1
                log.debug("skipping %s: no CTC alignment", sample.id)
                continue
            backward(sl.total)
            adam_step(store, self.opt)
            totals += (sl.total.item(), sl.ctc, sl.ce)
            used += 1
        mean = totals / used if used else np.full(3, math.nan)
        epoch = len(self.log.epochs) + 1
        dev_wer = dev_bleu = None
        if self.dev_samples:
            report = evaluate(self.model, self.dev_samples)
            dev_wer, dev_bleu = report.wer, report.bleu
            if dev_wer < self.best_wer:
                self.best_wer = dev_wer
                self.best_store = store.copy()
                self.log.best_epoch = epoch
        else:
            self.best_store = store.copy()
            self.log.best_epoch = epoch
        entry = EpochLog(epoch, float(mean[0]), float(mean[1]), float(mean[2]), dev_wer,
                         dev_bleu, time.perf_counter() - start, infeasible)
        self.log.epochs.append(entry)
        log.info("epoch %d loss=%.6f ctc=%.6f ce=%.6f dev_wer=%s", epoch, entry.loss,
                 entry.ctc, entry.ce, "-" if dev_wer is None else f"{dev_wer:.4f}")
        return entry

    def run(self, epochs: int | None = None) -> TrainLog:
        for _ in range(self.model.config.epochs if epochs is None else epochs):
            self.run_epoch()
        return self.log


@dataclass
class TrainResult:
    model: HstGnn
    best: ParameterStore
    log: TrainLog


def train(manifests: dict[str, Manifest] | str | Path, config: ModelConfig,
          out_dir: str | Path | None = None) -> TrainResult:
    """Train from the corpus manifests; optionally write checkpoints and the log.

    ``out_dir`` receives ``checkpoint.npz`` (best dev WER), ``final.npz`` and
    ``trainlog.tsv``.
    """
    if not isinstance(manifests, dict):
        manifests = load_corpus(manifests)
    train_samples = manifests["train"].load()
    dev_samples = manifests["dev"].load() if "dev" in manifests else []
    model = build_model(config, train_samples)
    trainer = Trainer(model, train_samples, dev_samples)
    trainer.run()
    result = TrainResult(model, trainer.best_store, trainer.log)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model.save(out_dir / "checkpoint.npz", trainer.best_store, epoch=trainer.log.best_epoch)
        model.save(out_dir / "final.npz", epoch=len(trainer.log.epochs))
        (out_dir / "trainlog.tsv").write_text(trainer.log.format(), encoding="utf-8")
    return result


# ---------------------------------------------------------------------------
# evaluation


def decode_all(model: HstGnn, samples: Sequence[SampleRecord]) -> list[tuple[str, list[str], list[str]]]:
    return [(s.id, *model.decode(s)) for s in samples]


def evaluate(model: HstGnn, samples: Sequence[SampleRecord]) -> ScoreReport:
    """Gloss WER and text BLEU-1..4 over ``samples`` with greedy decoding."""
    decoded = decode_all(model, samples)
    return score([s.glosses for s in samples], [d[1] for d in decoded],
                 [s.text for s in samples], [d[2] for d in decoded])


def evaluate_checkpoint(checkpoint: str | Path, manifest: Manifest) -> ScoreReport:
    return evaluate(HstGnn.load(checkpoint), manifest.load())


def format_decodes(rows) -> str:
    return "".join(f"{sid}\t{' '.join(g)}\t{' '.join(w)}\n" for sid, g, w in rows)


# ---------------------------------------------------------------------------
# window sweep


@dataclass
class SweepRow:
    span: int
    wer: float
    bleu4: float


def sweep_window(manifests: dict[str, Manifest] | str | Path, config: ModelConfig,
                 spans: Sequence[int], split: str = "test",
                 out_dir: str | Path | None = None) -> list[SweepRow]:
    """Train and score one model per window span (best-dev checkpoint on ``split``)."""
    for s in spans:
        if s < 1 or s % 2 == 0:
            raise ConfigError(f"span must be odd and >= 1, got {s}")
    if not isinstance(manifests, dict):
        manifests = load_corpus(manifests)
    if split not in manifests or not manifests[split].paths:
        split = "dev" if manifests.get("dev") and manifests["dev"].paths else "train"
    eval_samples = manifests[split].load()
    rows = []
    for span in spans:
        cfg = replace(config, span=span)
        sub = None if out_dir is None else Path(out_dir) / f"span{span}"
        result = train(manifests, cfg, sub)
        model = result.model
        model.store.load_values(result.best)
        report = evaluate(model, eval_samples)
        rows.append(SweepRow(span, report.wer, report.bleu[3]))
        log.info("span %d: wer=%.4f bleu4=%.4f", span, report.wer, report.bleu[3])
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    return "span\twer\tbleu4\n" + "".join(f"{r.span}\t{r.wer!r}\t{r.bleu4!r}\n" for r in rows)


# ---------------------------------------------------------------------------
# end-to-end gradient check


def model_grad_check(config: ModelConfig, synth: SynthConfig, eps: float = 1e-5,
                     seed: int = 0) -> GradCheckReport:
    """Check the full objective on the first synthetic training sample."""
    samples = synth_samples(synth)
    model = build_model(config, samples)
    sample = samples[0]
    return grad_check(lambda: model.sample_loss(sample).total, model.store, eps, seed=seed)
