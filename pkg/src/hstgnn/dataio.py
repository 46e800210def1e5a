"""Sample fixtures, manifests, vocabularies and the synthetic corpus.

Sample file (UTF-8 JSON, one document per sample)::

    {"format": "hstgnn-sample", "version": 1, "id": "...",
     "frames": [{"appearance": [[d_a floats] x 3], "flow": [[d_o floats] x 3],
                 "face": [[x, y] x 29], "lhand": [[x, y] x 21],
                 "rhand": [[x, y] x 21]}, ...],
     "glosses": ["..."], "text": ["..."]}

Region order inside ``appearance``/``flow`` is (face, left hand, right hand).
Keypoints are normalized image coordinates in [0, 1].  Flow features are
taken as given; whether the flow for frame t was computed over (t-1, t) or
(t, t+1) is the producer's business and is not recorded.

Manifest file: ``key=value`` header lines, one blank line, then one sample
path per line (relative paths resolve against the manifest's directory)::

    format=hstgnn-manifest
    version=1
    dataset=synthetic
    split=train
    d_a=64
    d_o=64
    seed=13

    samples/synth-00000.json
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hstgnn.errors import ConfigError, SampleParseError, VocabularyError

SAMPLE_FORMAT = "hstgnn-sample"
MANIFEST_FORMAT = "hstgnn-manifest"
FORMAT_VERSION = 1

REGIONS = ("face", "lhand", "rhand")
REGION_LABELS = {"face": "face", "lhand": "left-hand", "rhand": "right-hand"}
KEYPOINT_COUNTS = {"face": 29, "lhand": 21, "rhand": 21}

BLANK = "<blank>"
START = "<s>"
END = "</s>"
UNK = "<unk>"

SPLITS = ("train", "dev", "test")


@dataclass
class FrameBundle:
    appearance: np.ndarray  # (3, d_a)
    flow: np.ndarray  # (3, d_o)
    face: np.ndarray  # (29, 2)
    lhand: np.ndarray  # (21, 2)
    rhand: np.ndarray  # (21, 2)


@dataclass
class SampleRecord:
    """One signing sequence with frame data stacked along the first axis."""

    id: str
    appearance: np.ndarray  # (T, 3, d_a)
    flow: np.ndarray  # (T, 3, d_o)
    keypoints: dict[str, np.ndarray]  # region -> (T, K_region, 2)
    glosses: list[str]
    text: list[str]

    @property
    def num_frames(self) -> int:
        return self.appearance.shape[0]

    @property
    def frames(self) -> list[FrameBundle]:
        return [self.frame(t) for t in range(self.num_frames)]

    def frame(self, t: int) -> FrameBundle:
        return FrameBundle(self.appearance[t], self.flow[t],
                           *(self.keypoints[r][t] for r in REGIONS))

    @classmethod
    def from_frames(cls, id: str, frames: Sequence[FrameBundle], glosses, text) -> SampleRecord:
        rec = cls(id,
                  np.stack([f.appearance for f in frames]).astype(np.float64),
                  np.stack([f.flow for f in frames]).astype(np.float64),
                  {r: np.stack([getattr(f, r) for f in frames]).astype(np.float64)
                   for r in REGIONS},
                  list(glosses), list(text))
        validate_sample(rec)
        return rec

    def equals(self, other: SampleRecord) -> bool:
        return (self.id == other.id and self.glosses == other.glosses
                and self.text == other.text
                and np.array_equal(self.appearance, other.appearance)
                and np.array_equal(self.flow, other.flow)
                and all(np.array_equal(self.keypoints[r], other.keypoints[r]) for r in REGIONS))


def _fail(msg: str, t: int | None = None) -> SampleParseError:
    return SampleParseError(msg if t is None else f"frame {t}: {msg}")


def _matrix(raw, rows: int | None, cols: int | None, what: str, t: int) -> np.ndarray:
    try:
        arr = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise _fail(f"{what}: malformed numeric array", t) from None
    if arr.ndim != 2:
        raise _fail(f"{what}: expected a 2-d array", t)
    if rows is not None and arr.shape[0] != rows:
        raise _fail(f"{what}: expected {rows}, got {arr.shape[0]}", t)
    if cols is not None and arr.shape[1] != cols:
        raise _fail(f"{what}: expected {cols} columns, got {arr.shape[1]}", t)
    if not np.all(np.isfinite(arr)):
        raise _fail(f"{what}: non-finite value", t)
    return arr


def validate_sample(rec: SampleRecord, require_labels: bool = True) -> None:
    T = rec.appearance.shape[0] if rec.appearance.ndim == 3 else 0
    if T == 0:
        raise _fail("frames: empty")
    if rec.appearance.shape[1] != 3 or rec.flow.shape[:2] != (T, 3):
        raise _fail("appearance/flow: expected 3 regions per frame")
    for r in REGIONS:
        kp = rec.keypoints[r]
        if kp.shape != (T, KEYPOINT_COUNTS[r], 2):
            raise _fail(f"{REGION_LABELS[r]} keypoints: expected {KEYPOINT_COUNTS[r]}")
        bad = np.argwhere((kp < 0.0) | (kp > 1.0))
        if bad.size:
            raise _fail(f"{REGION_LABELS[r]} keypoints: coordinate outside [0, 1]", int(bad[0][0]))
    if require_labels and (not rec.glosses or not rec.text):
        raise _fail("glosses/text: must be non-empty")


def parse_sample(doc: dict, require_labels: bool = True) -> SampleRecord:
    if not isinstance(doc, dict):
        raise _fail("document: expected an object")
    if doc.get("format", SAMPLE_FORMAT) != SAMPLE_FORMAT:
        raise _fail(f"format: expected {SAMPLE_FORMAT!r}")
    if "version" not in doc:
        raise _fail("version: missing")
    if doc["version"] != FORMAT_VERSION:
        raise _fail(f"version: unsupported {doc['version']!r}")
    for key in ("id", "frames", "glosses", "text"):
        if key not in doc:
            raise _fail(f"{key}: missing")
    if not isinstance(doc["id"], str) or not doc["id"]:
        raise _fail("id: expected a non-empty string")
    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        raise _fail("frames: expected a non-empty list")
    for key in ("glosses", "text"):
        if not isinstance(doc[key], list) or not all(isinstance(x, str) for x in doc[key]):
            raise _fail(f"{key}: expected a list of strings")

    d_a = d_o = None
    bundles = []
    for t, fr in enumerate(frames):
        if not isinstance(fr, dict):
            raise _fail("expected an object", t)
        missing = [k for k in ("appearance", "flow", *REGIONS) if k not in fr]
        if missing:
            raise _fail(f"{missing[0]}: missing", t)
        extra = set(fr) - {"appearance", "flow", *REGIONS}
        if extra:
            raise _fail(f"{sorted(extra)[0]}: unknown field", t)
        app = _matrix(fr["appearance"], 3, d_a, "appearance", t)
        flow = _matrix(fr["flow"], 3, d_o, "flow", t)
        d_a, d_o = app.shape[1], flow.shape[1]
        kps = {}
        for r in REGIONS:
            kp = _matrix(fr[r], None, 2, f"{REGION_LABELS[r]} keypoints", t)
            if kp.shape[0] != KEYPOINT_COUNTS[r]:
                raise _fail(f"{REGION_LABELS[r]} keypoints: expected {KEYPOINT_COUNTS[r]}, "
                            f"got {kp.shape[0]}", t)
            if np.any((kp < 0.0) | (kp > 1.0)):
                raise _fail(f"{REGION_LABELS[r]} keypoints: coordinate outside [0, 1]", t)
            kps[r] = kp
        bundles.append(FrameBundle(app, flow, kps["face"], kps["lhand"], kps["rhand"]))
    if require_labels and (not doc["glosses"] or not doc["text"]):
        raise _fail("glosses/text: must be non-empty")
    rec = SampleRecord(doc["id"],
                       np.stack([b.appearance for b in bundles]),
                       np.stack([b.flow for b in bundles]),
                       {r: np.stack([getattr(b, r) for b in bundles]) for r in REGIONS},
                       list(doc["glosses"]), list(doc["text"]))
    return rec


def sample_to_doc(rec: SampleRecord) -> dict:
    return {
        "format": SAMPLE_FORMAT,
        "version": FORMAT_VERSION,
        "id": rec.id,
        "frames": [{"appearance": f.appearance.tolist(), "flow": f.flow.tolist(),
                    **{r: getattr(f, r).tolist() for r in REGIONS}} for f in rec.frames],
        "glosses": list(rec.glosses),
        "text": list(rec.text),
    }


def load_sample(path: str | Path, require_labels: bool = True) -> SampleRecord:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SampleParseError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise SampleParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    try:
        return parse_sample(doc, require_labels)
    except SampleParseError as exc:
        raise SampleParseError(f"{path}: {exc}") from None


def write_sample(rec: SampleRecord, path: str | Path) -> None:
    # repr-based float formatting in json round-trips float64 exactly
    Path(path).write_text(json.dumps(sample_to_doc(rec)), encoding="utf-8")


# ---------------------------------------------------------------------------
# vocabularies


@dataclass
class Vocabulary:
    """Bijective token/index map; special tokens sit after the content tokens."""

    kind: str
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("gloss", "text"):
            raise VocabularyError(f"unknown vocabulary kind {self.kind!r}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        for tok in self.specials():
            if tok not in self.index:
                raise VocabularyError(f"{self.kind} vocabulary lacks special {tok!r}")

    def specials(self) -> tuple[str, ...]:
        return (BLANK,) if self.kind == "gloss" else (START, END, UNK)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content(self) -> list[str]:
        sp = set(self.specials())
        return [t for t in self.tokens if t not in sp]

    @property
    def blank(self) -> int:
        return self.index[BLANK]

    @property
    def start(self) -> int:
        return self.index[START]

    @property
    def end(self) -> int:
        return self.index[END]

    @property
    def unk(self) -> int | None:
        return self.index.get(UNK)

    def encode(self, tokens: Iterable[str], strict: bool = False) -> list[int]:
        out = []
        for tok in tokens:
            i = self.index.get(tok)
            if i is None or tok in self.specials():
                if strict or self.unk is None:
                    raise VocabularyError(f"token {tok!r} not in {self.kind} vocabulary")
                i = self.unk
            out.append(i)
        return out

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(samples: Sequence[SampleRecord], kind: str) -> Vocabulary:
    """Content tokens by descending frequency (ties lexicographic), then specials."""
    if not samples:
        raise VocabularyError("cannot build a vocabulary from zero samples")
    counts: Counter[str] = Counter()
    for s in samples:
        counts.update(s.glosses if kind == "gloss" else s.text)
    if not counts:
        raise VocabularyError(f"empty {kind} token stream")
    content = sorted(counts, key=lambda tok: (-counts[tok], tok))
    specials = [BLANK] if kind == "gloss" else [START, END, UNK]
    clash = set(content) & set(specials)
    if clash:
        raise VocabularyError(f"reserved token used as content: {sorted(clash)[0]!r}")
    return Vocabulary(kind, content + specials)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class Manifest:
    dataset: str
    split: str
    paths: list[Path]
    d_a: int
    d_o: int
    seed: int | None = None

    def load(self) -> list[SampleRecord]:
        samples = [load_sample(p) for p in self.paths]
        for s in samples:
            if s.appearance.shape[2] != self.d_a or s.flow.shape[2] != self.d_o:
                raise SampleParseError(f"sample {s.id}: feature dims "
                                       f"({s.appearance.shape[2]}, {s.flow.shape[2]}) "
                                       f"disagree with manifest ({self.d_a}, {self.d_o})")
        return samples


def write_manifest(m: Manifest, path: str | Path) -> None:
    path = Path(path)
    lines = [f"format={MANIFEST_FORMAT}", f"version={FORMAT_VERSION}",
             f"dataset={m.dataset}", f"split={m.split}", f"d_a={m.d_a}", f"d_o={m.d_o}"]
    if m.seed is not None:
        lines.append(f"seed={m.seed}")
    lines.append("")
    for p in m.paths:
        p = Path(p)
        try:
            p = p.resolve().relative_to(path.parent.resolve())
        except ValueError:
            pass
        lines.append(p.as_posix())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise SampleParseError(f"{path}: no such manifest")
    header: dict[str, str] = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    i = 0
    while i < len(lines) and lines[i].strip():
        key, sep, value = lines[i].partition("=")
        if not sep:
            raise SampleParseError(f"{path}:{i + 1}: header line without '='")
        header[key.strip()] = value.strip()
        i += 1
    if header.get("format") != MANIFEST_FORMAT:
        raise SampleParseError(f"{path}: format must be {MANIFEST_FORMAT}")
    if header.get("version") != str(FORMAT_VERSION):
        raise SampleParseError(f"{path}: unsupported or missing version")
    for key in ("dataset", "split", "d_a", "d_o"):
        if key not in header:
            raise SampleParseError(f"{path}: header lacks {key}")
    if header["split"] not in SPLITS:
        raise SampleParseError(f"{path}: split must be one of {SPLITS}")
    paths = []
    for line in lines[i + 1:]:
        if not line.strip():
            continue
        p = Path(line.strip())
        p = p if p.is_absolute() else path.parent / p
        if check_files and not p.is_file():
            raise SampleParseError(f"{path}: referenced sample missing: {p}")
        paths.append(p)
    try:
        return Manifest(header["dataset"], header["split"], paths, int(header["d_a"]),
                        int(header["d_o"]),
                        int(header["seed"]) if "seed" in header else None)
    except ValueError:
        raise SampleParseError(f"{path}: non-integer dimension or seed") from None


def load_corpus(data_dir: str | Path) -> dict[str, Manifest]:
    """Read ``<split>.manifest`` for every split present; ids must be disjoint."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise SampleParseError(f"{data_dir}: data directory does not exist")
    out = {s: load_manifest(data_dir / f"{s}.manifest")
           for s in SPLITS if (data_dir / f"{s}.manifest").is_file()}
    if "train" not in out:
        raise SampleParseError(f"{data_dir}: no train.manifest")
    seen: dict[str, str] = {}
    for split, m in out.items():
        for p in m.paths:
            if p.stem in seen and seen[p.stem] != split:
                raise SampleParseError(f"sample {p.stem} appears in {seen[p.stem]} and {split}")
            seen[p.stem] = split
    return out


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 20
    gloss_vocab_size: int = 10
    text_vocab_size: int = 14
    frames_per_gloss: int = 3
    d_a: int = 64
    d_o: int = 64
    noise_sigma: float = 0.0
    seed: int = 13
    min_gloss_len: int = 2
    max_gloss_len: int = 4

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "noise_sigma":
                if not (math.isfinite(v) and v >= 0):
                    raise ConfigError("noise_sigma must be finite and >= 0")
            elif f.name != "seed" and v <= 0:
                raise ConfigError(f"{f.name} must be positive")
        if self.gloss_vocab_size < 2:
            raise ConfigError("gloss_vocab_size must be >= 2 so consecutive glosses can differ")
        if self.text_vocab_size <= self.gloss_vocab_size:
            raise ConfigError("text_vocab_size must exceed gloss_vocab_size "
                              "(one word per gloss plus at least one function word)")
        if self.min_gloss_len > self.max_gloss_len:
            raise ConfigError("min_gloss_len > max_gloss_len")

    @property
    def n_function_words(self) -> int:
        return self.text_vocab_size - self.gloss_vocab_size

    def asdict(self) -> dict:
        return asdict(self)


def gloss_token(k: int) -> str:
    return f"G{k:02d}"


def gloss_to_text(glosses: Sequence[str], n_function_words: int) -> list[str]:
    """Lower-cased glosses wrapped by a prefix and a suffix function word.

    The function words are chosen from the first/last gloss ids and the
    sequence length, so the mapping is deterministic but not constant.
    """
    ids = [int(g[1:]) for g in glosses]
    prefix = ids[0] % n_function_words
    suffix = (ids[-1] + len(ids)) % n_function_words
    return [f"f{prefix}"] + [g.lower() for g in glosses] + [f"f{suffix}"]


def split_of(i: int, n: int) -> str:
    n_train, n_dev = int(n * 0.8), int(n * 0.1)
    if i < n_train:
        return "train"
    return "dev" if i < n_train + n_dev else "test"


def synth_samples(config: SynthConfig) -> list[SampleRecord]:
    """Generate the corpus in memory (see :func:`synth_corpus`)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    G = config.gloss_vocab_size
    app_proto = rng.normal(size=(G, 3, config.d_a))
    flow_proto = rng.normal(size=(G, 3, config.d_o))
    kp_proto = {r: rng.uniform(0.1, 0.9, size=(G, KEYPOINT_COUNTS[r], 2)) for r in REGIONS}

    samples = []
    for i in range(config.n_samples):
        length = int(rng.integers(config.min_gloss_len, config.max_gloss_len + 1))
        # first gloss cycles through the vocabulary so the train split covers it
        ids = [i % G]
        while len(ids) < length:
            nxt = int(rng.integers(0, G - 1))
            ids.append(nxt if nxt < ids[-1] else nxt + 1)
        frame_ids = np.repeat(ids, config.frames_per_gloss)
        T = len(frame_ids)
        sigma = config.noise_sigma
        app = app_proto[frame_ids] + sigma * rng.normal(size=(T, 3, config.d_a))
        flow = flow_proto[frame_ids] + sigma * rng.normal(size=(T, 3, config.d_o))
        kps = {}
        for r in REGIONS:
            noisy = kp_proto[r][frame_ids] + sigma * rng.normal(size=(T, KEYPOINT_COUNTS[r], 2))
            kps[r] = np.clip(noisy, 0.0, 1.0)
        glosses = [gloss_token(k) for k in ids]
        samples.append(SampleRecord(f"synth-{i:05d}", app, flow, kps, glosses,
                                    gloss_to_text(glosses, config.n_function_words)))
    return samples


def synth_corpus(config: SynthConfig, out_dir: str | Path) -> dict[str, Manifest]:
    """Write the synthetic corpus under ``out_dir`` and return one manifest per split.

    Each gloss owns a fixed per-region feature prototype and keypoint template;
    a sample repeats those for ``frames_per_gloss`` frames per gloss and adds
    N(0, noise_sigma^2) noise (keypoints clipped to [0, 1]).  Consecutive
    glosses always differ, so a noiseless prototype lookup recovers the gloss
    sequence exactly.  Splits are 80/10/10 by sample index.
    """
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    samples = synth_samples(config)
    by_split: dict[str, list[Path]] = {s: [] for s in SPLITS}
    for i, s in enumerate(samples):
        p = out_dir / "samples" / f"{s.id}.json"
        write_sample(s, p)
        by_split[split_of(i, len(samples))].append(p)
    manifests = {}
    for split, paths in by_split.items():
        m = Manifest("synthetic", split, paths, config.d_a, config.d_o, config.seed)
        write_manifest(m, out_dir / f"{split}.manifest")
        manifests[split] = load_manifest(out_dir / f"{split}.manifest")
    return manifests
