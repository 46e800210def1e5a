"""Command-line driver: ``hstgnn <command> [flags]``.

Exit status is 0 on success, 1 when a verification command exceeds its
tolerance (or on an unexpected failure) and 2 for usage errors such as bad
flags, missing files or malformed inputs.  Errors go to stderr as a single
``error kind=<kind> msg=<message>`` line.  Set ``HSTGNN_LOG`` to a logging
level name (DEBUG, INFO, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from hstgnn.dataio import SynthConfig, load_corpus, load_manifest, load_sample, synth_corpus
from hstgnn.errors import HstGnnError
from hstgnn.losses import ctc_oracle_check
from hstgnn.pipeline import (
    HstGnn,
    ModelConfig,
    decode_all,
    evaluate,
    format_decodes,
    format_sweep,
    load_config,
    model_grad_check,
    sweep_window,
    train,
)

LOG_ENV = "HSTGNN_LOG"
GRADCHECK_TOL = 1e-5
CTC_TOL = 1e-9

log = logging.getLogger("hstgnn")


class UsageError(Exception):
    def __init__(self, message: str, kind: str = "usage"):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def _configs(path: str | None, seed: int | None) -> tuple[ModelConfig, SynthConfig]:
    model, synth = load_config(path) if path else (ModelConfig(), SynthConfig())
    if seed is not None:
        model, synth = replace(model, seed=seed), replace(synth, seed=seed)
    return model, synth


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"data directory does not exist: {p}", "missing_path")
    return p


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file does not exist: {p}", "missing_path")
    return p


def cmd_synth(args) -> int:
    _, synth = _configs(args.config, args.seed)
    manifests = synth_corpus(synth, args.out)
    for split, m in manifests.items():
        print(f"{split}={len(m.paths)}")
    return 0


def cmd_train(args) -> int:
    data = _existing_dir(args.data)
    model, _ = _configs(args.config, args.seed)
    start = time.perf_counter()
    result = train(load_corpus(data), model, args.out)
    last = result.log.epochs[-1] if result.log.epochs else None
    print(f"epochs={len(result.log.epochs)}")
    print(f"best_epoch={result.log.best_epoch}")
    if last is not None:
        print(f"final_loss={last.loss!r}")
        print(f"final_dev_wer={last.dev_wer!r}")
    print(f"checkpoint={Path(args.out) / 'checkpoint.npz'}")
    log.info("training took %.1fs", time.perf_counter() - start)
    return 0


def cmd_eval(args) -> int:
    checkpoint = _existing_file(args.checkpoint)
    data = _existing_dir(args.data)
    manifest_path = data / f"{args.split}.manifest"
    if not manifest_path.is_file():
        raise UsageError(f"no manifest for split {args.split!r} in {data}", "missing_path")
    model = HstGnn.load(checkpoint)
    report = evaluate(model, load_manifest(manifest_path).load())
    sys.stdout.write(report.format())
    return 0


def cmd_decode(args) -> int:
    checkpoint = _existing_file(args.checkpoint)
    source = _existing_file(args.input)
    if source.suffix == ".manifest":
        samples = [load_sample(p, require_labels=False) for p in load_manifest(source).paths]
    else:
        samples = [load_sample(source, require_labels=False)]
    model = HstGnn.load(checkpoint)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_decodes(decode_all(model, samples)), encoding="utf-8")
    print(f"decoded={len(samples)}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.eps <= 0:
        raise UsageError("--eps must be positive")
    model, synth = _configs(args.config, None)
    start = time.perf_counter()
    report = model_grad_check(model, synth, args.eps, seed=args.seed or 0)
    elapsed = time.perf_counter() - start
    print(f"max_rel_error={report.max_rel_error!r}")
    if report.worst is not None:
        name, idx = report.worst
        print(f"worst={name}[{','.join(map(str, idx))}]")
    print(f"checked={report.checked}")
    print(f"tolerance={args.tol!r}")
    print(f"seconds={elapsed:.2f}")
    ok = report.passed(args.tol)
    print(f"passed={str(ok).lower()}")
    return 0 if ok else 1


def cmd_ctc_check(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    worst = ctc_oracle_check(args.trials, seed=args.seed or 0)
    ok = worst < args.tol
    print(f"max_abs_diff_log_p={worst!r}")
    print(f"trials={args.trials}")
    print(f"tolerance={args.tol!r}")
    print(f"passed={str(ok).lower()}")
    return 0 if ok else 1


def _spans(text: str) -> list[int]:
    try:
        spans = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--spans expects comma-separated integers, got {text!r}") from None
    if not spans or any(s < 1 or s % 2 == 0 for s in spans):
        raise UsageError(f"--spans must be odd integers >= 1, got {text!r}")
    return spans


def cmd_sweep(args) -> int:
    spans = _spans(args.spans)
    model, synth = _configs(args.config, args.seed)
    with tempfile.TemporaryDirectory() as scratch:
        work = Path(args.out) if args.out else Path(scratch)
        if args.data:
            manifests = load_corpus(_existing_dir(args.data))
        else:
            manifests = synth_corpus(synth, work / "corpus")
        rows = sweep_window(manifests, model, spans, out_dir=work / "runs" if args.out else None)
    sys.stdout.write(format_sweep(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hstgnn", description="Hierarchical spatio-temporal graph network")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="override every seed")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train and write checkpoints")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))

    p = add("decode", cmd_decode, "decode a sample file or manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the full objective")
    p.add_argument("--config")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)

    p = add("ctc-check", cmd_ctc_check, "CTC recursion against path enumeration")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--tol", type=float, default=CTC_TOL)

    p = add("sweep", cmd_sweep, "train one model per window span")
    p.add_argument("--config")
    p.add_argument("--spans", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    return parser


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error kind={exc.kind} msg={_one_line(exc)}", file=sys.stderr)
        return 2
    except HstGnnError as exc:
        print(f"error kind={exc.kind} msg={_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error kind=io msg={_one_line(exc)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
