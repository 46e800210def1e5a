import numpy as np
import pytest

from hstgnn.cli import main
from hstgnn.metrics import parse_report

SMOKE = """\
rank=2
d_model=8
d_ff=16
n_heads=2
d_head=4
hidden=8
embed=4
epochs=1
synth.n_samples=10
synth.gloss_vocab_size=4
synth.text_vocab_size=6
synth.d_a=4
synth.d_o=4
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "smoke.cfg"
    p.write_text(SMOKE)
    return p


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _error_line(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error kind=")
    return lines[0]


def test_ctc_check(capsys):
    code, out, _ = _run(capsys, "ctc-check", "--trials", 200)
    assert code == 0
    keys = parse_report(out)
    assert float(keys["max_abs_diff_log_p"]) < 1e-9 and keys["passed"] == "true"


def test_ctc_check_tolerance_violation_exits_nonzero(capsys):
    code, out, _ = _run(capsys, "ctc-check", "--trials", 5, "--tol", 0)
    assert code == 1 and "passed=false" in out


def test_synth_train_eval_decode(capsys, cfg, tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    assert _run(capsys, "synth", "--config", cfg, "--out", data)[0] == 0
    assert (data / "train.manifest").is_file()
    code, out, _ = _run(capsys, "train", "--config", cfg, "--data", data, "--out", run)
    assert code == 0 and "best_epoch=1" in out
    assert (run / "checkpoint.npz").is_file() and (run / "trainlog.tsv").is_file()

    code, out, _ = _run(capsys, "eval", "--checkpoint", run / "checkpoint.npz",
                        "--data", data, "--split", "dev")
    assert code == 0
    keys = parse_report(out)
    assert {"wer", "bleu1", "bleu2", "bleu3", "bleu4"} <= set(keys)

    target = run / "decoded.tsv"
    code, _, _ = _run(capsys, "decode", "--checkpoint", run / "checkpoint.npz",
                      "--input", data / "test.manifest", "--out", target)
    assert code == 0
    fields = target.read_text().splitlines()[0].split("\t")
    assert len(fields) == 3 and fields[0] == "synth-00009"

    single = run / "one.tsv"
    code, _, _ = _run(capsys, "decode", "--checkpoint", run / "checkpoint.npz",
                      "--input", data / "samples" / "synth-00000.json", "--out", single)
    assert code == 0 and single.read_text().startswith("synth-00000\t")


def test_identical_invocations_identical_outputs(capsys, cfg, tmp_path):
    data = tmp_path / "data"
    _run(capsys, "synth", "--config", cfg, "--out", data)
    for name in ("a", "b"):
        _run(capsys, "train", "--config", cfg, "--data", data, "--out", tmp_path / name,
             "--seed", 7)
    a = np.load(tmp_path / "a" / "checkpoint.npz")
    b = np.load(tmp_path / "b" / "checkpoint.npz")
    assert sorted(a.files) == sorted(b.files)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a.files)


def test_seed_flag_changes_corpus(capsys, cfg, tmp_path):
    _run(capsys, "synth", "--config", cfg, "--out", tmp_path / "a", "--seed", 1)
    _run(capsys, "synth", "--config", cfg, "--out", tmp_path / "b", "--seed", 2)
    a = (tmp_path / "a" / "samples" / "synth-00000.json").read_text()
    b = (tmp_path / "b" / "samples" / "synth-00000.json").read_text()
    assert a != b


def test_train_missing_data_dir(capsys, tmp_path):
    missing = tmp_path / "nowhere"
    code, _, err = _run(capsys, "train", "--data", missing, "--out", tmp_path / "o")
    assert code == 2
    assert str(missing) in _error_line(err)
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["train", "--data", "x"],
    ["ctc-check", "--bogus"],
    ["ctc-check", "--trials", "many"],
    ["eval", "--checkpoint", "nope.npz", "--data", ".", "--split", "train"],
    ["sweep", "--spans", "2,4"],
    ["gradcheck", "--eps", "-1"],
    [],
])
def test_usage_errors(capsys, argv):
    code, _, err = _run(capsys, *argv)
    assert code == 2
    _error_line(err)


def test_schema_violation_is_usage_error(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key=1\n")
    code, _, err = _run(capsys, "synth", "--config", bad, "--out", tmp_path / "o")
    assert code == 2 and "kind=config" in _error_line(err)


def test_sweep_table(capsys, cfg, tmp_path):
    code, out, _ = _run(capsys, "sweep", "--config", cfg, "--spans", "1,3", "--out", tmp_path)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "span\twer\tbleu4"
    assert [l.split("\t")[0] for l in lines[1:]] == ["1", "3"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["corpus", "runs", "smoke.cfg"]


def test_gradcheck_small_config(capsys, tmp_path):
    # a single-frame sample keeps the run short
    p = tmp_path / "g.cfg"
    p.write_text("span=1\nrank=1\nd_model=2\nd_ff=2\nn_heads=1\nd_head=1\nhidden=2\nembed=2\n"
                 "n_transformer_layers=0\nn_conv_layers=1\n"
                 "synth.n_samples=1\nsynth.gloss_vocab_size=2\nsynth.text_vocab_size=3\n"
                 "synth.frames_per_gloss=1\nsynth.min_gloss_len=1\nsynth.max_gloss_len=1\n"
                 "synth.d_a=2\nsynth.d_o=2\n")
    code, out, _ = _run(capsys, "gradcheck", "--config", p, "--tol", 1.0)
    keys = parse_report(out)
    assert code == 0 and keys["passed"] == "true"
    assert int(keys["checked"]) > 0 and float(keys["max_rel_error"]) < 1.0
