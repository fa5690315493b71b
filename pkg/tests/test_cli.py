import numpy as np
import pytest

from milattn import tensor_core as tc
from milattn.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from milattn.data import SynthSpec, read_manifest, save_features

SYNTH_ARGS = ["--n", "8", "--T", "4", "--C", "2", "--train-per-class", "6", "--test-per-class", "2",
              "--clips-min", "6", "--clips-max", "10"]
RUN_CONFIG = """\
T = 4
n = 8
n_h = 3
d_att1 = 3
n_det1 = 4
n_L = 3
d_att2 = 2
n_cls = 4
C = 2
lr = 0.01
n_anomaly = 4
n_normal = 4
iterations = 5
checkpoint_every = 0
eval_every = 0
log_every = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out-dir", str(root / "data"), "--seed", "2", *SYNTH_ARGS]) == EXIT_OK
    (root / "run.txt").write_text(RUN_CONFIG)
    assert main(["train", "--config", str(root / "run.txt"), "--manifest", str(root / "data/manifest.csv"),
                 "--features-dir", str(root / "data"), "--out-dir", str(root / "run")]) == EXIT_OK
    return root


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["score"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
    assert main(["gradcheck", "--T", "32"]) == EXIT_USAGE


def test_synth_writes_spec_and_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--out-dir", str(tmp_path / d), "--seed", "5", *SYNTH_ARGS]) == EXIT_OK
    text = (tmp_path / "a" / "synth_spec.txt").read_text()
    assert "seed = 5" in text and SynthSpec.from_text(text).n == 8
    for name in ("manifest.csv", "annotations.csv", "synth_spec.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    recs = read_manifest(tmp_path / "a" / "manifest.csv", 3)
    f = recs[0].feature_paths[0]
    assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_rejects_impossible_spec(tmp_path):
    assert main(["synth", "--out-dir", str(tmp_path), "--n", "2", "--C", "5"]) == EXIT_USAGE


def test_train_is_bit_reproducible(workspace, tmp_path):
    args = ["train", "--config", str(workspace / "run.txt"), "--manifest",
            str(workspace / "data/manifest.csv"), "--features-dir", str(workspace / "data"),
            "--out-dir", str(tmp_path)]
    assert main(args) == EXIT_OK
    a = (workspace / "run" / "checkpoint_final.bin").read_bytes()
    assert (tmp_path / "checkpoint_final.bin").read_bytes() == a
    assert (tmp_path / "train_log.csv").read_bytes() == (workspace / "run" / "train_log.csv").read_bytes()


def test_train_config_unknown_key(workspace, tmp_path, capsys):
    (tmp_path / "bad.txt").write_text(RUN_CONFIG + "momentum = 0.9\n")
    assert main(["train", "--config", str(tmp_path / "bad.txt"), "--manifest",
                 str(workspace / "data/manifest.csv")]) == EXIT_USAGE
    assert "momentum" in capsys.readouterr().err


def test_train_missing_manifest(tmp_path):
    (tmp_path / "c.txt").write_text(RUN_CONFIG)
    assert main(["train", "--config", str(tmp_path / "c.txt"),
                 "--manifest", str(tmp_path / "nope.csv")]) == EXIT_DATA


def test_eval_writes_report(workspace, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(workspace / "run/checkpoint_final.bin"),
                 "--manifest", str(workspace / "data/manifest.csv"),
                 "--annotations", str(workspace / "data/annotations.csv"),
                 "--features-dir", str(workspace / "data"), "--out-dir", str(tmp_path)]) == EXIT_OK
    assert "AUC" in capsys.readouterr().out
    assert {"metrics.txt", "roc.csv", "confusion.csv"} <= {p.name for p in tmp_path.iterdir()}


def test_eval_missing_annotation_names_video(workspace, tmp_path, capsys):
    lines = (workspace / "data/annotations.csv").read_text().splitlines()
    recs = read_manifest(workspace / "data/manifest.csv", 3)
    victim = next(r.video_id for r in recs if r.split == "test" and r.is_anomaly)
    kept = [l for l in lines if not l.startswith(victim + ",")]
    (tmp_path / "ann.csv").write_text("\n".join(kept) + "\n")
    code = main(["eval", "--checkpoint", str(workspace / "run/checkpoint_final.bin"),
                 "--manifest", str(workspace / "data/manifest.csv"),
                 "--annotations", str(tmp_path / "ann.csv"),
                 "--features-dir", str(workspace / "data"), "--out-dir", str(tmp_path / "out")])
    assert code == EXIT_DATA and victim in capsys.readouterr().err


def test_score_output(workspace, capsys):
    feat = workspace / "data" / read_manifest(workspace / "data/manifest.csv", 3)[0].feature_paths[0]
    args = ["score", "--checkpoint", str(workspace / "run/checkpoint_final.bin"), "--features", str(feat)]
    capsys.readouterr()
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first
    lines = first.splitlines()
    split = lines.index("class,probability")
    assert lines[0] == "segment,score,alpha,beta" and split == 1 + 4
    scores = [float(l.split(",")[1]) for l in lines[1:split]]
    probs = [float(l.split(",")[1]) for l in lines[split + 1:]]
    assert all(0 < s < 1 for s in scores) and len(probs) == 3
    assert abs(sum(probs) - 1) < 1e-9


def test_score_dimension_mismatch(workspace, tmp_path):
    save_features(tmp_path / "x.feat", np.ones((5, 3)))
    assert main(["score", "--checkpoint", str(workspace / "run/checkpoint_final.bin"),
                 "--features", str(tmp_path / "x.feat")]) == EXIT_DATA


def test_score_bad_checkpoint(tmp_path):
    (tmp_path / "c.bin").write_bytes(b"garbage!" * 4)
    save_features(tmp_path / "x.feat", np.ones((5, 3)))
    assert main(["score", "--checkpoint", str(tmp_path / "c.bin"),
                 "--features", str(tmp_path / "x.feat")]) == EXIT_DATA


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "lstm_W_i" in out


def test_gradcheck_catches_broken_rule(monkeypatch, capsys):
    def wrong(node, g, vals):
        y = node.value
        return (g * y,)  # missing the (1 - y) factor

    monkeypatch.setitem(tc._BACKWARD, "sigmoid", wrong)
    assert main(["gradcheck", "--seed", "3"]) == EXIT_NUMERIC
    assert "FAIL" in capsys.readouterr().out


def test_synth_config_file(tmp_path):
    (tmp_path / "spec.txt").write_text("n = 8\nT = 4\nC = 2\ntrain_per_class = 3\ntest_per_class = 1\n"
                                       "clips_min = 6\nclips_max = 8\n")
    assert main(["synth", "--out-dir", str(tmp_path / "o"), "--config", str(tmp_path / "spec.txt")]) == EXIT_OK
    (tmp_path / "bad.txt").write_text("colour = red\n")
    assert main(["synth", "--out-dir", str(tmp_path / "p"), "--config", str(tmp_path / "bad.txt")]) == EXIT_USAGE
