import json
import os
import subprocess
import sys

import pytest

from speedseq import dataio
from speedseq import models as M
from speedseq import train as T
from speedseq.cli import main
from speedseq.dataio import Track, save_tracks
from speedseq.metrics import evaluate, read_summary
from speedseq.synth import generate_dataset

from conftest import make_track

TINY_MODEL = {"variant": "gru", "embed_dim": 4, "hidden_dim": 6, "seq_len": 10}
QUICK_TRAIN = {"epochs": 2, "seed": 1}


def oracle(tracks):
    return [(t.speed_kmh, [t.speed_kmh]) for t in tracks]


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = d / "data.jsonl"
    save_tracks(generate_dataset(20, seed=9), data)
    ckpt = d / "m.json"
    rc = main([
        "train", "--data", str(data), "--out", str(ckpt),
        "--model-config", write_json(d / "mc.json", TINY_MODEL),
        "--train-config", write_json(d / "tc.json", QUICK_TRAIN),
    ])
    assert rc == 0
    return d, data, ckpt


def test_generate_defaults(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert main(["generate", "--out", str(out)]) == 0
    tracks = dataio.load_tracks(out)
    assert len(tracks) == 400
    assert all(30.0 <= t.speed_kmh <= 105.0 for t in tracks)
    assert "400" in capsys.readouterr().out


def test_generate_same_seed_byte_identical(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"n_tracks": 15})
    a, b, c = tmp_path / "a.jsonl", tmp_path / "b.jsonl", tmp_path / "c.jsonl"
    assert main(["generate", "--config", cfg, "--out", str(a), "--seed", "5"]) == 0
    assert main(["generate", "--config", cfg, "--out", str(b), "--seed", "5"]) == 0
    assert main(["generate", "--config", cfg, "--out", str(c), "--seed", "6"]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


@pytest.mark.parametrize("text", ["{not json", '{"n_tracks": 0}', '{"colour": "red"}', "[1, 2]"])
def test_generate_bad_config(tmp_path, capsys, text):
    cfg = tmp_path / "c.json"
    cfg.write_text(text)
    out = tmp_path / "d.jsonl"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert capsys.readouterr().err.startswith("error:")


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["train", "--data", "x"]) == 2
    assert main(["frobnicate"]) == 2


def test_split_command(tmp_path):
    data = tmp_path / "d.jsonl"
    save_tracks(generate_dataset(10, seed=1), data)
    tr, te = tmp_path / "tr.jsonl", tmp_path / "te.jsonl"
    assert main(["split", "--data", str(data), "--train-out", str(tr), "--test-out", str(te), "--seed", "3"]) == 0
    a, b = dataio.load_tracks(tr), dataio.load_tracks(te)
    assert len(a) == 8 and len(b) == 2


def test_train_prints_summary_and_writes_checkpoint(workspace, capsys):
    d, data, _ = workspace
    out = d / "again.json"
    assert main(["train", "--data", str(data), "--out", str(out), "--model-config", str(d / "mc.json"),
                 "--train-config", str(d / "tc.json")]) == 0
    text = capsys.readouterr().out
    assert "best validation RMSE" in text and "final train loss" in text
    assert T.load_checkpoint(out).config == M.ModelConfig(**TINY_MODEL)


def test_train_unknown_variant(workspace, tmp_path, capsys):
    _, data, _ = workspace
    out = tmp_path / "x.json"
    assert main(["train", "--data", str(data), "--out", str(out), "--variant", "cnn"]) == 2
    err = capsys.readouterr().err
    assert all(v in err for v in M.VARIANTS)
    assert not out.exists()


def test_train_unlabeled(tmp_path, capsys):
    data = tmp_path / "u.jsonl"
    save_tracks([Track(t.track_id, t.fps, t.frame_idx, t.boxes) for t in generate_dataset(4, seed=2)], data)
    out = tmp_path / "x.json"
    assert main(["train", "--data", str(data), "--out", str(out)]) == 3
    assert "label" in capsys.readouterr().err
    assert not out.exists()


def test_train_missing_and_corrupt_data(tmp_path):
    out = tmp_path / "x.json"
    assert main(["train", "--data", str(tmp_path / "nope.jsonl"), "--out", str(out)]) == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["train", "--data", str(bad), "--out", str(out)]) == 3


def test_train_non_finite_exits_4(workspace, tmp_path):
    _, data, _ = workspace
    tc = write_json(tmp_path / "tc.json", {"epochs": 1, "lr": 1e308})
    mc = write_json(tmp_path / "mc.json", {**TINY_MODEL, "variant": "rnn"})
    out = tmp_path / "x.json"
    assert main(["train", "--data", str(data), "--out", str(out), "--model-config", mc, "--train-config", tc]) == 4
    assert not out.exists()


def test_eval_with_injected_oracle(workspace, tmp_path, capsys):
    _, data, ckpt = workspace
    rep = tmp_path / "new" / "report"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--report-dir", str(rep)],
                predictor=oracle) == 0
    out = capsys.readouterr().out
    assert "accuracy 100.0000" in out and "rmse 0.0000" in out
    rows = read_summary(rep / "summary.csv")
    assert len(rows) == 1 and rows[0]["model"] == "gru" and rows[0]["dataset"] == "data"
    assert (rep / "scatter_gru_data.csv").exists()


def test_eval_too_short_lists_offenders(workspace, tmp_path, capsys):
    _, _, ckpt = workspace
    data = tmp_path / "short.jsonl"
    save_tracks([make_track("ok", n=20), make_track("tiny", n=6)], data)
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--report-dir", str(tmp_path / "r")]) == 3
    assert "tiny" in capsys.readouterr().err
    assert main(["predict", "--checkpoint", str(ckpt), "--data", str(data)]) == 3


def test_eval_bad_checkpoint(workspace, tmp_path):
    _, data, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1, "model_con')
    assert main(["eval", "--checkpoint", str(bad), "--data", str(data), "--report-dir", str(tmp_path)]) == 3
    assert main(["predict", "--checkpoint", str(tmp_path / "none.json"), "--data", str(data)]) == 3


def test_predict_matches_evaluate(workspace, tmp_path, capsys):
    _, data, ckpt = workspace
    labeled = dataio.load_tracks(data)[:3]
    unl = tmp_path / "unl.jsonl"
    save_tracks([Track(t.track_id, t.fps, t.frame_idx, t.boxes) for t in labeled], unl)
    assert main(["predict", "--checkpoint", str(ckpt), "--data", str(unl)]) == 0
    first = capsys.readouterr().out
    assert main(["predict", "--checkpoint", str(ckpt), "--data", str(unl)]) == 0
    assert capsys.readouterr().out == first
    lines = first.strip().split("\n")
    assert len(lines) == 3
    m = evaluate(T.load_checkpoint(ckpt), labeled)
    for line, row in zip(lines, m.per_sample):
        tid, speed = line.split("\t")
        assert tid == row.track_id and speed == f"{row.predicted_kmh:.4f}"


def _summary(path, model, acc="95.1234", rmse="3.2100", dataset="synth"):
    path.write_text(f"model,dataset,mean_accuracy_pct,rmse_kmh,n\n{model},{dataset},{acc},{rmse},80\n")
    return str(path)


def test_report_merges_verbatim(tmp_path, capsys):
    a = _summary(tmp_path / "a.csv", "lstm", "97.5000", "2.1000")
    b = _summary(tmp_path / "b.csv", "rnn", "96.0001", "3.3333")
    out = tmp_path / "table.csv"
    assert main(["report", "--inputs", a, b, "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[1:] == ["lstm,97.5000,2.1000", "rnn,96.0001,3.3333"]
    assert "97.5000" in capsys.readouterr().out


def test_report_errors(tmp_path):
    a = _summary(tmp_path / "a.csv", "lstm")
    out = tmp_path / "t.csv"
    assert main(["report", "--inputs", a, a, "--out", str(out)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("model,dataset\nx,y\n")
    assert main(["report", "--inputs", a, str(bad), "--out", str(out)]) == 2
    assert main(["report", "--inputs", str(tmp_path / "missing.csv"), "--out", str(out)]) == 2
    assert not out.exists()


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.jsonl"
    cfg = write_json(tmp_path / "c.json", {"n_tracks": 2})
    r = subprocess.run([sys.executable, "-m", "speedseq", "generate", "--config", cfg, "--out", str(out)],
                       capture_output=True, text=True, env=dict(os.environ))
    assert r.returncode == 0 and len(dataio.load_tracks(out)) == 2
