import json

import numpy as np
import pytest

from grnppg.cli import main, read_aggregate_csv
from grnppg.dataset import read_pulse_csv

TINY = ["--set", "transformer.n_layers=1", "--set", "transformer.d_model=8", "--set", "transformer.n_heads=2",
        "--set", "transformer.ff_hidden=8", "--set", "mlp.hidden=[16]", "--set", "mlp.grn_width=8"]


@pytest.fixture(scope="module")
def corpus_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["--out", str(out), "--seed", "4", "synth", "--pulses", "2400"]) == 0
    return out / "pulses.csv"


def test_synth_writes_files_and_prevalence(tmp_path, capsys):
    args = ["--out", str(tmp_path / "a"), "--seed", "1", "synth", "--duration", "600", "--artifact-rate", "0.175"]
    assert main(args) == 0
    line = capsys.readouterr().out
    assert line.startswith("prevalence:")
    pulses = read_pulse_csv(tmp_path / "a" / "pulses.csv")
    assert f"{pulses.y.mean():.4f}" in line
    intervals = json.loads((tmp_path / "a" / "intervals.json").read_text())
    assert intervals and set(intervals[0]) == {"start_s", "end_s", "kind"}
    args[1] = str(tmp_path / "b")
    assert main(args) == 0
    for name in ("raw.csv", "intervals.json", "pulses.csv", "synth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_rejects_bad_rate(tmp_path):
    assert main(["--out", str(tmp_path), "synth", "--artifact-rate", "0.9"]) == 2


def test_preprocess_counts_and_errors(tmp_path, capsys):
    assert main(["--out", str(tmp_path / "s"), "synth", "--duration", "30", "--artifact-rate", "0",
                 "--hr-mean-bpm", "75"]) == 0
    assert main(["--out", str(tmp_path / "p"), "preprocess", "--input", str(tmp_path / "s" / "raw.csv")]) == 0
    ds = read_pulse_csv(tmp_path / "p" / "pulses.csv")
    assert 35 <= len(ds) <= 39 and (ds.y == -1).all()
    (tmp_path / "empty.csv").write_text("")
    assert main(["--out", str(tmp_path / "e"), "preprocess", "--input", str(tmp_path / "empty.csv")]) == 3


def test_preprocess_with_intervals_reproduces_synth_labels(tmp_path):
    assert main(["--out", str(tmp_path / "s"), "--seed", "2", "synth", "--duration", "300"]) == 0
    assert main(["--out", str(tmp_path / "p"), "preprocess", "--input", str(tmp_path / "s" / "raw.csv"),
                 "--intervals", str(tmp_path / "s" / "intervals.json")]) == 0
    a = read_pulse_csv(tmp_path / "s" / "pulses.csv")
    b = read_pulse_csv(tmp_path / "p" / "pulses.csv")
    assert len(a) == len(b) and (a.y == b.y).all()


def test_train_is_reproducible_and_evaluate_matches(tmp_path, corpus_csv):
    base = ["--seed", "7", *TINY, "train", "--data", str(corpus_csv), "--model", "grn-transformer",
            "--portion", "0.5", "--epochs", "2"]
    assert main(["--out", str(tmp_path / "r1"), *base]) == 0
    assert main(["--out", str(tmp_path / "r2"), *base]) == 0
    r1 = (tmp_path / "r1" / "report.json").read_bytes()
    assert r1 == (tmp_path / "r2" / "report.json").read_bytes()
    report = json.loads(r1)
    assert report["config"]["run"]["transformer"]["d_model"] == 8  # effective config is echoed

    assert main(["--out", str(tmp_path / "ev"), "evaluate", "--checkpoint", str(tmp_path / "r1" / "model.json"),
                 "--data", str(tmp_path / "r1" / "test.csv")]) == 0
    ev = json.loads((tmp_path / "ev" / "eval.json").read_text())
    for key in ("tp", "fp", "tn", "fn", "acc", "pre", "rec", "f1"):
        assert ev[key] == report[key]


def test_evaluate_corrupted_and_unlabeled(tmp_path, corpus_csv):
    assert main(["--out", str(tmp_path / "r"), *TINY, "train", "--data", str(corpus_csv), "--model", "mlp",
                 "--portion", "0.3", "--epochs", "1"]) == 0
    ds = read_pulse_csv(tmp_path / "r" / "test.csv")
    lines = (tmp_path / "r" / "test.csv").read_text().splitlines()
    unl = [lines[0]] + [",".join([row.split(",")[0], "-1", *row.split(",")[2:]]) for row in lines[1:]]
    (tmp_path / "unl.csv").write_text("\n".join(unl) + "\n")
    assert main(["--out", str(tmp_path / "u"), "evaluate", "--checkpoint", str(tmp_path / "r" / "model.json"),
                 "--data", str(tmp_path / "unl.csv")]) == 0
    assert not (tmp_path / "u" / "eval.json").exists()
    assert len((tmp_path / "u" / "predictions.csv").read_text().splitlines()) == len(ds) + 1

    blob = tmp_path / "r" / "model.bin"
    blob.write_bytes(blob.read_bytes()[:-8] + b"\0" * 8)
    assert main(["--out", str(tmp_path / "c"), "evaluate", "--checkpoint", str(tmp_path / "r" / "model.json"),
                 "--data", str(tmp_path / "r" / "test.csv")]) == 3


def test_train_rejects_unknown_model(tmp_path, corpus_csv, capsys):
    assert main(["--out", str(tmp_path), "train", "--data", str(corpus_csv), "--model", "bilstm"]) == 2
    err = capsys.readouterr().err
    assert "unsupported model" in err and "grn-transformer" in err


def test_compare_and_report(tmp_path, corpus_csv, capsys):
    out = tmp_path / "cmp"
    assert main(["--out", str(out), "--threads", "1", *TINY, "compare", "--data", str(corpus_csv),
                 "--models", "transformer,grn-transformer", "--seeds", "1,2,3", "--epochs", "1"]) == 0
    rows = read_aggregate_csv(out / "aggregate.csv")
    assert len(rows) == 24
    assert {r["portion"] for r in rows} == {0.025, 0.05, 0.075, 0.1}
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["summary"]) == 8
    capsys.readouterr()
    assert main(["--out", str(tmp_path / "rep"), "report", "--input", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("grn-transformer") >= 4


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "generator": {"duration_s": 60, "artifact_rate": 0.3}}))
    assert main(["--out", str(tmp_path / "a"), "--config", str(cfg), "synth"]) == 0
    meta = json.loads((tmp_path / "a" / "synth.json").read_text())["config"]
    assert meta["seed"] == 3 and meta["generator"]["duration_s"] == 60 and meta["generator"]["artifact_rate"] == 0.3
    assert main(["--out", str(tmp_path / "b"), "--config", str(cfg), "synth", "--artifact-rate", "0.1"]) == 0
    meta = json.loads((tmp_path / "b" / "synth.json").read_text())["config"]
    assert meta["generator"]["artifact_rate"] == 0.1 and meta["generator"]["duration_s"] == 60


def test_bad_config_file_and_keys(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["--out", str(tmp_path), "--config", str(tmp_path / "bad.json"), "synth"]) == 2
    (tmp_path / "unk.json").write_text(json.dumps({"gen": {}}))
    assert main(["--out", str(tmp_path), "--config", str(tmp_path / "unk.json"), "synth"]) == 2
    assert main(["--out", str(tmp_path), "--set", "train.lr=-1", "synth"]) == 2


def test_pulse_csv_without_amplitude_column(tmp_path):
    header = ["source_id", "label", *(f"s{i:03d}" for i in range(256))]
    rows = [",".join(header), ",".join(["a", "1", *["0.5"] * 256]), ",".join(["b", "-1", *["0.25"] * 256])]
    (tmp_path / "p.csv").write_text("\n".join(rows) + "\n")
    ds = read_pulse_csv(tmp_path / "p.csv")
    assert ds.X.shape == (2, 256) and list(ds.y) == [1, -1] and (ds.amp_range == 1).all()
