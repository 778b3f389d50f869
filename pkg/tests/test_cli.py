import csv

import numpy as np
import pytest

from contea.cli import dispatch
from contea.encoder import load_state

from conftest import FIXTURES

SMALL = ["dim=16", "lr=0.01", "epochs=30", "patience=3", "proxy_count=4", "finetune_epochs=5"]


@pytest.fixture
def bench(tmp_path, monkeypatch):
    monkeypatch.setenv("CONTEA_LOG", "quiet")
    root = tmp_path / "bench"
    assert dispatch(["gen", "--out", str(root), "--seed", "3", "n_entities=50", "n_relations=5"]) == 0
    return root


def _metrics_without_time(path):
    rows = list(csv.DictReader(open(path, encoding="utf-8")))
    for r in rows:
        del r["wall_time_s"]
    return rows


def test_gen_layout(bench):
    assert sorted(p.name for p in (bench / "snapshots").iterdir()) == ["t0", "t1", "t2"]
    assert "seed=3" in (bench / "genspec.txt").read_text()


def test_run_is_reproducible(tmp_path, bench):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert dispatch(["run", "--snapshots", str(bench), "--out", str(out), "--seed", "1", *SMALL]) == 0
        outs.append(out)
    a, b = outs
    for t in range(3):
        assert (a / f"alignment_t{t}.tsv").read_bytes() == (b / f"alignment_t{t}.tsv").read_bytes()
        assert load_state(a / f"checkpoint_t{t}.npz").equals(load_state(b / f"checkpoint_t{t}.npz"))
    assert _metrics_without_time(a / "metrics.csv") == _metrics_without_time(b / "metrics.csv")
    assert (a / "growth.csv").read_bytes() == (b / "growth.csv").read_bytes()


def test_train_eval_export(tmp_path, bench, capsys):
    out = tmp_path / "train"
    assert dispatch(["train", "--snapshots", str(bench), "--out", str(out), *SMALL]) == 0
    t0 = bench / "snapshots" / "t0"
    exported = tmp_path / "exported.tsv"
    assert dispatch(["export", "--snapshots", str(t0), "--checkpoint", str(out / "checkpoint_t0.npz"),
                     "--out", str(exported), *SMALL]) == 0
    assert exported.read_bytes() == (out / "alignment_t0.tsv").read_bytes()
    capsys.readouterr()
    assert dispatch(["eval", "--snapshots", str(t0), "--alignment", str(exported)]) == 0
    printed = capsys.readouterr().out
    f1 = float(printed.split("f1=")[1].split()[0])
    metrics = list(csv.DictReader(open(out / "metrics.csv", encoding="utf-8")))
    assert f1 == pytest.approx(float(metrics[0]["f1"]), abs=1e-6)


def test_modes_and_config_file(tmp_path, bench):
    conf = tmp_path / "c.conf"
    conf.write_text("dim=16\nlr=0.01\nepochs=10\nproxy_count=4\n")
    out = tmp_path / "retrain"
    assert dispatch(["run", "--snapshots", str(bench), "--config", str(conf), "--mode", "retrain",
                     "--out", str(out)]) == 0
    assert "mode=retrain" in (out / "config.txt").read_text()
    assert np.isfinite(load_state(out / "checkpoint_t2.npz").params["base_emb"]).all()


def test_errors_exit_nonzero(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CONTEA_LOG", "quiet")
    assert dispatch(["run", "--snapshots", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err
    assert dispatch(["run", "--snapshots", str(FIXTURES), "--out", str(tmp_path / "o"), "dim=x"]) == 1
    assert dispatch(["bogus"]) == 2
    assert dispatch(["run", "--mode", "nope", "--snapshots", "x", "--out", "y"]) == 2
    monkeypatch.setenv("CONTEA_LOG", "loud")
    assert dispatch(["gen", "--out", str(tmp_path / "g")]) == 1
