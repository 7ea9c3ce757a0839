import csv
import json

import numpy as np
import pytest

from rstan import checks, tensor
from rstan.cli import main
from rstan.harness import RunConfig


# ---------------------------------------------------------------- gradcheck suite

def test_suite_covers_every_registered_op():
    names = set(checks.CASES)
    for op in tensor.registered_ops():
        assert op in names or f"{op}_train" in names, op
    assert {"STA", "VFE", "neg_pearson", "cross_entropy", "rstan_toy"} <= names


def test_suite_passes_and_is_deterministic():
    cases = ["matmul", "softmax", "conv3d", "VFE", "neg_pearson"]
    a = checks.gradcheck_suite(instances=3, cases=cases)
    b = checks.gradcheck_suite(instances=3, cases=cases)
    assert len(a) == 15 and all(e["passed"] for e in a)
    assert a == b
    assert {"op", "seed", "error", "passed"} <= set(a[0])


def test_corrupted_backward_is_flagged(monkeypatch):
    real = tensor._BACKWARD["exp"]

    def broken(node, g):
        return [1.01 * gi for gi in real(node, g)]

    monkeypatch.setitem(tensor._BACKWARD, "exp", broken)
    report = checks.gradcheck_suite(instances=3, cases=["exp", "log"])
    assert not any(e["passed"] for e in report if e["op"] == "exp")
    assert all(e["passed"] for e in report if e["op"] == "log")


def test_crashing_case_is_a_failed_entry(monkeypatch):
    def boom(rng):
        raise RuntimeError("bad builder")

    monkeypatch.setitem(checks.CASES, "boom", (boom, {}))
    (entry,) = checks.gradcheck_suite(instances=1, cases=["boom"])
    assert not entry["passed"] and entry["error"] == float("inf") and "bad builder" in entry["detail"]


# ---------------------------------------------------------------- CLI

def test_gen_train_eval_plot(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["gen-data", "--out", str(data), "--subjects", "4", "--clips", "5", "--frames", "32"]) == 0
    manifest = data / "manifest.json"
    assert len(json.loads(manifest.read_text())["samples"]) == 20

    cfg = RunConfig(model="stan", manifest=str(manifest), clip_length=16, omit_first=4, k=2, epochs_cls=1,
                    epochs_joint=0, run_dir=str(tmp_path / "runs"))
    cfg.save(tmp_path / "run.json")
    assert main(["train", "--config", str(tmp_path / "run.json"), "--set", "lr=0.001", "--set", "seed=3"]) == 0
    out = capsys.readouterr().out
    assert "fold 0: accuracy=" in out
    run_id = RunConfig.from_dict(dict(cfg.to_dict(), lr=0.001, seed=3)).run_id
    run = tmp_path / "runs" / run_id
    assert json.loads((run / "config.json").read_text())["seed"] == 3

    assert main(["eval", str(run / "fold0.ckpt")]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert 0 <= metrics["accuracy"] <= 1

    assert main(["eval", str(run / "fold0.ckpt"), "--protocol", "loso"]) == 1
    assert main(["plot", str(run / "metrics.csv"), "--out", str(tmp_path / "plots")]) == 0
    svgs = sorted(p.name for p in (tmp_path / "plots").iterdir())
    assert "accuracy.svg" in svgs and "loss.svg" in svgs
    assert (tmp_path / "plots" / "loss.svg").read_text().lstrip().startswith("<?xml")


def test_bad_override_exits_1(tmp_path, capsys):
    assert main(["train", "--set", "bogus=1"]) == 1
    assert main(["train", "--set", "model=vit"]) == 1
    assert "error" in capsys.readouterr().err


def test_gradcheck_cli_csv(tmp_path, monkeypatch):
    small = {k: checks.CASES[k] for k in ("add", "exp")}
    monkeypatch.setattr(checks, "CASES", small)
    out = tmp_path / "gc.csv"
    assert main(["gradcheck", "--instances", "2", "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and {r["op"] for r in rows} == {"add", "exp"}


def test_gradcheck_cli_failure_exits_2(monkeypatch):
    real = tensor._BACKWARD["exp"]
    monkeypatch.setitem(tensor._BACKWARD, "exp", lambda node, g: [2 * gi for gi in real(node, g)])
    monkeypatch.setattr(checks, "CASES", {"exp": checks.CASES["exp"]})
    assert main(["gradcheck", "--instances", "1"]) == 2


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    from rstan import harness

    real = harness._cls_loss
    monkeypatch.setattr(harness, "_cls_loss", lambda m, b: real(m, b) * np.inf)
    data = tmp_path / "d"
    main(["gen-data", "--out", str(data), "--subjects", "4", "--clips", "5", "--frames", "32"])
    code = main(["train", "--set", "model=stan", "--set", f"manifest={data / 'manifest.json'}",
                 "--set", "clip_length=16", "--set", "omit_first=4", "--set", "k=2",
                 "--set", "epochs_cls=1", "--set", "epochs_joint=0", "--set", f"run_dir={tmp_path / 'r'}"])
    assert code == 2
