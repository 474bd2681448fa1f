import csv
import hashlib
import json

import numpy as np
import pytest

from eventcrab import feat
from eventcrab.cli import main
from eventcrab.config import RunConfig
from eventcrab.events import DatasetManifest, load_stream, parse_event_file, synth_generate

from test_trainer import tiny_config


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(tiny_config().to_json())
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, config_path):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", config_path, "--out", str(out)]) == 0
    return out


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_synth_writes_files_and_manifest(tmp_path, config_path, capsys):
    cfg4 = tiny_config().with_overrides(data={"num_classes": 4, "samples_per_class": 10})
    argv = ["synth", "--config", config_path, "--set", "data.num_classes=4", "--set", "data.samples_per_class=10"]
    code, out, _ = run(capsys, argv + ["--out", str(tmp_path / "a")])
    assert code == 0 and json.loads(out)["samples"] == 40
    m = DatasetManifest.load(str(tmp_path / "a" / "manifest.json"))
    assert len(m.paths) == 40 and m.num_classes == 4
    assert len(list((tmp_path / "a").glob("*.bin"))) == 40
    assert m.labels[13] == 1
    assert load_stream(m.resolve(m.paths[13])).same_events(synth_generate(cfg4.data)[13])
    run(capsys, argv + ["--out", str(tmp_path / "b")])
    digest = lambda d: hashlib.sha256((tmp_path / d / "manifest.json").read_bytes()).hexdigest()  # noqa: E731
    assert digest("a") == digest("b")
    for p in m.paths:
        assert (tmp_path / "a" / p).read_bytes() == (tmp_path / "b" / p).read_bytes()


def test_invalid_class_count_exits_nonzero(tmp_path, config_path, capsys):
    code, _, err = run(capsys, ["synth", "--config", config_path, "--set", "data.num_classes=1",
                                "--out", str(tmp_path)])
    assert code != 0
    record = json.loads(err.strip().splitlines()[-1])
    assert record["error"] == "ConfigError" and "2 classes" in record["message"]


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    doc = tiny_config().to_dict()
    doc["train"]["learning_rate"] = 0.1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, ["train", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code != 0 and "learning_rate" in err


def test_train_outputs_and_eval_reproduces_final_metrics(trained, capsys):
    lines = (trained / "metrics.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["epoch"] for r in records] == [1, 2]
    assert RunConfig.load(str(trained / "config.json")) == tiny_config()
    code, out, _ = run(capsys, ["eval", "--checkpoint", str(trained / "model.evck")])
    assert code == 0
    ev = json.loads(out)
    final = json.loads((trained / "final.json").read_text())
    assert ev == final
    assert ev["top1"] == records[-1]["top1"] and ev["top5"] == records[-1]["top5"]


def test_eval_without_checkpoint(config_path, capsys):
    code, _, err = run(capsys, ["eval", "--config", config_path])
    assert code != 0 and "checkpoint required" in err


def test_seed_flag_overrides_config(tmp_path, config_path, capsys):
    assert main(["--seed", "5", "train", "--config", config_path, "--out", str(tmp_path)]) == 0
    assert RunConfig.load(str(tmp_path / "config.json")).train.seed == 5


def test_precision_env(tmp_path, config_path, capsys, monkeypatch):
    monkeypatch.setenv("EVCRAB_PRECISION", "f64")
    assert main(["train", "--config", config_path, "--set", "train.epochs=1", "--out", str(tmp_path)]) == 0
    assert RunConfig.load(str(tmp_path / "config.json")).train.precision == "f64"
    monkeypatch.setenv("EVCRAB_PRECISION", "f8")
    assert main(["train", "--config", config_path, "--out", str(tmp_path / "x")]) != 0


def test_export_features(trained, tmp_path, capsys):
    code, out, _ = run(capsys, ["export-features", "--checkpoint", str(trained / "model.evck"),
                                "--out", str(tmp_path)])
    assert code == 0
    m = feat.load(str(tmp_path / "features.feat"))
    n_test = json.loads(out)["rows"]
    assert m.shape[0] == n_test == 3  # 3 classes x 1 test sample each
    np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0, atol=1e-6)
    assert feat.dumps(feat.load(str(tmp_path / "features.feat"))) == (tmp_path / "features.feat").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "labels.csv")))
    assert len(rows) == 3 and {r["class_name"] for r in rows} == {"bar_right", "bar_left", "bar_down"}


def test_retrieve(trained, capsys):
    code, out, _ = run(capsys, ["retrieve", "--checkpoint", str(trained / "model.evck"), "--query", "1", "--k", "10"])
    assert code == 0
    doc = json.loads(out)
    scores = [r["score"] for r in doc["results"]]
    assert len(scores) == 3 and scores == sorted(scores, reverse=True)
    assert doc["query_class"] == "bar_left"
    code, _, err = run(capsys, ["retrieve", "--checkpoint", str(trained / "model.evck"), "--query", "7"])
    assert code != 0 and "unknown class index" in err


def test_sample_viz(tmp_path, config_path, capsys):
    code, out, _ = run(capsys, ["sample-viz", "--config", config_path, "--index", "2", "--out", str(tmp_path)])
    assert code == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    kept = parse_event_file((tmp_path / "retained.csv").read_bytes(), "csv",
                            {"height": 16, "width": 16, "duration_us": 20_000})
    dropped = parse_event_file((tmp_path / "dropped.csv").read_bytes(), "csv",
                               {"height": 16, "width": 16, "duration_us": 20_000})
    assert len(kept) == trace["retained"] and len(kept) + len(dropped) == trace["events"]
    np.testing.assert_allclose(trace["retained_fraction"], len(kept) / trace["events"])
    assert len(trace["boundaries_us"]) == 3


def test_sample_viz_fallback_keeps_everything(tmp_path, config_path, capsys):
    # an unreachable firing threshold means no spike, so the sampler falls back to uniform slicing
    code, _, _ = run(capsys, ["sample-viz", "--config", config_path, "--set", "sampler.u_th=1000",
                              "--out", str(tmp_path)])
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert code == 0 and trace["fallback"] and trace["retained"] == trace["events"]
    assert (tmp_path / "dropped.csv").read_text().count("\n") <= 1


def test_ablate_and_sweep_reports(tmp_path, config_path, capsys):
    code, out, _ = run(capsys, ["ablate", "--config", config_path, "--epochs", "1", "--seeds", "1,2",
                                "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("#")
    rows = list(csv.DictReader(lines[1:]))
    assert [r["sampler"] for r in rows] == ["sliding", "snn", "scl"]
    assert all(r["seeds"] == "1 2" for r in rows)
    assert float(rows[0]["retained_fraction"]) == 1.0
    code, _, _ = run(capsys, ["sweep", "--config", config_path, "--param", "lambda", "--epochs", "1",
                              "--out", str(tmp_path)])
    lines = (tmp_path / "sweep_lambda.csv").read_text().splitlines()
    assert code == 0 and lines[0].startswith("#") and len(lines) == 2 + 6


def test_scan_order(tmp_path, capsys):
    code, out, _ = run(capsys, ["scan-order", "--grid", "4,4,2"])
    rows = out.strip().splitlines()
    assert code == 0 and rows[0] == "index,x,y,t" and len(rows) == 33
    cells = {tuple(r.split(",")[1:]) for r in rows[1:]}
    assert len(cells) == 32
    code, out, _ = run(capsys, ["scan-order", "--grid", "4,4,4", "--out", str(tmp_path)])
    assert json.loads(out)["mean_step_distance"] == 1.0
