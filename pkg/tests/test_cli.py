import csv
import json

import numpy as np
import pytest
from conftest import corpus_with_bulk

from tempgan.cli import main, sha256
from tempgan.grid_store import ConditionLabel, SampleBucket, export_bucket, ingest_bucket


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-grid", "--width", "16", "--height", "8", "--days", "1461", "--out", str(root / "grid")]) == 0
    assert main(["aggregate", "--input", str(root / "grid" / "grid.tgrd"), "--out", str(root / "agg")]) == 0
    jan = sorted((root / "agg" / "buckets").glob("*m01*"))
    assert main(["train", "--buckets", *map(str, jan), "--epochs", "1", "--batch-size", "32", "--seed", "3",
                 "--out", str(root / "run")]) == 0
    return root


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_aggregate_outputs(workspace):
    agg = workspace / "agg"
    files = sorted((agg / "buckets").glob("*.tbkt"))
    assert len(files) == 24
    summary = json.loads((agg / "summary.json").read_text())
    jan = {k: v for k, v in summary["bucket_sizes"].items() if "m01" in k}
    assert sorted(jan.values()) == [124, 124]
    m = manifest(agg)
    grid = str(workspace / "grid" / "grid.tgrd")
    assert m["inputs"] == {grid: sha256(grid)}
    assert m["command"] == "aggregate" and "artifact_version" in m
    assert len(m["outputs"]) == 25


def test_aggregate_without_full_region_is_data_error(tmp_path):
    assert main(["synth-grid", "--width", "4", "--height", "4", "--days", "1", "--out", str(tmp_path / "g")]) == 0
    assert main(["aggregate", "--input", str(tmp_path / "g" / "grid.tgrd"), "--out", str(tmp_path / "o")]) == 3


def test_aggregate_missing_input_is_data_error(tmp_path):
    assert main(["aggregate", "--input", str(tmp_path / "nope.tgrd"), "--out", str(tmp_path / "o")]) == 3


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "checkpoint" / "meta.json").exists()
    rows = list(csv.DictReader((run / "train_log.csv").open()))
    assert {r["phase"] for r in rows} == {"critic", "generator"}
    m = manifest(run)
    assert m["seeds"] == {"seed": 3} and m["config"]["train"]["epochs"] == 1


def test_train_usage_errors(workspace, tmp_path):
    jan = str(next((workspace / "agg" / "buckets").glob("*m01*")))
    assert main(["train", "--buckets", jan, "--config", '{"bogus": 1}', "--out", str(tmp_path)]) == 2
    assert main(["train", "--buckets", jan, "--config", "{not json", "--out", str(tmp_path)]) == 2
    assert main(["train", "--buckets", jan, "--epochs", "0", "--out", str(tmp_path)]) == 2
    assert main(["train", "--out", str(tmp_path)]) == 2


def test_train_divergence_exits_numeric(workspace, tmp_path):
    jan = str(next((workspace / "agg" / "buckets").glob("*m01*")))
    cfg = json.dumps({"lr_g": 1e6, "lr_d": 1e6, "lambda_gp": 0.0, "epochs": 3, "batch_size": 16})
    assert main(["train", "--buckets", jan, "--config", cfg, "--out", str(tmp_path)]) == 4
    assert (tmp_path / "last_good" / "meta.json").exists()


def _sample(workspace, out, n, seed=0, month=1):
    return main(["sample", "--ckpt", str(workspace / "run" / "checkpoint"), "--month", str(month), "--x", "1",
                 "--y", "1", "--n", str(n), "--seed", str(seed), "--out", str(out)])


def test_sample_deterministic(workspace, tmp_path):
    assert _sample(workspace, tmp_path / "a", 5, seed=7) == 0
    assert _sample(workspace, tmp_path / "b", 5, seed=7) == 0
    a, b = (tmp_path / "a" / "samples.tbkt").read_bytes(), (tmp_path / "b" / "samples.tbkt").read_bytes()
    assert a == b
    bucket = ingest_bucket(tmp_path / "a" / "samples.tbkt")
    assert bucket.samples.shape == (5, 24, 8, 8) and bucket.label == ConditionLabel(1, 1, 1, 0)
    assert manifest(tmp_path / "a")["seeds"] == {"seed": 7}


def test_sample_zero_and_bad_label(workspace, tmp_path):
    assert _sample(workspace, tmp_path / "z", 0) == 0
    assert len(ingest_bucket(tmp_path / "z" / "samples.tbkt")) == 0
    assert _sample(workspace, tmp_path / "m", 3, month=13) == 2
    assert _sample(workspace, tmp_path / "n", -1) == 2


def test_baseline_json(workspace, tmp_path):
    jan = sorted((workspace / "agg" / "buckets").glob("*m01*"))
    assert main(["baseline", "--buckets", *map(str, jan), "--out", str(tmp_path)]) == 0
    files = sorted(tmp_path.glob("baseline_*.json"))
    assert [f.name for f in files] == ["baseline_x1_y1_k0_m01.json", "baseline_x2_y1_k0_m01.json"]
    d = json.loads(files[0].read_text())
    assert len(d["mu"]) + len(d["sigma"]) == 48


def _bucket(tmp_path, name, samples, label=ConditionLabel(1, 1, 1, 0)):
    path = tmp_path / name
    export_bucket(SampleBucket(label, np.asarray(samples, np.float32)), path)
    return str(path)


def test_eval_spacd_identical_is_zero(workspace, tmp_path):
    real = str(next((workspace / "agg" / "buckets").glob("*m01*")))
    assert main(["eval", "--metric", "spacd", "--real", real, "--gen", real, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["value"] == 0.0


def test_eval_fdtd_reference_row(tmp_path):
    # daily means equal the per-sample constant, so the bulk statistics are set exactly
    def constant_days(mu, sigma, seed):
        return np.broadcast_to(corpus_with_bulk(mu, sigma, seed=seed)[:, None, None, None], (101, 24, 8, 8))

    real = _bucket(tmp_path, "r.tbkt", constant_days(283.3407, 2.0201, 1))
    gen = _bucket(tmp_path, "g.tbkt", constant_days(282.5232, 2.0373, 2))
    assert main(["eval", "--metric", "fdtd", "--real", real, "--gen", gen, "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert abs(report["value"] - 0.8177) < 1e-3  # float32 storage costs ~1e-5
    assert set(report["params"]) >= {"mu_real", "sigma_real", "mu_gen", "sigma_gen"}


def test_eval_qq_csv_shape(workspace, tmp_path):
    real = str(next((workspace / "agg" / "buckets").glob("*m01*")))
    args = ["eval", "--metric", "qq", "--real", real, "--gen", real, "--params", '{"n_realizations": 10}',
            "--out", str(tmp_path)]
    assert main(args) == 0
    rows = list(csv.reader((tmp_path / "qq.csv").open()))
    assert rows[0] == ["level", "gt_q", "lo", "hi"]
    assert len(rows) == 100 and all(len(r) == 4 for r in rows)


@pytest.mark.parametrize("metric,files", [
    ("tgdd", ["tgdd_bins.csv"]),
    ("ecdf", ["ecdf_real.csv", "ecdf_gen.csv"]),
    ("extrema", ["extrema_real.csv", "extrema_gen.csv"]),
])
def test_eval_other_metrics(workspace, tmp_path, metric, files):
    real = str(next((workspace / "agg" / "buckets").glob("*m01*")))
    args = ["eval", "--metric", metric, "--real", real, "--ckpt", str(workspace / "run" / "checkpoint"),
            "--out", str(tmp_path)]
    assert main(args) == 0
    for f in files:
        assert (tmp_path / f).stat().st_size > 0
    assert "report.json" in manifest(tmp_path)["outputs"]


def test_eval_usage_errors(workspace, tmp_path):
    real = str(next((workspace / "agg" / "buckets").glob("*m01*")))
    ck = str(workspace / "run" / "checkpoint")
    base = ["eval", "--real", real, "--out", str(tmp_path)]
    assert main(base + ["--metric", "spacd"]) == 2
    assert main(base + ["--metric", "spacd", "--gen", real, "--ckpt", ck]) == 2
    assert main(base + ["--metric", "spacd", "--gen", real, "--params", '{"n_bins": 3}']) == 2
    assert main(base + ["--metric", "qq", "--gen", real, "--params", '{"values": "hourly"}']) == 2
    assert main(base + ["--metric", "nope", "--gen", real]) == 2


def test_eval_mismatched_masks_is_data_error(tmp_path):
    x = np.random.default_rng(0).normal(280, 2, (3, 24, 8, 8))
    y = x.copy()
    y[:, :, 0, 0] = 280.0
    real, gen = _bucket(tmp_path, "r.tbkt", x), _bucket(tmp_path, "g.tbkt", y)
    assert main(["eval", "--metric", "spacd", "--real", real, "--gen", gen, "--out", str(tmp_path / "o")]) == 3


def test_thread_env(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("TEMPGEN_THREADS", "many")
    assert _sample(workspace, tmp_path / "a", 1) == 2
    monkeypatch.setenv("TEMPGEN_THREADS", "1")
    assert _sample(workspace, tmp_path / "b", 1) == 0


def test_version_and_help(capsys):
    assert main(["--version"]) == 0
    assert main([]) == 2
