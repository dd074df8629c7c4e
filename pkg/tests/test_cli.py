import csv
import json

import pytest

from arl.cli import main

from conftest import write_toy_csv

FAST = {"train_steps": 60, "batch_size": 32, "hidden": [8], "learner_lr": 0.05, "adversary_lr": 0.05}


@pytest.fixture
def files(tmp_path):
    data, schema = write_toy_csv(tmp_path, n=300)
    config = tmp_path / "fast.json"
    config.write_text(json.dumps(FAST))
    return tmp_path, data, schema, config


def run(files, command, out, *extra):
    tmp, data, schema, config = files
    return main([command, "--data", str(data), "--schema", str(schema), "--config", str(config),
                 "--out", str(tmp / out), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestTrain:
    def test_one_seed_one_checkpoint(self, files):
        assert run(files, "train", "o", "--methods", "ERM", "--seeds", "1") == 0
        out = files[0] / "o"
        assert [p.name for p in (out / "checkpoints").iterdir()] == ["ERM_seed0.json"]
        rows = read_csv(out / "train_ERM.csv")
        assert len(rows) == 1
        assert json.loads(rows[0]["config"])["seed"] == 0
        report = json.loads((out / "train_ERM.json").read_text())
        assert report["selected_config"]["train_steps"] == 60
        assert not list(out.glob(".staging-*"))

    def test_rerun_is_byte_identical(self, files):
        tmp = files[0]
        names = ("train_ERM.csv", "train_ARL.csv", "train_ARL.json", "checkpoints/ARL_seed1.json")
        assert run(files, "train", "a", "--methods", "ERM,ARL", "--seeds", "2") == 0
        first = {n: (tmp / "a" / n).read_bytes() for n in names}
        assert run(files, "train", "a", "--methods", "ERM,ARL", "--seeds", "2") == 0
        for name in names:
            assert (tmp / "a" / name).read_bytes() == first[name]
        assert (tmp / "a" / "train.meta.json").exists()

    def test_csv_column_layout(self, files):
        run(files, "train", "o", "--methods", "ERM", "--seeds", "1")
        header = next(csv.reader(open(files[0] / "o" / "train_ERM.csv")))
        assert header[3:15] == ["auc_overall", "auc_macro_avg", "auc_min", "auc_minority", "auc_W", "auc_B",
                                "auc_M", "auc_F", "auc_WM", "auc_WF", "auc_BM", "auc_BF"]

    def test_missing_schema_exit_one(self, files, capsys):
        tmp, data, _, _ = files
        missing = tmp / "nowhere.schema.json"
        assert main(["train", "--data", str(data), "--schema", str(missing), "--out", str(tmp / "o")]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_unknown_method(self, files):
        assert run(files, "train", "o", "--methods", "SVM") == 1

    def test_bad_config_key(self, files):
        tmp = files[0]
        files[3].write_text(json.dumps({"learning_rate": 1}))
        assert run(files, "train", "o") == 1
        assert not (tmp / "o" / "train_ERM.csv").exists()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_exit_two_and_no_outputs(self, files):
        tmp = files[0]
        files[3].write_text(json.dumps({**FAST, "optimizer": "sgd", "learner_lr": 1e300}))
        assert run(files, "train", "o", "--methods", "ERM", "--seeds", "1") == 2
        assert not any(p.is_file() for p in (tmp / "o").rglob("*"))

    def test_spec_file_relative_paths(self, files):
        tmp = files[0]
        spec = {"data": "toy.csv", "schema": "toy.schema.json", "methods": ["ERM"], "config": FAST,
                "n_seeds": 1, "out": "spec_out"}
        (tmp / "exp.json").write_text(json.dumps(spec))
        assert main(["train", "--spec", str(tmp / "exp.json")]) == 0
        assert (tmp / "spec_out" / "train_ERM.csv").exists()

    def test_grid_in_spec(self, files):
        tmp = files[0]
        spec = {"data": "toy.csv", "schema": "toy.schema.json", "methods": ["ERM"], "config": FAST,
                "n_seeds": 1, "folds": 2, "grid": {"learner_lr": [0.01, 0.1]}, "out": "g"}
        (tmp / "exp.json").write_text(json.dumps(spec))
        assert main(["train", "--spec", str(tmp / "exp.json")]) == 0
        report = json.loads((tmp / "g" / "train_ERM.json").read_text())
        assert len(report["cv_table"]) == 2
        assert sum(r["best"] for r in report["cv_table"]) == 1


class TestCompare:
    def test_two_rows_in_spec_order(self, files):
        assert run(files, "compare", "c", "--methods", "ARL,ERM", "--seeds", "2") == 0
        out = files[0] / "c"
        rows = read_csv(out / "compare.csv")
        assert [r["method"] for r in rows] == ["ARL", "ERM"]
        assert sum(k.endswith("_mean") for k in rows[0]) == 12
        doc = json.loads((out / "compare.json").read_text())
        assert set(doc["best"]) <= {k[: -len("_mean")] for k in rows[0] if k.endswith("_mean")}
        assert all(v in ("ARL", "ERM") for v in doc["best"].values())

    def test_needs_two_methods(self, files):
        assert run(files, "compare", "c", "--methods", "ERM") == 1


class TestBiasSweep:
    def test_cardinality(self, files):
        tmp = files[0]
        spec = {"data": "toy.csv", "schema": "toy.schema.json", "methods": ["ERM", "ARL", "DRO"],
                "config": {**FAST, "train_steps": 20}, "n_seeds": 2, "out": "bs",
                "biases": [{"kind": "label_flip", "levels": [0.0, 0.1, 0.2, 0.3]}]}
        (tmp / "exp.json").write_text(json.dumps(spec))
        assert main(["bias-sweep", "--spec", str(tmp / "exp.json")]) == 0
        rows = read_csv(tmp / "bs" / "bias_sweep.csv")
        assert len(rows) == 12
        assert sum(int(r["n_runs"]) for r in rows) == 24
        assert {r["auc_group"] for r in rows} == {"F"}

    def test_requires_biases(self, files):
        assert run(files, "bias-sweep", "bs") == 1


class TestProbe:
    def test_one_result_per_feature(self, files):
        assert run(files, "probe", "p") == 0
        rows = read_csv(files[0] / "p" / "probe.csv")
        assert [r["feature"] for r in rows] == ["race", "sex"]

    def test_deterministic(self, files):
        run(files, "probe", "p1")
        run(files, "probe", "p2")
        tmp = files[0]
        assert (tmp / "p1" / "probe.csv").read_bytes() == (tmp / "p2" / "probe.csv").read_bytes()


class TestDiagnose:
    def test_histograms(self, files):
        tmp = files[0]
        run(files, "train", "t", "--methods", "ARL", "--seeds", "1")
        ck = tmp / "t" / "checkpoints" / "ARL_seed0.json"
        assert run(files, "diagnose", "d", "--checkpoint", str(ck)) == 0
        rows = read_csv(tmp / "d" / "lambda_histograms.csv")
        summary = json.loads((tmp / "d" / "diagnostics.json").read_text())
        assert {r["quadrant"] for r in rows} == set(summary["quadrant_counts"])
        assert len({r["quadrant"] for r in rows}) == 4
        assert sum(int(r["count"]) for r in rows) == summary["n"] == 210
        assert abs(summary["mean_lambda"] - 2.0) <= 1e-6

    def test_base_rate_curve(self, files):
        tmp = files[0]
        run(files, "train", "t", "--methods", "ARL", "--seeds", "1")
        spec = {"data": "toy.csv", "schema": "toy.schema.json", "out": "d",
                "base_rate": {"feature": "sex", "group": "F", "rates": [0.2, 0.5]}}
        (tmp / "exp.json").write_text(json.dumps(spec))
        ck = tmp / "t" / "checkpoints" / "ARL_seed0.json"
        assert main(["diagnose", "--spec", str(tmp / "exp.json"), "--checkpoint", str(ck)]) == 0
        assert len(read_csv(tmp / "d" / "base_rate_curve.csv")) == 4

    def test_rejects_non_arl(self, files, capsys):
        tmp = files[0]
        run(files, "train", "t", "--methods", "ERM", "--seeds", "1")
        ck = tmp / "t" / "checkpoints" / "ERM_seed0.json"
        assert run(files, "diagnose", "d", "--checkpoint", str(ck)) == 1
        assert "not an ARL checkpoint" in capsys.readouterr().err
