"""End-to-end CLI tests: subcommands, exit codes, and output determinism."""

import numpy as np
import pytest
import yaml

from incshallow.cli import main
from incshallow.features import load_dataset


def gen(tmp_path, name="data", classes=6, dim=8, train=12, test=6, sep=5.0,
        seed=3, vpc=4, fmt="binary"):
    ds_path = tmp_path / f"{name}.dsf"
    ev_path = tmp_path / f"{name}_eval.dsf"
    rc = main(["gen-synthetic", "--classes", str(classes), "--dim", str(dim),
               "--train-per-class", str(train), "--test-per-class", str(test),
               "--validation-per-class", str(vpc), "--separation", str(sep),
               "--seed", str(seed), "--format", fmt,
               "--out-dataset", str(ds_path), "--out-eval", str(ev_path)])
    assert rc == 0
    return ds_path, ev_path


def write_config(tmp_path, ds_path, ev_path, name="config.yaml", **overrides):
    doc = {
        "memory_budget": 24,
        "strategy": "rand",
        "seed": 5,
        "c_grid": [1.0],
        "validation_per_class": 4,
        "dataset": str(ds_path),
        "eval": str(ev_path),
        "batches": {"count": 3, "size": 2},
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def find_run_dir(out_dir):
    runs = [p for p in out_dir.iterdir() if p.is_dir()]
    assert len(runs) == 1
    return runs[0]


class TestGenSynthetic:

    def test_deterministic_files(self, tmp_path):
        a = gen(tmp_path, "a", seed=7)
        b = gen(tmp_path, "b", seed=7)
        assert a[0].read_bytes() == b[0].read_bytes()
        assert a[1].read_bytes() == b[1].read_bytes()

    def test_output_loads(self, tmp_path):
        ds_path, _ = gen(tmp_path)
        ds = load_dataset(ds_path, validation_per_class=4, seed=3)
        assert len(ds.classes) == 6

    def test_zero_classes_rejected(self, tmp_path):
        rc = main(["gen-synthetic", "--classes", "0", "--dim", "4",
                   "--out-dataset", str(tmp_path / "x.dsf"),
                   "--out-eval", str(tmp_path / "y.dsf")])
        assert rc == 1

    def test_csv_format(self, tmp_path):
        ds_path, _ = gen(tmp_path, "c", fmt="csv", classes=3, train=6, test=2)
        ds = load_dataset(ds_path, fmt="csv", validation_per_class=4, seed=3)
        assert len(ds.classes) == 3


class TestRun:

    def test_successful_run_artifacts(self, tmp_path, capsys):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path)
        assert main(["run", str(cfg)]) == 0
        run_dir = find_run_dir(tmp_path / "out")
        report = (run_dir / "reports" / "report.csv").read_text().splitlines()
        assert report[0] == "state,classes,top1,top5,wall_time"
        assert len(report) == 4  # header + one row per batch
        assert (run_dir / "manifest.txt").exists()
        for s in range(3):
            assert (run_dir / "states" / f"state_{s:03d}" / "manifest.txt").exists()
        out = capsys.readouterr().out
        assert "state 2" in out

    def test_zero_budget_names_field(self, tmp_path, capsys):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path, memory_budget=0)
        assert main(["run", str(cfg)]) == 1
        assert "memory_budget" in capsys.readouterr().err

    def test_unknown_key_names_field(self, tmp_path, capsys):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path, memory_bugdet=10)
        assert main(["run", str(cfg)]) == 1
        assert "memory_bugdet" in capsys.readouterr().err

    def test_missing_dataset_file_is_data_error(self, tmp_path):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path,
                           dataset=str(tmp_path / "gone.dsf"))
        assert main(["run", str(cfg)]) == 2

    def test_rerun_identical_reports(self, tmp_path, monkeypatch):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path)
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "out_a"))
        assert main(["run", str(cfg)]) == 0
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "out_b"))
        assert main(["run", str(cfg)]) == 0
        a = find_run_dir(tmp_path / "out_a")
        b = find_run_dir(tmp_path / "out_b")
        assert a.name == b.name  # run id excludes the output location
        assert (a / "reports" / "report_plot.csv").read_bytes() == \
               (b / "reports" / "report_plot.csv").read_bytes()

    def test_worker_count_does_not_change_reports(self, tmp_path, monkeypatch):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path)
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "w1"))
        monkeypatch.setenv("INCSHALLOW_WORKERS", "1")
        assert main(["run", str(cfg)]) == 0
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "w8"))
        monkeypatch.setenv("INCSHALLOW_WORKERS", "8")
        assert main(["run", str(cfg)]) == 0
        a = find_run_dir(tmp_path / "w1") / "reports" / "report_plot.csv"
        b = find_run_dir(tmp_path / "w8") / "reports" / "report_plot.csv"
        assert a.read_bytes() == b.read_bytes()

    def test_resume_from_checkpoint(self, tmp_path, monkeypatch):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path)
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "full"))
        assert main(["run", str(cfg)]) == 0
        full = find_run_dir(tmp_path / "full")
        ckpt = full / "states" / "state_001"
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "resumed"))
        assert main(["run", str(cfg), "--resume", str(ckpt)]) == 0
        resumed = find_run_dir(tmp_path / "resumed")
        full_rows = (full / "reports" / "report_plot.csv").read_text().splitlines()
        res_rows = (resumed / "reports" / "report_plot.csv").read_text().splitlines()
        assert res_rows[1] == full_rows[3]  # the resumed state 2 row matches


class TestSelectNegatives:

    @pytest.fixture()
    def run_setup(self, tmp_path, monkeypatch):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path)
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "out"))
        assert main(["run", str(cfg)]) == 0
        ckpt = find_run_dir(tmp_path / "out") / "states" / "state_001"
        return cfg, ckpt

    def test_div_is_seed_free_deterministic(self, tmp_path, run_setup):
        cfg, ckpt = run_setup
        div_cfg = write_config(tmp_path, yaml.safe_load(cfg.read_text())["dataset"],
                               yaml.safe_load(cfg.read_text())["eval"],
                               name="div.yaml", strategy="div")
        a, b = tmp_path / "a.dsf", tmp_path / "b.dsf"
        assert main(["select-negatives", str(div_cfg), str(ckpt), "--out", str(a)]) == 0
        assert main(["select-negatives", str(div_cfg), str(ckpt), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_rand_seeds_produce_different_snapshots(self, tmp_path, run_setup):
        cfg, ckpt = run_setup
        snapshots = []
        for seed in range(10):
            out = tmp_path / f"s{seed}.dsf"
            assert main(["select-negatives", str(cfg), str(ckpt),
                         "--seed", str(seed), "--out", str(out)]) == 0
            snapshots.append(out.read_bytes())
        assert len(set(snapshots)) > 1

    def test_ind_without_external_pool(self, tmp_path, run_setup, capsys):
        cfg, ckpt = run_setup
        doc = yaml.safe_load(cfg.read_text())
        doc["strategy"] = "ind"
        bad = tmp_path / "ind.yaml"
        bad.write_text(yaml.safe_dump(doc))
        assert main(["select-negatives", str(bad), str(ckpt),
                     "--out", str(tmp_path / "x.dsf")]) == 1
        assert "external" in capsys.readouterr().err


class TestEvaluate:

    @pytest.fixture()
    def checkpoint(self, tmp_path, monkeypatch):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path)
        monkeypatch.setenv("INCSHALLOW_OUTPUT_DIR", str(tmp_path / "out"))
        assert main(["run", str(cfg)]) == 0
        return (find_run_dir(tmp_path / "out") / "states" / "state_002", ev_path)

    def test_accuracy_columns(self, tmp_path, checkpoint, capsys):
        ckpt, ev_path = checkpoint
        out = tmp_path / "acc.csv"
        assert main(["evaluate", str(ckpt), str(ev_path),
                     "--k", "1,5", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "classes,top1,top5"
        assert len(lines) == 2

    def test_deterministic(self, tmp_path, checkpoint):
        ckpt, ev_path = checkpoint
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["evaluate", str(ckpt), str(ev_path), "--out", str(a)]) == 0
        assert main(["evaluate", str(ckpt), str(ev_path), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_class_is_data_error(self, tmp_path, checkpoint, capsys):
        ckpt, _ = checkpoint
        from incshallow.features import write_records
        rogue = tmp_path / "rogue.dsf"
        write_records(rogue, np.array([444], dtype=np.int32),
                      np.ones((1, 8), dtype=np.float32))
        assert main(["evaluate", str(ckpt), str(rogue)]) == 2
        assert "444" in capsys.readouterr().err

    def test_bad_k(self, tmp_path, checkpoint):
        ckpt, ev_path = checkpoint
        assert main(["evaluate", str(ckpt), str(ev_path), "--k", "zero"]) == 1


class TestGridSearchCommand:

    def test_writes_table(self, tmp_path, capsys):
        ds_path, ev_path = gen(tmp_path)
        cfg = write_config(tmp_path, ds_path, ev_path, c_grid=[0.1, 1.0])
        out = tmp_path / "grid.csv"
        assert main(["gridsearch-c", str(cfg), "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "c,val_top1"
        assert len(lines) == 3
        assert "best c" in capsys.readouterr().out
