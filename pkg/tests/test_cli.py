import json

import numpy as np
import pytest
import yaml

from pdalab.cli import BOUND_TRACE_COLUMNS, main
from pdalab.config import load_config
from pdalab.metrics import read_metrics


def write_config(path, **overrides):
    cfg = {
        "seed": 0,
        "variant": "san_pp",
        "data": {"synthetic": {"samples_per_class": 12, "seed": 1}},
        "schedule": {"total_epochs": 3, "warmup_epochs": 1, "batch_size": 8,
                     "eta0": 0.05},
    }
    cfg.update(overrides)
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestGenerateData:
    def test_writes_expected_files(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml",
                           data={"synthetic": {"samples_per_class": 100, "seed": 2}})
        out = tmp_path / "data"
        assert main(["generate-data", "--config", str(cfg), "--out", str(out)]) == 0
        source = (out / "source.csv").read_text().splitlines()
        target = (out / "target.csv").read_text().splitlines()
        assert len(source) == 501  # header + 5 classes x 100
        assert len(target) == 301  # header + 3 classes x 100
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["num_source_classes"] == 5
        assert meta["shared_classes"] == [0, 1, 2]

    def test_idempotent_per_seed(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["generate-data", "--config", str(cfg), "--out", str(out_a)])
        main(["generate-data", "--config", str(cfg), "--out", str(out_b)])
        for name in ("source.csv", "target.csv", "metadata.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_invalid_shared_classes_fail_before_writing(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml",
                           data={"synthetic": {"shared_classes": [0, 9]}})
        out = tmp_path / "data"
        assert main(["generate-data", "--config", str(cfg), "--out", str(out)]) == 1
        assert "error:" in capsys.readouterr().err
        assert not out.exists() or not any(out.iterdir())


class TestTrain:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(out_b)]) == 0
        assert (out_a / "metrics.jsonl").read_bytes() == (out_b / "metrics.jsonl").read_bytes()
        assert (out_a / "model.json").read_bytes() == (out_b / "model.json").read_bytes()
        assert (out_a / "confusion.csv").read_bytes() == (out_b / "confusion.csv").read_bytes()
        records = read_metrics(out_a / "metrics.jsonl")
        assert len(records) == 4  # init + 3 epochs
        assert records[0].losses is None
        assert all(r.bound is not None for r in records)

    def test_source_only_has_zero_adversarial_loss(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", variant="source_only")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        records = read_metrics(out / "metrics.jsonl")
        assert all(r.losses.l_adv == 0.0 for r in records if r.losses is not None)

    def test_effective_config_replays_run(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml",
                           data={"synthetic": {"samples_per_class": 12}})
        out_a = tmp_path / "a"
        assert main(["train", "--config", str(cfg), "--out", str(out_a),
                     "--seed", "5"]) == 0
        effective = load_config(out_a / "effective_config.yaml")
        assert effective.seed == 5
        assert effective.data.seed is not None  # derived seed resolved
        out_b = tmp_path / "b"
        assert main(["train", "--config", str(out_a / "effective_config.yaml"),
                     "--out", str(out_b)]) == 0
        assert (out_a / "metrics.jsonl").read_bytes() == \
            (out_b / "metrics.jsonl").read_bytes()

    def test_variant_override(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out),
                     "--variant", "dann"]) == 0
        effective = load_config(out / "effective_config.yaml")
        assert effective.variant == "dann"

    def test_csv_data_round_trip(self, tmp_path):
        gen_cfg = write_config(tmp_path / "gen.yaml")
        data_dir = tmp_path / "data"
        main(["generate-data", "--config", str(gen_cfg), "--out", str(data_dir)])
        train_cfg = write_config(
            tmp_path / "train.yaml",
            data={"csv": {"source": str(data_dir / "source.csv"),
                          "target": str(data_dir / "target.csv"),
                          "metadata": str(data_dir / "metadata.json")}})
        out = tmp_path / "run"
        assert main(["train", "--config", str(train_cfg), "--out", str(out)]) == 0
        records = read_metrics(out / "metrics.jsonl")
        assert records[-1].target_accuracy is not None

    def test_bad_config_nonzero_exit(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("schedule:\n  lr: 0.1\n")
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
        assert "unknown keys" in capsys.readouterr().err


class TestBoundTrace:
    def test_table_shape_and_columns(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml")
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out)])
        trace = tmp_path / "trace.csv"
        assert main(["bound-trace", str(out / "metrics.jsonl"),
                     "--out", str(trace)]) == 0
        lines = trace.read_text().splitlines()
        assert lines[0] == ",".join(BOUND_TRACE_COLUMNS)
        assert len(lines) == 1 + 4  # header + init + 3 epochs
        records = read_metrics(out / "metrics.jsonl")
        for line, rec in zip(lines[1:], records):
            fields = line.split(",")
            assert int(fields[0]) == rec.epoch
            assert float(fields[1]) == rec.bound.w_error_l1
            assert float(fields[1]) <= rec.bound.rhs_intermediate + 1e-9

    def test_stdout_output(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml")
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["bound-trace", str(out / "metrics.jsonl")]) == 0
        stdout = capsys.readouterr().out
        assert stdout.startswith("epoch,")

    def test_missing_file_nonzero(self, tmp_path, capsys):
        assert main(["bound-trace", str(tmp_path / "nope.jsonl")]) == 1
        assert "error:" in capsys.readouterr().err


class TestAblate:
    def test_deterministic_single_seed_table(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml",
                           schedule={"total_epochs": 2, "warmup_epochs": 1,
                                     "batch_size": 8, "eta0": 0.05})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["ablate", "--config", str(cfg), "--seeds", "1",
                     "--out", str(out_a)]) == 0
        assert main(["ablate", "--config", str(cfg), "--seeds", "1",
                     "--out", str(out_b)]) == 0
        table_a = (out_a / "ablation.csv").read_text()
        assert table_a == (out_b / "ablation.csv").read_text()
        rows = table_a.splitlines()
        assert rows[0] == "variant,seeds,mean_accuracy,std_accuracy"
        names = [r.split(",")[0] for r in rows[1:]]
        assert names == ["source_only", "instance", "instance_class",
                         "instance_class_entropy", "instance_class_self_private",
                         "san_pp"]
        for row in rows[1:]:
            _, k, mean_acc, std_acc = row.split(",")
            assert int(k) == 1
            assert 0.0 <= float(mean_acc) <= 1.0
            assert float(std_acc) == 0.0

    def test_workers_do_not_change_results(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml",
                           schedule={"total_epochs": 1, "warmup_epochs": 1,
                                     "batch_size": 8, "eta0": 0.05})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["ablate", "--config", str(cfg), "--seeds", "2",
                     "--out", str(out_a)]) == 0
        assert main(["ablate", "--config", str(cfg), "--seeds", "2",
                     "--workers", "2", "--out", str(out_b)]) == 0
        assert (out_a / "ablation.csv").read_text() == \
            (out_b / "ablation.csv").read_text()


class TestEval:
    def test_eval_matches_training_accuracy(self, tmp_path, capsys):
        gen_cfg = write_config(tmp_path / "gen.yaml")
        data_dir = tmp_path / "data"
        main(["generate-data", "--config", str(gen_cfg), "--out", str(data_dir)])
        train_cfg = write_config(
            tmp_path / "train.yaml",
            data={"csv": {"source": str(data_dir / "source.csv"),
                          "target": str(data_dir / "target.csv"),
                          "metadata": str(data_dir / "metadata.json")}})
        out = tmp_path / "run"
        main(["train", "--config", str(train_cfg), "--out", str(out)])
        final_acc = read_metrics(out / "metrics.jsonl")[-1].target_accuracy
        capsys.readouterr()
        assert main(["eval", "--model", str(out / "model.json"),
                     "--data", str(data_dir),
                     "--out", str(tmp_path / "conf.csv")]) == 0
        stdout = capsys.readouterr().out
        assert f"{final_acc:.4f}" in stdout
        conf = (tmp_path / "conf.csv").read_text()
        total = sum(int(v) for line in conf.splitlines()[1:] for v in line.split(","))
        assert total == 36  # 3 shared classes x 12
