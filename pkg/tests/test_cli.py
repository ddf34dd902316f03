import csv
import json

import numpy as np
import pytest

from dualtemp import cli


def tiny_train_args(out, **extra):
    args = [
        "--framework", "simco",
        "--epochs", "1",
        "--samples", "80",
        "--classes", "4",
        "--dim", "8",
        "--batch-size", "32",
        "--seeds", "1",
        "--output", str(out),
    ]
    for key, value in extra.items():
        args.extend([f"--{key.replace('_', '-')}", str(value)])
    return args


class TestConfigResolution:
    def test_defaults(self):
        cfg = cli.resolve_config([])
        assert cfg.mode == "train"
        assert cfg.framework == "simco"
        assert cfg.seeds == (0, 1, 2)
        assert cfg.dim == 64
        assert cfg.taus == (0.1,)
        assert cfg.dict_sizes == (64, 256, 1024, 4096)

    def test_sweep_mode_defaults_to_embedding_dim(self):
        cfg = cli.resolve_config(["--mode", "entropy-sweep"])
        assert cfg.dim == 32
        assert cli.resolve_config(["--mode", "entropy-sweep", "--dim", "16"]).dim == 16

    def test_seed_count_versus_list(self):
        assert cli.resolve_config(["--seeds", "4"]).seeds == (0, 1, 2, 3)
        assert cli.resolve_config(["--seeds", "0,5,9"]).seeds == (0, 5, 9)
        assert cli.resolve_config(["--seeds", "7,"]).seeds == (7,)

    def test_framework_aliases_expand(self):
        cfg = cli.resolve_config(["--framework", "st", "--tau-alpha", "0.2"])
        spec = cfg.framework_spec()
        assert spec.name == "st-simco"
        assert spec.dt.tau_alpha == spec.dt.tau_beta == 0.2
        assert cli.resolve_config(["--framework", "noncl"]).framework_spec().name == "noncl-simsiam"

    def test_sample_counts_clamped_to_queue(self):
        cfg = cli.resolve_config(["--framework", "mocov2", "--dict-size-scalar", "64"])
        spec = cfg.framework_spec()
        assert spec.sample_scalar == 64 and spec.sample_vector == 128

    def test_invalid_noise_ratio_rejected(self):
        with pytest.raises(ValueError, match="ratio"):
            cli.resolve_config(["--label-noise", "symmetric", "--noise-ratio", "1.0"])

    def test_missing_dataset_file_rejected_before_run(self):
        with pytest.raises(ValueError, match="not found"):
            cli.resolve_config(["--dataset", "/does/not/exist.bin"])

    def test_unknown_flag_exits_with_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.resolve_config(["--frobnicate"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_mode_choice_rejected(self):
        with pytest.raises(SystemExit):
            cli.resolve_config(["--mode", "evaluate"])


class TestTrainMode:
    def test_writes_per_seed_logs_summary_and_echo(self, tmp_path, capsys):
        out = tmp_path / "runs"
        assert cli.main(tiny_train_args(out, seeds="2")) == 0
        assert (out / "simco_seed0.jsonl").is_file()
        assert (out / "simco_seed1.jsonl").is_file()
        with open(out / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [row["seed"] for row in rows] == ["0", "1"]
        assert all(0.0 <= float(row["final_top1"]) <= 1.0 for row in rows)
        config = json.loads((out / "config.json").read_text())
        assert config["seeds"] == [0, 1]
        assert config["epochs"] == 1
        assert "mean top1" in capsys.readouterr().out

    def test_rerun_from_echo_is_byte_identical(self, tmp_path):
        first = tmp_path / "a"
        second = tmp_path / "b"
        assert cli.main(tiny_train_args(first)) == 0
        assert cli.main(["--config", str(first / "config.json"), "--output", str(second)]) == 0
        assert (first / "simco_seed0.jsonl").read_bytes() == (second / "simco_seed0.jsonl").read_bytes()

    def test_jsonl_rows_parse_with_expected_fields(self, tmp_path):
        out = tmp_path / "runs"
        assert cli.main(tiny_train_args(out)) == 0
        lines = (out / "simco_seed0.jsonl").read_text().splitlines()
        assert len(lines) == 1
        row = json.loads(lines[0])
        assert row["framework"] == "simco" and row["seed"] == 0
        assert set(row) >= {"epoch", "step", "loss", "top1", "r_plus_entropy", "lr"}

    def test_cifar_input_not_mutated(self, tmp_path):
        records = b"".join(bytes([label]) + bytes([label * 10]) * 3072 for label in range(8))
        data = tmp_path / "mini.bin"
        data.write_bytes(records)
        out = tmp_path / "runs"
        rc = cli.main(
            [
                "--dataset", str(data),
                "--variant", "cifar10",
                "--epochs", "1",
                "--batch-size", "4",
                "--seeds", "1",
                "--output", str(out),
            ]
        )
        assert rc == 0
        assert data.read_bytes() == records

    def test_label_noise_flags_round_trip_config(self, tmp_path):
        out = tmp_path / "runs"
        assert cli.main(tiny_train_args(out, label_noise="symmetric", noise_ratio="0.4")) == 0
        config = json.loads((out / "config.json").read_text())
        assert config["label_noise"] == "symmetric"
        assert config["noise_ratio"] == 0.4

    def test_component_failure_exits_nonzero(self, tmp_path, capsys):
        # file exists, so config resolution passes, but the record length is bad
        bad = tmp_path / "truncated.bin"
        bad.write_bytes(bytes(3073 + 5))
        rc = cli.main(["--dataset", str(bad), "--output", str(tmp_path / "runs")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "error:" in err and "3073" in err

    def test_config_with_unknown_keys_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"framework": "simco", "banana": 1}))
        rc = cli.main(["--config", str(bad)])
        assert rc == 1
        assert "unknown keys" in capsys.readouterr().err


class TestSweepModes:
    def test_entropy_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep"
        rc = cli.main(
            ["--mode", "entropy-sweep", "--dict-sizes", "16,64", "--seeds", "2", "--output", str(out)]
        )
        assert rc == 0
        with open(out / "entropy_sweep.csv") as fh:
            reader = csv.reader(fh)
            assert next(reader) == ["K", "tau", "seed", "value"]
            body = list(reader)
        assert {row[0] for row in body} == {"16", "64"}
        assert len(body) == 4  # 2 sizes x 1 tau x 2 seeds

    def test_similarity_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep"
        rc = cli.main(
            ["--mode", "similarity-sweep", "--dict-sizes", "16,64", "--seeds", "2", "--output", str(out)]
        )
        assert rc == 0
        with open(out / "similarity_sweep.csv") as fh:
            body = list(csv.reader(fh))[1:]
        values = [float(row[3]) for row in body]
        assert all(-1.0 <= v <= 1.0 for v in values)


class TestGradcheckMode:
    def test_gradcheck_passes_and_prints_every_case(self, tmp_path, capsys):
        rc = cli.main(["--mode", "gradcheck", "--output", str(tmp_path / "gc")])
        assert rc == 0
        output = capsys.readouterr().out
        for name in ("infonce_loss", "simple_loss", "dt_loss", "noncl_loss", "ce_dt_loss", "trainer_params"):
            assert f"gradcheck {name}" in output
        assert "FAIL" not in output
