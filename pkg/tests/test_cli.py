import json

import pytest

from roundrec.cli import cli
from roundrec.config import TrainConfig, parse_config_file, resolve_config

from synthdata import generic_dataset, write_interactions_tsv


@pytest.fixture()
def mini_tsv(tmp_path):
    split = generic_dataset(n_users=20, n_items=15, min_len=6, max_len=10,
                            seed=40)
    path = tmp_path / "mini.tsv"
    write_interactions_tsv(split, path)
    return path


def run(capsys, *argv):
    code = cli(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestConfigFile:
    def test_parse_and_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("# comment\nrounds = 3\nlambda = 0.7\n"
                            "backbone = gru\n")
        values = parse_config_file(cfg_file)
        assert values == {"rounds": 3, "lam": 0.7, "backbone": "gru"}
        cfg = resolve_config(values, {"rounds": 4})
        assert cfg.rounds == 4       # flag beats file
        assert cfg.lam == 0.7        # file beats default
        assert cfg.batch_size == 1024  # default survives

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("roundz = 3\n")
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_file(cfg_file)

    def test_bool_and_types(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("enable_lft = false\nlr = 0.01\nepochs = 7\n")
        values = parse_config_file(cfg_file)
        assert values == {"enable_lft": False, "lr": 0.01, "epochs": 7}

    def test_every_field_has_a_key(self, tmp_path):
        from dataclasses import fields
        lines = []
        for f in fields(TrainConfig):
            key = "lambda" if f.name == "lam" else f.name
            default = getattr(TrainConfig(), f.name)
            lines.append(f"{key} = {default}")
        cfg_file = tmp_path / "all.cfg"
        cfg_file.write_text("\n".join(lines))
        values = parse_config_file(cfg_file)
        assert len(values) == len(fields(TrainConfig))


class TestBasicCommands:
    def test_stats_prints_json(self, capsys, mini_tsv):
        code, out, err = run(capsys, "stats", "--input", str(mini_tsv))
        assert code == 0
        payload = json.loads(out)
        assert payload["sequences"] == 20
        assert set(payload) == {"sequences", "items", "actions", "sparsity"}

    def test_unknown_subcommand_is_usage_error(self, capsys):
        code, out, err = run(capsys, "frobnicate")
        assert code == 1

    def test_missing_required_flag_is_usage_error(self, capsys):
        code, out, err = run(capsys, "evaluate", "--data", "x.json")
        assert code == 1

    def test_no_command_is_usage_error(self, capsys):
        code, out, err = run(capsys)
        assert code == 1

    def test_runtime_error_exit_code(self, capsys, tmp_path):
        code, out, err = run(capsys, "stats", "--input",
                             str(tmp_path / "absent.tsv"))
        assert code == 2
        assert "error" in err

    def test_prepare_writes_dataset(self, capsys, mini_tsv, tmp_path):
        out_dir = tmp_path / "data"
        code, out, err = run(capsys, "prepare", "--input", str(mini_tsv),
                             "--min-count", "2", "--out", str(out_dir))
        assert code == 0
        payload = json.loads(out)
        assert (out_dir / "dataset.json").exists()
        assert payload["users"] == 20


class TestPipeline:
    def test_full_pipeline(self, capsys, mini_tsv, tmp_path):
        data_dir = tmp_path / "data"
        code, out, _ = run(capsys, "prepare", "--input", str(mini_tsv),
                           "--min-count", "2", "--out", str(data_dir))
        assert code == 0
        dataset = str(data_dir / "dataset.json")

        common = ["--epochs", "1", "--batch-size", "16", "--max-len", "8",
                  "--dim", "8", "--num-blocks", "1", "--num-heads", "2",
                  "--ff-mult", "2", "--eval-k", "4", "--rounds", "2",
                  "--k-ctx", "2", "--seed", "1"]
        code, out, _ = run(capsys, "pretrain", "--data", dataset,
                           "--out", str(tmp_path / "pre"), *common)
        assert code == 0
        pre = json.loads(out)["checkpoint"]

        code, out, _ = run(capsys, "finetune", "--data", dataset,
                           "--base", pre, "--out", str(tmp_path / "ft"), *common)
        assert code == 0
        ft = json.loads(out)["checkpoint"]

        code, out, _ = run(capsys, "evaluate", "--data", dataset,
                           "--checkpoint", ft, "--split", "test", "--k", "4",
                           "--per-round", "--out", str(tmp_path / "reports"))
        assert code == 0
        report = json.loads(out)
        assert report["split"] == "test"
        assert report["k"] == 4
        assert len(report["per_round"]) == 2
        report_file = tmp_path / "reports" / "report.jsonl"
        assert report_file.exists()
        assert json.loads(report_file.read_text().strip()) == report

        code, out, _ = run(capsys, "recommend", "--data", dataset,
                           "--checkpoint", ft, "--users", "u0,u3", "--k", "4")
        assert code == 0
        lines = out.strip().split("\n")
        assert len(lines) == 2
        rec = json.loads(lines[0])
        assert rec["user"] == "u0"
        assert len(rec["items"]) == 4

    def test_sweep_csv_output(self, capsys, mini_tsv, tmp_path):
        data_dir = tmp_path / "data"
        run(capsys, "prepare", "--input", str(mini_tsv), "--min-count", "2",
            "--out", str(data_dir))
        dataset = str(data_dir / "dataset.json")
        common = ["--epochs", "0", "--batch-size", "16", "--max-len", "8",
                  "--dim", "8", "--num-blocks", "1", "--num-heads", "2",
                  "--ff-mult", "2", "--eval-k", "4", "--seed", "1"]
        code, out, _ = run(capsys, "pretrain", "--data", dataset,
                           "--out", str(tmp_path / "pre"), *common)
        pre = json.loads(out)["checkpoint"]
        code, out, _ = run(capsys, "sweep", "--data", dataset, "--base", pre,
                           "--t-values", "1,2", "--lambda-values", "0.5,1.0",
                           "--out", str(tmp_path / "sw"), *common)
        assert code == 0
        lines = out.strip().split("\n")
        assert lines[0] == "T,lambda,hr,ndcg"
        assert len(lines) == 5
        assert (tmp_path / "sw" / "sweep.csv").read_text().startswith("T,lambda")

    def test_evaluate_respects_config_in_checkpoint(self, capsys, mini_tsv,
                                                    tmp_path):
        data_dir = tmp_path / "data"
        run(capsys, "prepare", "--input", str(mini_tsv), "--min-count", "2",
            "--out", str(data_dir))
        dataset = str(data_dir / "dataset.json")
        code, out, _ = run(capsys, "pretrain", "--data", dataset,
                           "--out", str(tmp_path / "pre"), "--epochs", "0",
                           "--batch-size", "16", "--max-len", "8", "--dim", "8",
                           "--num-blocks", "1", "--num-heads", "2",
                           "--ff-mult", "2", "--eval-k", "4")
        pre = json.loads(out)["checkpoint"]
        code, out, _ = run(capsys, "evaluate", "--data", dataset,
                           "--checkpoint", pre, "--split", "valid")
        assert code == 0
        assert json.loads(out)["k"] == 4
