"""End-to-end command line tests, driven in-process through ``cli.main``."""

import io
import json
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from sentifuse import bench, cli


SMALL_FUSION = ["--hidden-dim", "4", "--attn-dim", "4",
                "--filters-per-width", "2", "--kernel-widths", "2"]


def invoke(argv):
    """Run the CLI in-process; returns (exit_code, stdout_text)."""
    buf = io.StringIO()
    with redirect_stdout(buf):
        rc = cli.main(argv)
    return rc, buf.getvalue()


def json_lines(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


@pytest.fixture(scope="module")
def fusion_run(tmp_path_factory):
    """One small fusion training run on the bundled corpus, shared read-only."""
    out = tmp_path_factory.mktemp("fusion_run")
    argv = ["train", "--model", "fusion", *SMALL_FUSION,
            "--epochs", "6", "--lr", "0.05", "--seed", "0", "--out-dir", str(out)]
    rc, stdout = invoke(argv)
    assert rc == 0
    return {"out": out, "summary": json.loads(stdout), "argv": argv}


@pytest.fixture(scope="module")
def rae_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("rae_run")
    rc, stdout = invoke(["train", "--model", "rae", "--max-iter", "5",
                         "--no-trainable-embeddings", "--out-dir", str(out)])
    assert rc == 0
    return {"out": out, "summary": json.loads(stdout)}


class TestTrain:
    def test_summary_reports_perfect_fit_and_checkpoint(self, fusion_run):
        summary = fusion_run["summary"]
        assert summary["event"] == "train_done"
        assert summary["model"] == "fusion"
        assert summary["train_accuracy"] == 1.0
        assert summary["examples"] == 40
        assert Path(summary["checkpoint"]).exists()
        # the bundled corpus is CV-split, so there is no held-out test score
        assert "test_accuracy" not in summary

    def test_metrics_log_has_start_epochs_and_summary(self, fusion_run):
        events = json_lines(fusion_run["out"] / "metrics.jsonl")
        assert events[0]["event"] == "train_start"
        assert events[0]["examples"] == 40
        epochs = [e for e in events if e["event"] == "epoch"]
        assert [e["epoch"] for e in epochs] == list(range(6))
        for e in epochs:
            assert np.isfinite(e["mean_loss"])
            assert 0.0 <= e["train_accuracy"] <= 1.0
        assert events[-1]["event"] == "train_done"

    def test_repeat_run_reproduces_metrics_bit_identically(self, fusion_run, tmp_path):
        argv = list(fusion_run["argv"])
        argv[argv.index("--out-dir") + 1] = str(tmp_path)
        rc, stdout = invoke(argv)
        assert rc == 0
        replay = json.loads(stdout)
        first = dict(fusion_run["summary"])
        replay.pop("checkpoint"), first.pop("checkpoint")
        assert replay == first

        def events_without_paths(out_dir):
            rows = json_lines(out_dir / "metrics.jsonl")
            for row in rows:
                row.pop("checkpoint", None)
            return rows

        assert (events_without_paths(tmp_path)
                == events_without_paths(fusion_run["out"]))

    def test_rae_training_writes_a_loadable_checkpoint(self, rae_run):
        summary = rae_run["summary"]
        assert summary["model"] == "rae"
        assert summary["train_accuracy"] >= 0.5
        assert Path(summary["checkpoint"]).name == "rae.npz"


class TestEval:
    def test_eval_reports_per_class_metrics(self, fusion_run, tmp_path):
        ckpt = fusion_run["summary"]["checkpoint"]
        rc, stdout = invoke(["eval", "--checkpoint", ckpt, "--out-dir", str(tmp_path)])
        assert rc == 0
        result = json.loads(stdout)
        assert result["event"] == "eval"
        assert result["accuracy"] == 1.0
        assert result["examples"] == 40
        for cls in ("0", "1"):
            assert result["per_class"][cls]["support"] == 20
            assert result["per_class"][cls]["precision"] == 1.0
            assert result["per_class"][cls]["recall"] == 1.0

    def test_eval_matches_training_accuracy_for_rae(self, rae_run, tmp_path):
        ckpt = rae_run["summary"]["checkpoint"]
        rc, stdout = invoke(["eval", "--checkpoint", ckpt, "--out-dir", str(tmp_path)])
        assert rc == 0
        # same 40 sentences, same vocabulary: accuracy must agree exactly
        assert json.loads(stdout)["accuracy"] == rae_run["summary"]["train_accuracy"]

    def test_missing_checkpoint_is_a_runtime_failure(self, tmp_path, capsys):
        rc = cli.main(["eval", "--checkpoint", str(tmp_path / "nope.npz"),
                       "--out-dir", str(tmp_path)])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


CV_ARGV = ["cv", "--model", "fusion", *SMALL_FUSION, "--epochs", "4",
           "--lr", "0.05", "--folds", "5"]


class TestCrossValidation:
    def test_summary_aggregates_the_folds(self, tmp_path):
        rc, stdout = invoke([*CV_ARGV, "--out-dir", str(tmp_path)])
        assert rc == 0
        summary = json.loads(stdout)
        assert summary["event"] == "cv_done"
        assert summary["folds"] == 5
        accs = summary["fold_accuracies"]
        assert len(accs) == 5
        assert summary["mean_accuracy"] == float(np.mean(accs))
        folds = [e for e in json_lines(tmp_path / "metrics.jsonl")
                 if e["event"] == "fold"]
        assert [f["fold"] for f in folds] == list(range(5))
        assert all(f["train_size"] + f["test_size"] == 40 for f in folds)

    def test_parallel_folds_match_serial(self, tmp_path):
        rc1, out1 = invoke([*CV_ARGV, "--out-dir", str(tmp_path / "serial")])
        rc2, out2 = invoke([*CV_ARGV, "--jobs", "2", "--out-dir", str(tmp_path / "par")])
        assert rc1 == rc2 == 0
        assert json.loads(out1) == json.loads(out2)


class TestSweepDim:
    def test_single_dim_sweep_reports_best(self, tmp_path):
        rc, stdout = invoke(["sweep-dim", "--dims", "50", "--model", "fusion",
                             *SMALL_FUSION, "--epochs", "3", "--lr", "0.05",
                             "--folds", "3", "--out-dir", str(tmp_path)])
        assert rc == 0
        summary = json.loads(stdout)
        assert summary["event"] == "sweep_done"
        assert summary["best_dim"] == 50
        assert len(summary["points"]) == 1
        assert summary["points"][0]["embed_dim"] == 50
        events = [e["event"] for e in json_lines(tmp_path / "metrics.jsonl")]
        assert "sweep_point" in events

    def test_dims_outside_the_menu_are_rejected(self, tmp_path, capsys):
        rc = cli.main(["sweep-dim", "--dims", "17", "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "17" in capsys.readouterr().err


class TestGradcheck:
    def test_fusion_objective_passes(self, tmp_path):
        rc, stdout = invoke(["gradcheck", "--model", "fusion", *SMALL_FUSION,
                             "--coords", "60", "--out-dir", str(tmp_path)])
        assert rc == 0
        assert stdout.startswith("grad check PASS")

    def test_rae_defaults_have_no_flagged_coords(self, tmp_path):
        rc, stdout = invoke(["gradcheck", "--model", "rae",
                             "--json", "--out-dir", str(tmp_path)])
        assert rc == 0
        report = json.loads(stdout)
        assert report["passed"] is True
        assert report["flagged"] == []
        assert report["num_checked"] > report["num_small"]

    def test_rae_with_frozen_embeddings_has_no_flagged_coords(self, tmp_path):
        rc, stdout = invoke(["gradcheck", "--model", "rae",
                             "--no-trainable-embeddings", "--coords", "60",
                             "--json", "--out-dir", str(tmp_path)])
        assert rc == 0
        report = json.loads(stdout)
        assert report["passed"] is True
        assert report["flagged"] == []
        assert report["num_checked"] == 60

    def test_unattainable_tolerance_is_inconclusive_exit_two(self, tmp_path, capsys):
        # at tol 1e-13 no slope clears the conditioning floor, so nothing
        # can be verified and the command must not report success
        rc = cli.main(["gradcheck", "--model", "fusion", *SMALL_FUSION,
                       "--coords", "40", "--gc-tol", "1e-13",
                       "--out-dir", str(tmp_path)])
        assert rc == 2
        assert "inconclusive" in capsys.readouterr().err


class TestTree:
    def test_two_words_merge_once(self, tmp_path):
        rc, stdout = invoke(["tree", "--sentence", "good movie",
                             "--out-dir", str(tmp_path)])
        assert rc == 0
        assert stdout.strip() == "(good movie)"

    def test_three_words_form_one_binary_tree(self, tmp_path):
        argv = ["tree", "--sentence", "very good movie", "--out-dir", str(tmp_path)]
        rc, stdout = invoke(argv)
        assert rc == 0
        shape = stdout.strip()
        assert shape in ("((very good) movie)", "(very (good movie))")
        assert invoke(argv)[1].strip() == shape  # deterministic under one seed

    def test_checkpoint_adds_a_class_prediction(self, rae_run, tmp_path):
        ckpt = rae_run["summary"]["checkpoint"]
        rc, stdout = invoke(["tree", "--sentence", "dull film", "--checkpoint",
                             ckpt, "--out-dir", str(tmp_path)])
        assert rc == 0
        tree_line, verdict = stdout.strip().splitlines()
        assert tree_line == "(dull film)"
        assert json.loads(verdict)["predicted_class"] in (0, 1)

    def test_empty_sentence_is_a_data_error(self, tmp_path, capsys):
        rc = cli.main(["tree", "--sentence", "   ", "--out-dir", str(tmp_path)])
        assert rc == 2


class TestBench:
    def test_variant_rows_and_csv_round_trip(self, tmp_path):
        csv_path = tmp_path / "fresh" / "bench.csv"  # parent dir made on demand
        rc, stdout = invoke(["bench", "--what", "variants", "--variants",
                             "cnn,bisru", *SMALL_FUSION, "--epochs", "2",
                             "--csv", str(csv_path), "--out-dir", str(tmp_path)])
        assert rc == 0
        assert stdout.splitlines()[0].startswith("kernel backend:")
        assert "cnn_only" in stdout and "bisru_only" in stdout
        rows = bench.read_csv(csv_path)
        assert {r["variant"] for r in rows} == {"cnn_only", "bisru_only"}

    def test_kernel_comparison_lists_every_backend(self, tmp_path):
        from sentifuse import kernels
        rc, stdout = invoke(["bench", "--what", "kernels", "--repeats", "2",
                             "--out-dir", str(tmp_path)])
        assert rc == 0
        for name in kernels.available_backends():
            assert name in stdout


def parse_config(argv):
    return cli.build_config(cli.build_parser().parse_args(argv))


class TestConfigPrecedence:
    def test_flags_override_the_config_file(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"lr": 0.5, "epochs": 3}))
        cfg = parse_config(["train", "--config", str(cfg_file), "--lr", "0.05"])
        assert cfg.lr == 0.05       # flag wins
        assert cfg.epochs == 3      # file beats the default
        assert cfg.momentum == 0.9  # untouched default

    def test_outdir_env_beats_file_and_loses_to_flag(self, tmp_path, monkeypatch):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"out_dir": "from_file"}))
        monkeypatch.setenv("SENTIFUSE_OUTDIR", "from_env")
        cfg = parse_config(["train", "--config", str(cfg_file)])
        assert cfg.out_dir == "from_env"
        cfg = parse_config(["train", "--config", str(cfg_file),
                            "--out-dir", "from_flag"])
        assert cfg.out_dir == "from_flag"

    @pytest.mark.parametrize("alias,canonical", [
        ("cnn", "cnn_only"), ("bisru", "bisru_only"), ("bilstm", "bilstm_backend")])
    def test_variant_aliases_resolve(self, alias, canonical):
        assert parse_config(["train", "--variant", alias]).variant == canonical

    def test_kernel_widths_accept_comma_strings(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"kernel_widths": "2,3"}))
        assert parse_config(["train", "--config", str(cfg_file)]).kernel_widths == (2, 3)
        assert parse_config(["train", "--kernel-widths", "4"]).kernel_widths == (4,)


class TestConfigErrors:
    def test_unknown_config_keys_exit_one(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"learning_rate": 0.1}))
        rc = cli.main(["train", "--config", str(cfg_file)])
        assert rc == 1
        assert "learning_rate" in capsys.readouterr().err

    def test_every_invalid_field_is_reported_at_once(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"folds": 1, "lr": -1.0, "momentum": 2.0}))
        rc = cli.main(["train", "--config", str(cfg_file)])
        assert rc == 1
        err = capsys.readouterr().err
        for field in ("folds", "lr", "momentum"):
            assert field in err

    def test_missing_data_path_exits_one(self, tmp_path, capsys):
        rc = cli.main(["train", "--data", str(tmp_path / "absent.tsv"),
                       "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "does not exist" in capsys.readouterr().err

    def test_unparseable_widths_exit_one(self, tmp_path, capsys):
        rc = cli.main(["train", "--kernel-widths", "3,x",
                       "--out-dir", str(tmp_path)])
        assert rc == 1

    def test_argparse_rejects_unknown_flags(self):
        with pytest.raises(SystemExit) as err:
            cli.main(["train", "--bogus"])
        assert err.value.code == 2

    def test_a_subcommand_is_required(self):
        with pytest.raises(SystemExit):
            cli.main([])
