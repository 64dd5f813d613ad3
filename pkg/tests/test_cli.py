"""End-to-end checks of the command-line interface.

Everything runs ``cli.main`` in-process so exit codes and stderr text are
observable without subprocesses. A single tiny checkpoint is trained once
per module and shared by the read-only subcommand tests.
"""

import json
import os

import numpy as np
import pytest

from catbert.cli import main
from catbert.mail import save_dataset
from catbert.model import ModelConfig, count_params
from catbert.synthetic import SYNONYM_TABLE, make_corpus, synthetic_vocab
from catbert.tokenizer import save_vocab


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Corpus, vocab, config, and a one-epoch trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.jsonl"
    vocab = root / "vocab.txt"
    config = root / "config.json"
    save_dataset(make_corpus(n=160, malicious_frac=0.3, seed=0), corpus)
    save_vocab(synthetic_vocab(), vocab)
    config.write_text(json.dumps({
        "model": {"vocab_size": 100, "hidden": 16, "ffn_dim": 32, "heads": 2,
                  "max_positions": 16, "block_plan": ["T", "A"]},
        "train": {"epochs": 1, "batch_size": 32, "learning_rate": 1e-3},
        "max_len": 16,
    }))
    run = root / "run"
    rc = main(["train", "--train", str(corpus), "--vocab", str(vocab),
               "--config", str(config), "--out-dir", str(run), "--seed", "0"])
    assert rc == 0
    return {"root": root, "corpus": corpus, "vocab": vocab, "config": config,
            "ckpt": run / "best", "run": run}


class TestExitCodes:
    def test_no_args_prints_help_and_fails(self, capsys):
        assert main([]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err and "subcommand" not in err.lower().split("usage")[0]

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["eval", "--bogus"]) == 1
        assert "usage error:" in capsys.readouterr().err

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert main(["split", "--in", "x.jsonl"]) == 1
        assert "--out-dir" in capsys.readouterr().err

    def test_runtime_failure_exits_two(self, workdir, capsys):
        rc = main(["eval", "--model", str(workdir["root"] / "nope"),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"])])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0


class TestIngestSplit:
    def test_ingest_roundtrip_and_manifest(self, workdir, tmp_path):
        out = tmp_path / "clean.jsonl"
        assert main(["ingest", "--in", str(workdir["corpus"]), "--out", str(out)]) == 0
        assert sum(1 for _ in open(out)) == 160
        manifest = json.loads((out.parent / f"{out.name}.manifest.json").read_text())
        assert manifest["subcommand"] == "ingest"
        assert manifest["inputs"]["dataset"]["sha256"]
        assert manifest["outputs"]["dataset"]["bytes"] == out.stat().st_size

    def test_ingest_skips_bad_lines(self, workdir, tmp_path, capsys):
        src = tmp_path / "dirty.jsonl"
        good = workdir["corpus"].read_text().splitlines()[0]
        src.write_text(good + "\nnot json at all\n")
        out = tmp_path / "clean.jsonl"
        assert main(["ingest", "--in", str(src), "--out", str(out)]) == 0
        assert "skipped 1" in capsys.readouterr().err
        assert sum(1 for _ in open(out)) == 1

    def test_ingest_strict_fails_on_bad_line(self, tmp_path):
        src = tmp_path / "dirty.jsonl"
        src.write_text("nope\n")
        assert main(["ingest", "--in", str(src), "--out", str(tmp_path / "o"),
                     "--strict"]) == 2

    def test_split_writes_three_files(self, workdir, tmp_path):
        out = tmp_path / "splits"
        assert main(["split", "--in", str(workdir["corpus"]),
                     "--out-dir", str(out)]) == 0
        sizes = {name: sum(1 for _ in open(out / f"{name}.jsonl"))
                 for name in ("train", "val", "test")}
        assert sizes["train"] == 112 and sizes["val"] == 24  # floors of 0.7/0.15
        assert sum(sizes.values()) == 160
        assert (out / "run_manifest.json").exists()

    def test_split_bad_fractions_fail(self, workdir, tmp_path):
        assert main(["split", "--in", str(workdir["corpus"]),
                     "--out-dir", str(tmp_path / "s"),
                     "--fractions", "0.9,0.9,0.9"]) != 0


class TestTrain:
    def test_train_artifacts(self, workdir):
        run = workdir["run"]
        assert (run / "best" / "tensors.bin").exists()
        assert (run / "best" / "manifest.json").exists()
        history = json.loads((run / "history.json").read_text())
        assert len(history["epochs"]) == 1
        assert "train_loss" in history["epochs"][0]
        manifest = json.loads((run / "run_manifest.json").read_text())
        assert manifest["config"]["train"]["epochs"] == 1
        assert manifest["config"]["model"]["hidden"] == 16
        assert manifest["seed"] == 0
        assert set(manifest["outputs"]) == {"checkpoint", "history"}

    def test_same_seed_retrain_is_byte_identical(self, workdir, tmp_path):
        again = tmp_path / "again"
        rc = main(["train", "--train", str(workdir["corpus"]),
                   "--vocab", str(workdir["vocab"]), "--config", str(workdir["config"]),
                   "--out-dir", str(again), "--seed", "0"])
        assert rc == 0
        first = (workdir["ckpt"] / "tensors.bin").read_bytes()
        assert (again / "best" / "tensors.bin").read_bytes() == first
        assert ((again / "history.json").read_text()
                == (workdir["run"] / "history.json").read_text())

    def test_flag_overrides_config_file(self, workdir, tmp_path):
        run = tmp_path / "lr0"
        rc = main(["train", "--train", str(workdir["corpus"]),
                   "--vocab", str(workdir["vocab"]), "--config", str(workdir["config"]),
                   "--out-dir", str(run), "--seed", "0", "--learning-rate", "0"])
        assert rc == 0
        manifest = json.loads((run / "run_manifest.json").read_text())
        assert manifest["config"]["train"]["learning_rate"] == 0.0

    def test_unknown_config_key_is_usage_error(self, workdir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"momentum": 0.9}}))
        rc = main(["train", "--train", str(workdir["corpus"]),
                   "--vocab", str(workdir["vocab"]), "--config", str(bad),
                   "--out-dir", str(tmp_path / "r")])
        assert rc == 1
        assert "momentum" in capsys.readouterr().err


class TestParams:
    def test_report_matches_count_params(self, workdir, capsys):
        assert main(["params", "--config", str(workdir["config"])]) == 0
        payload = json.loads(capsys.readouterr().out)
        cfg = ModelConfig(vocab_size=100, hidden=16, ffn_dim=32, heads=2,
                          max_positions=16, block_plan=("T", "A"))
        report = count_params(cfg)
        assert payload["exact"]["total"] == report.total
        assert payload["exact"]["embedding"] == report.embedding
        assert payload["millions"]["total"] == 0

    def test_incomplete_config_is_usage_error(self, tmp_path):
        cfg = tmp_path / "partial.json"
        cfg.write_text(json.dumps({"hidden": 32}))  # no vocab_size
        assert main(["params", "--config", str(cfg)]) == 1


class TestScoring:
    def test_eval_metrics_json(self, workdir, tmp_path, capsys):
        out = tmp_path / "metrics.json"
        rc = main(["eval", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--max-len", "16", "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["n"] == 160
        assert payload["n_pos"] + payload["n_neg"] == 160
        assert 0.0 <= payload["auc"] <= 1.0
        assert set(payload["tpr_at_fpr"]) == {"0.0001", "0.001", "0.01", "0.1"}
        assert (tmp_path / "metrics.json.manifest.json").exists()

    def test_eval_roc_csv(self, workdir, tmp_path):
        out = tmp_path / "m.json"
        roc = tmp_path / "roc.csv"
        rc = main(["eval", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--max-len", "16", "--out", str(out), "--roc", str(roc)])
        assert rc == 0
        lines = roc.read_text().splitlines()
        assert lines[0] == "fpr,tpr,threshold"
        assert len(lines) > 2

    def test_predict_stdout_jsonl(self, workdir, capsys):
        rc = main(["predict", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--max-len", "16"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 160
        rows = [json.loads(line) for line in lines]
        assert [r["index"] for r in rows] == list(range(160))
        assert all(0.0 < r["prob"] < 1.0 for r in rows)
        assert all(r["label"] in (0, 1) for r in rows)


class TestAttackExplain:
    def test_attack_rate_zero_has_no_effect(self, workdir, tmp_path):
        out = tmp_path / "attack.json"
        rc = main(["attack", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--max-len", "16", "--kind", "typo", "--rate", "0",
                   "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["delta"] == 0.0
        assert report["clean_acc"] == report["attacked_acc"]

    def test_attack_synonym_needs_table(self, workdir, tmp_path, capsys):
        rc = main(["attack", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--kind", "synonym", "--rate", "0.5"])
        assert rc == 2  # empty table rejected by the attack spec

    def test_attack_with_synonym_table(self, workdir, tmp_path):
        table = tmp_path / "syn.json"
        table.write_text(json.dumps(SYNONYM_TABLE))
        out = tmp_path / "attack.json"
        rc = main(["attack", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--max-len", "16", "--kind", "synonym", "--rate", "1.0",
                   "--seed", "7", "--synonyms", str(table), "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["kind"] == "synonym" and report["seed"] == 7
        assert report["n_malicious"] == 48

    def test_explain_writes_attribution(self, workdir, tmp_path):
        out = tmp_path / "expl.json"
        rc = main(["explain", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--max-len", "16", "--index", "0", "--n-samples", "60",
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert set(payload) >= {"weights", "intercept", "r2", "top_positive",
                                "top_negative", "n_samples"}
        assert payload["n_samples"] == 60

    def test_explain_index_out_of_range(self, workdir, capsys):
        rc = main(["explain", "--model", str(workdir["ckpt"]),
                   "--in", str(workdir["corpus"]), "--vocab", str(workdir["vocab"]),
                   "--index", "9999"])
        assert rc == 1
        assert "out of range" in capsys.readouterr().err


class TestSurgeryBench:
    def test_surgery_copies_donor_blocks(self, workdir, tmp_path):
        from catbert.checkpoint import load_checkpoint, save_checkpoint
        from catbert.model import init_random
        donor_cfg = ModelConfig(vocab_size=100, hidden=16, ffn_dim=32, heads=2,
                                max_positions=16, block_plan=("T",) * 4,
                                context_dim=0)
        donor_dir = tmp_path / "donor"
        save_checkpoint(init_random(donor_cfg, seed=3), donor_dir)
        out = tmp_path / "compressed"
        rc = main(["surgery", "--donor", str(donor_dir), "--out-dir", str(out),
                   "--keep", "0,2"])
        assert rc == 0
        donor = load_checkpoint(donor_dir)
        model = load_checkpoint(out)
        assert model.config.block_plan == ("transformer", "adapter") * 2
        np.testing.assert_array_equal(
            model.params["blocks.2.attn.q.w"].data,
            donor.params["blocks.2.attn.q.w"].data)

    def test_bench_reports_speedup(self, tmp_path):
        out = tmp_path / "bench.json"
        rc = main(["bench", "--hidden", "16", "--ffn-dim", "32", "--heads", "2",
                   "--seq-len", "8", "--vocab-size", "64", "--donor-blocks", "2",
                   "--repetitions", "3", "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["speedup_p50"] > 0
        assert payload["donor"]["repetitions"] == 3

    def test_bench_odd_donor_blocks_rejected(self, capsys):
        assert main(["bench", "--donor-blocks", "3"]) == 1
