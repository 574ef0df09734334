"""End-to-end CLI flows: every subcommand, file formats, exit codes."""

import json

import numpy as np
import pytest

from dialrank.cli import main
from dialrank.encoders import Vocabulary
from dialrank.metrics import ranking_from_scores


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated dataset plus a finished training run, shared read-only."""
    root = tmp_path_factory.mktemp("cli")
    config = {
        "d": 8,
        "emb_dim": 6,
        "k": 2,
        "l": 8,
        "n_dialogs": 4,
        "turns_per_dialog": 2,
        "n_candidates": 6,
        "n_select": 3,
        "m_pool": 6,
        "n_objects": 3,
        "epochs_primary": 1,
        "epochs_joint": 1,
        "seed": 5,
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))
    data_path = root / "train.jsonl"
    assert main(["gen-data", "--config", str(config_path), "--out", str(data_path)]) == 0
    run_dir = root / "run"
    assert main(["train", "--config", str(config_path), "--data", str(data_path), "--out", str(run_dir)]) == 0
    return root, config_path, data_path, run_dir


def test_gen_data_seed_flag_overrides_config(workspace, tmp_path):
    root, config_path, data_path, _ = workspace
    other = tmp_path / "other.jsonl"
    assert main(["gen-data", "--config", str(config_path), "--seed", "99", "--out", str(other)]) == 0
    assert other.read_text() != data_path.read_text()
    again = tmp_path / "again.jsonl"
    assert main(["gen-data", "--config", str(config_path), "--out", str(again)]) == 0
    assert again.read_text() == data_path.read_text()


def test_build_vocab(workspace, tmp_path):
    _, _, data_path, _ = workspace
    out = tmp_path / "vocab.json"
    assert main(["build-vocab", "--data", str(data_path), "--min-count", "0", "--out", str(out)]) == 0
    vocab = Vocabulary.load(out)
    assert vocab.tokens[:4] == ["PAD", "UNK", "START", "END"]
    assert len(vocab) > 4
    strict = tmp_path / "strict.json"
    assert main(["build-vocab", "--data", str(data_path), "--min-count", "1000", "--out", str(strict)]) == 0
    assert len(Vocabulary.load(strict)) == 4


def test_train_artifacts(workspace):
    _, _, _, run_dir = workspace
    assert (run_dir / "checkpoint_final.npz").exists()
    assert (run_dir / "loss_log.jsonl").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 5
    log_lines = (run_dir / "loss_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 2


@pytest.mark.parametrize("mode", ["primary", "two-stage"])
def test_evaluate_writes_report(workspace, tmp_path, mode):
    _, _, data_path, run_dir = workspace
    report_path = tmp_path / f"report-{mode}.json"
    assert main([
        "evaluate",
        "--checkpoint", str(run_dir / "checkpoint_final.npz"),
        "--data", str(data_path),
        "--mode", mode,
        "--report", str(report_path),
    ]) == 0
    report = json.loads(report_path.read_text())
    for key in ("ndcg", "mrr", "r1", "r5", "r10", "mean_rank", "turns", "diagnostics"):
        assert key in report
    assert 0.0 <= report["ndcg"] <= 1.0
    assert report["turns"] == 8


def test_rank_emits_scores_and_rankings(workspace, tmp_path):
    _, _, data_path, run_dir = workspace
    out = tmp_path / "scores.jsonl"
    assert main([
        "rank",
        "--checkpoint", str(run_dir / "checkpoint_final.npz"),
        "--data", str(data_path),
        "--mode", "two-stage",
        "--out", str(out),
    ]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 8
    for row in rows:
        assert set(row) == {"dialog_id", "turn", "scores", "ranking"}
        assert len(row["scores"]) == 6
        assert sorted(row["ranking"]) == list(range(6))


def test_ensemble_sums_score_files(workspace, tmp_path):
    _, _, data_path, run_dir = workspace
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    for mode, path in (("primary", a), ("two-stage", b)):
        assert main([
            "rank",
            "--checkpoint", str(run_dir / "checkpoint_final.npz"),
            "--data", str(data_path),
            "--mode", mode,
            "--out", str(path),
        ]) == 0
    merged = tmp_path / "merged.jsonl"
    assert main(["ensemble", "--scores", str(a), str(b), "--out", str(merged)]) == 0
    rows_a = {(r["dialog_id"], r["turn"]): r["scores"] for r in map(json.loads, a.read_text().splitlines())}
    rows_b = {(r["dialog_id"], r["turn"]): r["scores"] for r in map(json.loads, b.read_text().splitlines())}
    for row in map(json.loads, merged.read_text().splitlines()):
        key = (row["dialog_id"], row["turn"])
        expected = np.add(rows_a[key], rows_b[key])
        np.testing.assert_allclose(row["scores"], expected, atol=1e-12)
        assert row["ranking"] == ranking_from_scores(expected)


def test_beam_requires_generative_checkpoint(workspace, tmp_path):
    _, _, data_path, run_dir = workspace
    out = tmp_path / "beam.jsonl"
    code = main([
        "beam",
        "--checkpoint", str(run_dir / "checkpoint_final.npz"),
        "--data", str(data_path),
        "--out", str(out),
    ])
    assert code == 2


def test_beam_generates_candidates(workspace, tmp_path):
    root, config_path, data_path, _ = workspace
    gen_dir = tmp_path / "genrun"
    assert main([
        "train",
        "--config", str(config_path),
        "--data", str(data_path),
        "--out", str(gen_dir),
        "--model", "generative",
        "--epochs-primary", "1",
        "--epochs-joint", "0",
    ]) == 0
    out = tmp_path / "beam.jsonl"
    assert main([
        "beam",
        "--checkpoint", str(gen_dir / "checkpoint_final.npz"),
        "--data", str(data_path),
        "--width", "3",
        "--max-len", "5",
        "--out", str(out),
    ]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 8
    for row in rows:
        assert len(row["candidates"]) <= 3
        assert len(row["candidates"]) == len(row["log_probs"])
        for cand in row["candidates"]:
            assert all(isinstance(t, str) for t in cand)


def test_usage_error_exits_one(capsys):
    assert main(["train"]) == 1  # missing required flags
    assert main(["no-such-command"]) == 1


def test_missing_file_exits_two(tmp_path):
    assert main(["build-vocab", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "v.json")]) == 2


def test_invalid_config_exits_two(workspace, tmp_path):
    _, _, data_path, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tau": 5.0}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x.jsonl")]) == 2


def test_flag_overrides_config_file(workspace, tmp_path):
    _, config_path, _, _ = workspace
    out = tmp_path / "wide.jsonl"
    assert main([
        "gen-data", "--config", str(config_path), "--n-candidates", "8", "--m-pool", "8", "--out", str(out)
    ]) == 0
    first = json.loads(out.read_text().splitlines()[0])
    assert len(first["turns"][0]["candidates"]) == 8
