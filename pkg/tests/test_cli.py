import json

import networkx as nx
import pytest

from flowgraph.main import run
from flowgraph.services.checkpoint import load_checkpoint
from flowgraph.services.datasets import read_graphs, write_graphs
from flowgraph.services.graphs import Graph


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grids.jsonl"
    write_graphs(path, [Graph.from_networkx(nx.grid_2d_graph(a, b)) for a, b in [(2, 2), (2, 3), (3, 3), (3, 2)]])
    return path


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "model": {"n_layers": 1, "n_heads": 2, "dx": 8, "de": 4, "dy": 8, "dropout": 0.0, "time_embedding_dim": 4},
        "train": {"log_interval": 1},
    }))
    return path


class TestExitCodes:
    def test_help(self):
        assert run(["--help"]) == 0
        assert run(["train", "--help"]) == 0

    def test_usage_errors(self):
        assert run([]) == 1
        assert run(["fly"]) == 1
        assert run(["sample", "--n-samples", "many"]) == 1

    def test_missing_required_input(self, tmp_path):
        assert run(["dataset", "gen", "--kind", "grid", "--count", "2"]) == 1
        assert run(["eval", "--reference", str(tmp_path / "r.jsonl"), "--output", str(tmp_path / "o.json")]) == 1

    def test_missing_file_is_a_runtime_error(self, tmp_path):
        code = run(["eval", "--samples", str(tmp_path / "absent.jsonl"), "--reference", str(tmp_path / "absent.jsonl"),
                    "--output", str(tmp_path / "report.json")])
        assert code == 2

    def test_invalid_log_level(self, grid_file, tmp_path):
        assert run(["--log-level", "chatty", "dataset", "prior", "--data", str(grid_file),
                    "--output", str(tmp_path / "p.json")]) == 1

    def test_invalid_config_values(self, tmp_path, grid_file):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"sample": {"n_steps": 0}}))
        assert run(["sample", "--config", str(config), "--checkpoint", "x", "--output", "y"]) == 1
        config.write_text("[1, 2")
        assert run(["sample", "--config", str(config)]) == 1

    def test_malformed_dataset(self, tmp_path):
        data = tmp_path / "bad.jsonl"
        data.write_text('{"nodes": [0, 1], "edges": [[0, 0, 1]]}\n')
        assert run(["dataset", "prior", "--data", str(data), "--output", str(tmp_path / "p.json")]) == 1


class TestEval:
    def test_identical_files(self, grid_file, tmp_path):
        output = tmp_path / "report.json"
        assert run(["eval", "--samples", str(grid_file), "--reference", str(grid_file),
                    "--training-set", str(grid_file), "--output", str(output), "--threads", "1"]) == 0
        report = json.loads(output.read_text())
        assert report["degree_mmd"] == report["clustering_mmd"] == report["orbit_mmd"] == 0.0
        assert report["novelty"] == 0.0
        assert report["manifest_hash"]
        assert (tmp_path / "report.json.manifest.json").exists()


class TestDataset:
    def test_gen_with_split(self, tmp_path):
        output = tmp_path / "grid.jsonl"
        assert run(["dataset", "gen", "--kind", "grid", "--count", "10", "--min-side", "2", "--max-side", "3",
                    "--seed", "4", "--test-fraction", "0.2", "--output", str(output)]) == 0
        assert len(read_graphs(output)) == 10
        assert len(read_graphs(tmp_path / "grid.train.jsonl")) == 8
        assert len(read_graphs(tmp_path / "grid.test.jsonl")) == 2
        manifest = json.loads((tmp_path / "grid.jsonl.manifest.json").read_text())
        assert manifest["seed"] == 4

    def test_gen_is_seeded(self, tmp_path):
        args = ["dataset", "gen", "--count", "3", "--seed", "1", "--output"]
        assert run(args + [str(tmp_path / "a.jsonl")]) == 0
        assert run(args + [str(tmp_path / "b.jsonl")]) == 0
        assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()

    def test_prior(self, grid_file, tmp_path):
        output = tmp_path / "prior.json"
        assert run(["dataset", "prior", "--data", str(grid_file), "--output", str(output)]) == 0
        assert output.exists()


def test_pipeline(tmp_path, tiny_config):
    data = tmp_path / "grid.jsonl"
    run_dir = tmp_path / "run"
    samples = tmp_path / "samples.jsonl"
    tuned = tmp_path / "tuned.json"

    assert run(["dataset", "gen", "--kind", "grid", "--count", "6", "--min-side", "2", "--max-side", "3",
                "--seed", "0", "--output", str(data)]) == 0
    assert run(["train", "--config", str(tiny_config), "--data", str(data), "--output", str(run_dir),
                "--steps", "3", "--batch-size", "2", "--seed", "0", "--threads", "1"]) == 0
    checkpoint = run_dir / "checkpoints" / "final.json"
    assert checkpoint.exists()
    assert len((run_dir / "train_log.jsonl").read_text().splitlines()) == 3
    assert (tmp_path / "run.manifest.json").exists()

    sample_args = ["sample", "--checkpoint", str(checkpoint), "--prior", str(run_dir / "prior.json"),
                   "--n-samples", "4", "--n-steps", "3", "--seed", "0", "--threads", "1", "--output"]
    assert run(sample_args + [str(samples)]) == 0
    assert run(sample_args + [str(tmp_path / "again.jsonl")]) == 0
    assert samples.read_text() == (tmp_path / "again.jsonl").read_text()
    assert len(read_graphs(samples)) == 4

    assert run(["eval", "--samples", str(samples), "--reference", str(data), "--output",
                str(tmp_path / "report.json"), "--threads", "1"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["n_samples"] == 4
    assert report["average"] >= 0.0

    assert run(["guide", "--checkpoint", str(checkpoint), "--data", str(data), "--output", str(tuned),
                "--reward", "edge_count_target", "--reward-param", "target=4", "--iterations", "2",
                "--trajectories", "2", "--n-steps", "3", "--seed", "0", "--threads", "1"]) == 0
    load_checkpoint(tuned)
    assert len((tmp_path / "tuned.rewards.jsonl").read_text().splitlines()) == 2

    assert run(["guide", "--checkpoint", str(checkpoint), "--data", str(data), "--output", str(tuned)]) == 1
    assert run(["guide", "--checkpoint", str(checkpoint), "--data", str(data), "--output", str(tuned),
                "--reward", "edge_count_target"]) == 1


@pytest.mark.slow
def test_check_command(tmp_path):
    output = tmp_path / "checks.json"
    assert run(["check", "--seed", "0", "--trials", "10", "--output", str(output)]) == 0
    results = json.loads(output.read_text())
    assert all(r["passed"] for r in results)
