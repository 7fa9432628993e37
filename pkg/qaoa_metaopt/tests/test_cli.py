# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import csv
import json
import os
from pathlib import Path

from qaoa_metaopt import problems
from qaoa_metaopt import util
from qaoa_metaopt.tests.util import JSON_CONFIG
from qaoa_metaopt.tests.util import TOML_CONFIG

FAST_TRAINING = ["--epochs", "1", "--batch", "4", "--horizon", "2", "--p", "4"]


def read_manifest(out="results"):
    return json.loads((Path(out) / util.MANIFEST_NAME).read_text(encoding="utf-8"))


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_list_envvars(runner):
    result = runner(["list-envvars"])
    assert (
        result.output.strip()
        == """
backend: QM_BACKEND
backends: QM_BACKENDS
batch: QM_BATCH
checkpoints: QM_CHECKPOINTS
classes: QM_CLASSES
config: QM_CONFIG
dataset: QM_DATASET
epochs: QM_EPOCHS
exact: QM_EXACT
fine-tune-steps: QM_FINE_TUNE_STEPS
horizon: QM_HORIZON
include-same: QM_INCLUDE_SAME
instance: QM_INSTANCE
lr: QM_LR
methods: QM_METHODS
out: QM_DATASET_OUT
out: QM_OUT
p: QM_P
problem: QM_CLASS
seed: QM_SEED
shots: QM_SHOTS
split: QM_SPLIT
test: QM_TEST
test-n: QM_TEST_N
threads: QM_THREADS
tolerance: QM_TOLERANCE
train: QM_TRAIN
train-n-max: QM_TRAIN_N_MAX
train-n-min: QM_TRAIN_N_MIN
vanilla-lr: QM_VANILLA_LR
vanilla-steps: QM_VANILLA_STEPS
""".strip()
    )


def test_gen_data(runner):
    args = ["gen-data", "--train", "4", "--test", "2", "--train-n-min", "5"]
    args += ["--train-n-max", "6", "--test-n", "6", "--seed", "3"]
    runner(args + ["--out", "a/dataset.jsonl"])
    runner(args + ["--out", "b/dataset.jsonl"])
    runner(args + ["--out", "c/dataset.jsonl", "--threads", "3"])

    first = Path("a/dataset.jsonl")
    assert first.read_bytes() == Path("b/dataset.jsonl").read_bytes()
    assert first.read_bytes() == Path("c/dataset.jsonl").read_bytes()
    dataset = problems.read_dataset(first)
    assert len(dataset.train) == 4
    assert [g.n for g in dataset.test] == [6, 6]

    manifest = read_manifest("a")
    assert manifest["command"] == "gen-data"
    assert manifest["seed"] == 3
    assert manifest["options"]["test_n"] == 6


def test_gen_data_bad_range(raw_runner):
    result = raw_runner(["gen-data", "--train-n-min", "8", "--train-n-max", "6"])
    assert result.exit_code == 2
    assert "Invalid train size range" in result.output


def test_usage_errors(raw_runner, small_dataset):
    result = raw_runner(["train-meta", "--dataset", "missing.jsonl"])
    assert result.exit_code == 2

    result = raw_runner(["train-meta", "--dataset", str(small_dataset), "--p", "5"])
    assert result.exit_code == 2

    result = raw_runner(["eval-single", "--dataset", str(small_dataset), "--threads", "0"])
    assert result.exit_code == 2

    result = raw_runner(["train-meta", "--dataset", str(small_dataset), "--config", "nope.toml"])
    assert result.exit_code == 2
    assert "does not exist" in result.output


def test_json_config(runner, small_dataset):
    Path("config.json").write_text(JSON_CONFIG, encoding="utf-8")
    runner(["train-meta", "--dataset", str(small_dataset), "--config", "config.json"] + FAST_TRAINING)
    manifest = read_manifest()
    assert manifest["seed"] == 7
    assert manifest["options"]["classes"] == ["mis"]
    assert manifest["options"]["p"] == [4]
    assert Path("checkpoints/meta-none-mis-p4.json").exists()
    assert not Path("checkpoints/meta-none-maxcut-p4.json").exists()


def test_config_file_env_override(runner, small_dataset):
    Path("config.json").write_text(JSON_CONFIG, encoding="utf-8")
    env = dict(QM_CONFIG="config.json", QM_SEED="9")
    runner(["train-meta", "--dataset", str(small_dataset)] + FAST_TRAINING, env=env)
    manifest = read_manifest()
    assert manifest["seed"] == 9
    assert manifest["options"]["classes"] == ["mis"]


def test_config_file_cli_override(runner, small_dataset):
    Path(util.QAOA_METAOPT_CONFIG).write_text(TOML_CONFIG, encoding="utf-8")
    args = ["train-meta", "--dataset", str(small_dataset), "--class", "mvc", "--seed", "11"]
    runner(args + FAST_TRAINING)
    manifest = read_manifest()
    assert manifest["seed"] == 11
    assert manifest["options"]["threads"] == 2
    assert manifest["options"]["classes"] == ["mvc"]


def test_dump_hamiltonian(runner, raw_runner, small_dataset):
    graph = problems.read_dataset(small_dataset).test[0]
    runner(["dump-hamiltonian", "--dataset", str(small_dataset), "--class", "mis", "--instance", graph.id])
    rows = read_rows(Path("results") / f"hamiltonian-mis-{graph.id}.csv")
    assert rows[0] == ["bitstring", "energy"]
    assert len(rows) == 1 + 2**graph.n
    assert rows[1][0] == "0" * graph.n
    manifest = read_manifest()
    assert manifest["command"] == "dump-hamiltonian"
    assert manifest["options"]["instance"] == graph.id

    result = raw_runner(["dump-hamiltonian", "--dataset", str(small_dataset), "--class", "mis", "--instance", "g0-x"])
    assert result.exit_code == 2


def test_eval_single_is_thread_independent(runner, small_dataset):
    dataset = ["--dataset", str(small_dataset)]
    runner(["train-meta", *dataset, "--class", "maxcut"] + FAST_TRAINING)

    args = ["eval-single", *dataset, "--class", "maxcut", "--p", "4", "--horizon", "2"]
    args += ["--method", "vanilla", "--method", "meta-lstm", "--shots", "100", "--vanilla-steps", "10"]
    runner(args + ["--threads", "1", "--out", "one"])
    runner(args + ["--threads", "2", "--out", "two"])

    first = Path("one/results-single.csv")
    assert first.read_bytes() == Path("two/results-single.csv").read_bytes()
    rows = read_rows(first)
    assert rows[0][:3] == ["class", "depth", "method"]
    assert [row[2] for row in rows[1:]] == ["vanilla", "meta-lstm"]
    assert rows[2][6] == "2.00"
    assert read_manifest("one")["command"] == "eval-single"


def test_eval_single_missing_checkpoint(raw_runner, small_dataset):
    args = ["eval-single", "--dataset", str(small_dataset), "--class", "mvc", "--p", "6"]
    result = raw_runner(args + ["--method", "meta-lstm"])
    assert result.exit_code == 1
    assert "class=mvc, p=6, backend=none" in result.output


def test_transfer_and_diversity(runner, small_dataset):
    dataset = ["--dataset", str(small_dataset)]
    runner(["train-meta", *dataset, "--class", "maxcut", "--class", "mis"] + FAST_TRAINING)

    grid = ["--class", "maxcut", "--class", "mis", "--p", "4", "--horizon", "2"]
    runner(["eval-transfer", *dataset, *grid, "--fine-tune-steps", "1", "--shots", "100"])
    rows = read_rows(Path("results/results-transfer.csv"))
    assert rows[0][:2] == ["source", "target"]
    assert [row[:2] for row in rows[1:]] == [["maxcut", "mis"], ["mis", "maxcut"]]

    runner(["diversity", *dataset, *grid, "--backend", "none"])
    rows = read_rows(Path("results/diversity.csv"))
    assert len(rows) == 1 + 2 * 2
    assert rows[1][:4] == ["maxcut", "4", "meta-lstm", "1"]
    assert Path("results/diversity-variance.csv").exists()


def test_pretrain_and_export(runner, raw_runner, small_dataset):
    dataset = ["--dataset", str(small_dataset)]
    result = raw_runner(["export-embed", *dataset, "--class", "mis"])
    assert result.exit_code == 1

    runner(["pretrain-embed", *dataset, "--class", "mis", "--epochs", "1", "--batch", "4"])
    assert Path("checkpoints/unihetco-gnn.json").exists()
    assert Path("checkpoints/history-unihetco-gnn.csv").exists()

    export = ["export-embed", *dataset, "--class", "mis", "--class", "mvc", "--split", "test"]
    runner(export + ["--out", "two", "--threads", "2"])
    runner(export)
    rows = read_rows(Path("results/embeddings.csv"))
    assert Path("two/embeddings.csv").read_bytes() == Path("results/embeddings.csv").read_bytes()
    assert rows[0][:2] == ["instance_id", "class"]
    assert len(rows) == 1 + 2 * len(problems.read_dataset(small_dataset).test)
    assert read_manifest()["command"] == "export-embed"
    assert os.path.exists("results/manifest.json")
