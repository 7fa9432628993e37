# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import csv

import numpy as np
import pytest

from qaoa_metaopt import hamiltonians
from qaoa_metaopt import lib
from qaoa_metaopt import meta
from qaoa_metaopt import metrics
from qaoa_metaopt import simulator
from qaoa_metaopt.lib import ExperimentConfig
from qaoa_metaopt.problems import ProblemClass
from qaoa_metaopt.tests import util as testutil


def tiny_config(**kwargs):
    values = dict(
        classes=("maxcut", "mis"),
        p=(4,),
        horizon=2,
        shots=200,
        batch=4,
        epochs=1,
        vanilla_steps=20,
        fine_tune_steps=1,
    )
    values.update(kwargs)
    return ExperimentConfig(**values)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Checkpoints for a two-class, single-depth grid"""
    directory = tmp_path_factory.mktemp("checkpoints")
    dataset = testutil.small_dataset()
    lib.train_meta_models(tiny_config(), dataset, directory)
    return dataset, directory


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_config_defaults():
    config = ExperimentConfig()
    assert config.classes == ("maxcut", "mis", "maxclique", "mvc")
    assert config.p == (4, 6, 8, 10)
    assert config.horizon == 10
    assert config.shots == 5000
    assert config.problem_classes[0] is ProblemClass.MAXCUT
    train = config.train_config()
    assert (train.batch, train.epochs, train.lr) == (32, 100, 0.001)


def test_config_normalizes_values():
    config = ExperimentConfig(classes="MIS", p=6)
    assert config.classes == ("mis",)
    assert config.p == (6,)


@pytest.mark.parametrize(
    "kwargs,match",
    [
        (dict(p=(5,)), "Depths"),
        (dict(classes=()), "problem class"),
        (dict(classes=("mds",)), "Unknown problem class"),
        (dict(backend="graph2vec"), "backend"),
        (dict(shots=0), "shots"),
        (dict(epochs=-1), "epochs"),
    ],
)
def test_config_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        ExperimentConfig(**kwargs)


def test_config_from_mapping():
    config = ExperimentConfig.from_mapping(dict(seed=7, threads=None, classes=()))
    assert config.seed == 7
    assert config.threads == 1
    assert config.classes == lib.CLASS_NAMES
    with pytest.raises(ValueError, match="Unknown experiment options: colour"):
        ExperimentConfig.from_mapping(dict(colour="red"))


def test_vanilla_qaoa_respects_budget():
    hamiltonian = hamiltonians.build_cost_hamiltonian("maxcut", testutil.cycle_graph(4))
    result = lib.run_vanilla_qaoa(hamiltonian, 2, np.random.default_rng(0), lr=0.05, max_steps=60)
    assert 1 <= result.steps <= 60
    assert len(result.energies) == result.steps
    assert result.energies[-1] < result.energies[0]
    assert result.theta.p == 2
    assert simulator.expectation(result.state, hamiltonian) <= result.energies[0]

    with pytest.raises(ValueError):
        lib.run_vanilla_qaoa(hamiltonian, 0, np.random.default_rng(0))


def test_vanilla_qaoa_stops_at_tolerance():
    hamiltonian = hamiltonians.build_cost_hamiltonian("maxcut", testutil.single_edge())
    result = lib.run_vanilla_qaoa(
        hamiltonian, 1, np.random.default_rng(2), lr=0.1, max_steps=500, tolerance=1e-2
    )
    assert result.steps < 500


def test_vanilla_qaoa_converges_on_single_edge():
    hamiltonian = hamiltonians.build_cost_hamiltonian("maxcut", testutil.single_edge())
    for seed in range(10):
        result = lib.run_vanilla_qaoa(hamiltonian, 1, np.random.default_rng(seed))
        assert simulator.expectation(result.state, hamiltonian) == pytest.approx(-1.0, abs=1e-4)


def test_enumerate_transfer_cells():
    cells = lib.enumerate_transfer_cells(lib.CLASS_NAMES, lib.DEPTHS)
    assert len(cells) == 48
    assert len(set(cells)) == 48
    assert cells[0] == (ProblemClass.MAXCUT, ProblemClass.MIS, 4)
    assert all(source is not target for source, target, _ in cells)
    assert [p for _, _, p in cells[:12]] == [4] * 12
    assert len(lib.enumerate_transfer_cells(lib.CLASS_NAMES, lib.DEPTHS, include_same=True)) == 64


def test_train_meta_models_writes_checkpoints(trained):
    _, directory = trained
    model = meta.load_model(directory, "mis", 4, "none")
    assert model.config.horizon == 2
    assert not model.conditioned
    history = read_rows(directory / "history-none-maxcut-p4.csv")
    assert history[0] == ["epoch", "mean_loss", "mean_final_energy", "wall_time"]
    assert len(history) == 2


def test_single_problem_experiment(trained):
    dataset, directory = trained
    config = tiny_config()
    rows = lib.run_single_problem_experiment(config, dataset, directory, ["vanilla", "meta-lstm"])
    assert [(r.problem, r.depth, r.method) for r in rows] == [
        ("maxcut", 4, "vanilla"),
        ("maxcut", 4, "meta-lstm"),
        ("mis", 4, "vanilla"),
        ("mis", 4, "meta-lstm"),
    ]
    assert all(r.n_instances == len(dataset.test) for r in rows)
    assert rows[1].report.steps == 2.0
    assert rows[0].report.steps <= 20.0
    assert rows[0].report.feasibility_rate is None
    assert rows[2].report.feasibility_rate is not None

    threaded = lib.run_single_problem_experiment(
        tiny_config(threads=3), dataset, directory, ["vanilla", "meta-lstm"]
    )
    assert [r.to_csv() for r in rows] == [r.to_csv() for r in threaded]


def test_single_problem_errors(trained):
    dataset, directory = trained
    with pytest.raises(meta.CheckpointNotFound, match="class=mvc, p=4, backend=none"):
        lib.run_single_problem_experiment(tiny_config(classes=("mvc",)), dataset, directory, ["meta-lstm"])
    with pytest.raises(ValueError, match="Unknown method"):
        lib.run_single_problem_experiment(tiny_config(), dataset, directory, ["adam"])


def test_exact_results_csv(trained, tmp_path):
    dataset, directory = trained
    config = tiny_config(classes=("mis",), exact=True)
    rows = lib.run_single_problem_experiment(config, dataset, directory, ["meta-lstm"])
    path = lib.write_results(rows, tmp_path / "results.csv", exact=True)
    table = read_rows(path)
    assert table[0] == lib.RESULT_COLUMNS + ["ar_literal"]
    assert table[1][:3] == ["mis", "4", "meta-lstm"]
    assert table[1][6] == "2.00"
    assert len(table[1]) == len(table[0])


def test_cross_problem_experiment(trained, tmp_path):
    dataset, directory = trained
    rows = lib.run_cross_problem_experiment(tiny_config(), dataset, directory)
    assert [(r.source, r.problem) for r in rows] == [("maxcut", "mis"), ("mis", "maxcut")]
    assert rows[0].report.feasibility_rate is not None
    assert 0.0 <= rows[0].improved <= 1.0

    path = lib.write_transfer(rows, tmp_path / "transfer.csv")
    table = read_rows(path)
    assert table[0] == lib.TRANSFER_COLUMNS
    assert table[1][:4] == ["maxcut", "mis", "4", "meta-lstm"]

    same = lib.run_cross_problem_experiment(tiny_config(), dataset, directory, include_same=True)
    assert len(same) == 4


def test_diversity_experiment(trained, tmp_path):
    dataset, directory = trained
    stats = lib.run_diversity_experiment(tiny_config(classes=("mis",)), dataset, directory)
    assert list(stats) == [("mis", 4, "meta-lstm")]
    cell = stats[("mis", 4, "meta-lstm")]
    assert cell.horizon == 2
    assert cell.variance.shape == (2, 8)
    assert np.all(cell.msd_gamma >= 0)
    metrics.write_diversity(stats, tmp_path / "d.csv", tmp_path / "v.csv")
    assert len(read_rows(tmp_path / "v.csv")) == 1 + 2 * 8


def test_unihetco_pipeline(tmp_path):
    dataset = testutil.small_dataset()
    config = tiny_config(classes=("mis",), backend="unihetco")
    with pytest.raises(meta.CheckpointNotFound):
        lib.make_provider("unihetco", tmp_path)

    path = lib.pretrain_embeddings(config, dataset, tmp_path)
    assert path.exists()
    assert (tmp_path / "history-unihetco-gnn.csv").exists()

    lib.train_meta_models(config, dataset, tmp_path)
    model = meta.load_model(tmp_path, "mis", 4, "unihetco")
    assert model.config.embed_dim == 96

    rows = lib.run_single_problem_experiment(config, dataset, tmp_path, ["uni-meta-lstm"])
    assert rows[0].method == "uni-meta-lstm"
    assert 0.0 <= rows[0].report.optimal_hit_rate <= 1.0
