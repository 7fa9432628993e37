# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
from dataclasses import dataclass
from dataclasses import fields
from pathlib import Path

import numpy as np

from qaoa_metaopt import embeddings
from qaoa_metaopt import hamiltonians
from qaoa_metaopt import meta
from qaoa_metaopt import metrics
from qaoa_metaopt import neural
from qaoa_metaopt import problems
from qaoa_metaopt import simulator
from qaoa_metaopt import util
from qaoa_metaopt.problems import ProblemClass

DEPTHS = (4, 6, 8, 10)
CLASS_NAMES = tuple(c.value for c in ProblemClass)
METHOD_BACKENDS = {
    "vanilla": None,
    "meta-lstm": "none",
    "wl-meta-lstm": "wl",
    "uni-meta-lstm": "unihetco",
}
BACKEND_METHODS = {backend: method for method, backend in METHOD_BACKENDS.items() if backend}
RESULT_COLUMNS = ["class", "depth", "method", "p_opt_hit", "ar", "fr", "steps", "n_instances", "seed"]
TRANSFER_COLUMNS = [
    "source",
    "target",
    "depth",
    "method",
    "p_opt_hit",
    "ar",
    "fr",
    "steps",
    "n_instances",
    "improved",
    "seed",
]


@dataclass(frozen=True)
class ExperimentConfig:
    classes: tuple = CLASS_NAMES
    p: tuple = DEPTHS
    horizon: int = meta.DEFAULT_HORIZON
    shots: int = metrics.DEFAULT_SHOTS
    batch: int = 32
    epochs: int = 100
    lr: float = 0.001
    vanilla_lr: float = 0.01
    vanilla_steps: int = 500
    tolerance: float = 1e-8
    fine_tune_steps: int = 5
    backend: str = "none"
    exact: bool = False
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        classes = (self.classes,) if isinstance(self.classes, str) else tuple(self.classes)
        classes = tuple(ProblemClass.from_name(c).value for c in classes)
        depths = (self.p,) if isinstance(self.p, int) else tuple(int(p) for p in self.p)
        if not classes:
            raise ValueError("At least one problem class is required")
        if not depths or any(p not in DEPTHS for p in depths):
            raise ValueError(f"Depths must be drawn from {DEPTHS}, got {depths}")
        if self.backend not in embeddings.BACKENDS:
            raise ValueError(
                f"Unknown embedding backend {self.backend!r}, expected one of {embeddings.BACKENDS}"
            )
        for name in ("horizon", "shots", "batch", "vanilla_steps", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "fine_tune_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "p", depths)

    @classmethod
    def from_mapping(cls, mapping):
        """Build a config from option names, ignoring unset (None) values"""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ValueError(f"Unknown experiment options: {', '.join(unknown)}")
        values = {k: v for k, v in mapping.items() if v is not None and v != ()}
        return cls(**values)

    @property
    def problem_classes(self):
        return [ProblemClass.from_name(c) for c in self.classes]

    def train_config(self):
        return meta.TrainConfig(
            batch=self.batch,
            epochs=self.epochs,
            lr=self.lr,
            horizon=self.horizon,
            seed=self.seed,
            threads=self.threads,
        )


@dataclass
class VanillaResult:
    theta: simulator.ParameterVector
    steps: int
    state: simulator.StateVector
    energies: np.ndarray


def run_vanilla_qaoa(hamiltonian, p, rng, lr=0.01, max_steps=500, tolerance=1e-8):
    """Adam on the exact energy from a random start.

    γ starts uniform in [−π, π) and β in [−π/2, π/2). Stops after
    ``max_steps`` energy evaluations or once consecutive energies differ by
    less than ``tolerance``.
    """
    if p < 1:
        raise ValueError(f"QAOA depth must be at least 1, got {p}")
    params = neural.ParameterStore()
    params["theta"] = np.concatenate(
        [rng.uniform(-np.pi, np.pi, size=p), rng.uniform(-np.pi / 2, np.pi / 2, size=p)]
    )
    state = neural.AdamState()
    energies = []
    for _ in range(max_steps):
        energy, grad = simulator.energy_and_gradient(hamiltonian, params["theta"])
        energies.append(energy)
        if len(energies) > 1 and abs(energies[-1] - energies[-2]) < tolerance:
            break
        neural.adam_step(params, {"theta": grad}, state, lr)
    theta = simulator.ParameterVector.from_flat(params["theta"])
    return VanillaResult(
        theta, len(energies), simulator.run_qaoa(hamiltonian, theta), np.array(energies)
    )


def make_provider(backend, checkpoint_dir=None):
    weights = None
    if backend == "unihetco":
        weights = embeddings.load_gnn(checkpoint_dir)
    return embeddings.EmbeddingProvider(backend, weights)


def prepare_items(problem, graphs, provider, threads=1):
    """Hamiltonians and conditioning vectors for a list of graphs"""
    problem = ProblemClass.from_name(problem)

    def prepare(graph):
        return meta.MetaInstance(
            graph.id,
            hamiltonians.build_cost_hamiltonian(problem, graph),
            provider(graph, problem),
        )

    return util.map_ordered(prepare, graphs, threads)


def _class_code(problem):
    return list(ProblemClass).index(ProblemClass.from_name(problem))


def _score(config, problem, graph, state, rng, oracle, steps):
    if config.exact:
        probs = simulator.exact_probabilities(state)
        return metrics.metrics_from_probabilities(problem, graph, probs, oracle, steps)
    return metrics.evaluate_metrics(problem, graph, state, config.shots, rng, oracle, steps)


@dataclass
class ResultRow:
    problem: str
    depth: int
    method: str
    report: metrics.MetricsReport
    n_instances: int
    seed: int
    source: str = None
    improved: float = None

    def to_csv(self, exact=False):
        r = self.report
        row = [
            self.problem,
            self.depth,
            self.method,
            metrics.format_percent(r.optimal_hit_rate),
            metrics.format_percent(r.approximation_ratio),
            metrics.format_percent(r.feasibility_rate),
            f"{r.steps:.2f}",
            self.n_instances,
        ]
        if self.source is not None:
            row = [self.source] + row + [metrics.format_percent(self.improved)]
        row.append(self.seed)
        if exact:
            row.append(metrics.format_percent(r.ar_unnormalized))
        return row


def run_single_problem_experiment(config, dataset, checkpoint_dir, methods=None):
    """Evaluate every method on the test split for each (class, depth) cell.

    Returns one ResultRow per cell and method, each holding the mean report
    over the test instances.
    """
    methods = list(methods or METHOD_BACKENDS)
    for method in methods:
        if method not in METHOD_BACKENDS:
            raise ValueError(f"Unknown method {method!r}, expected one of {list(METHOD_BACKENDS)}")
    graphs = list(dataset.test)
    if not graphs:
        raise ValueError("The dataset has no test graphs")

    rows = []
    for problem in config.problem_classes:
        oracles = util.map_ordered(
            lambda g: problems.brute_force_optimum(problem, g), graphs, config.threads
        )
        for p in config.p:
            for method_code, method in enumerate(methods):
                backend = METHOD_BACKENDS[method]
                if backend is None:
                    items = [
                        meta.MetaInstance(g.id, hamiltonians.build_cost_hamiltonian(problem, g))
                        for g in graphs
                    ]
                    model = None
                else:
                    model = meta.load_model(checkpoint_dir, problem.value, p, backend)
                    _check_depth(model, p)
                    provider = make_provider(backend, checkpoint_dir)
                    items = prepare_items(problem, graphs, provider, config.threads)

                def evaluate(index):
                    graph, item, oracle = graphs[index], items[index], oracles[index]
                    rng = util.derive_rng(config.seed, _class_code(problem), p, method_code, index)
                    if model is None:
                        result = run_vanilla_qaoa(
                            item.hamiltonian,
                            p,
                            rng,
                            config.vanilla_lr,
                            config.vanilla_steps,
                            config.tolerance,
                        )
                        return _score(config, problem, graph, result.state, rng, oracle, result.steps)
                    trajectory = meta.rollout(
                        model, item.hamiltonian, item.embedding, config.horizon
                    ).detach()
                    state = simulator.run_qaoa(item.hamiltonian, trajectory.thetas[-1])
                    return _score(config, problem, graph, state, rng, oracle, config.horizon)

                reports = util.map_ordered(evaluate, range(len(graphs)), config.threads)
                report = metrics.mean_reports(reports)
                util.log(
                    f"{problem.value} p={p} {method}: "
                    f"p_opt_hit={metrics.format_percent(report.optimal_hit_rate)} "
                    f"ar={metrics.format_percent(report.approximation_ratio)}"
                )
                rows.append(ResultRow(problem.value, p, method, report, len(graphs), config.seed))
    return rows


def _check_depth(model, p):
    if model.config.p != p:
        raise ValueError(f"Checkpoint was trained for p={model.config.p}, target needs p={p}")


def enumerate_transfer_cells(classes, depths, include_same=False):
    """(source, target, p) cells in depth-major order"""
    classes = [ProblemClass.from_name(c) for c in classes]
    return [
        (source, target, p)
        for p in depths
        for source in classes
        for target in classes
        if include_same or source is not target
    ]


def run_cross_problem_experiment(config, dataset, checkpoint_dir, include_same=False):
    """Fine-tune source-class models on target-class instances.

    Every test instance gets its own adapted copy of the source model. The
    ``improved`` column is the fraction of instances whose meta-loss dropped
    through fine-tuning.
    """
    graphs = list(dataset.test)
    if not graphs:
        raise ValueError("The dataset has no test graphs")
    backend = config.backend
    method = BACKEND_METHODS[backend]
    provider = make_provider(backend, checkpoint_dir)
    weights = meta.LossWeights.linear(config.horizon)
    oracle_cache = {}

    rows = []
    for cell, (source, target, p) in enumerate(
        enumerate_transfer_cells(config.classes, config.p, include_same)
    ):
        model = meta.load_model(checkpoint_dir, source.value, p, backend)
        _check_depth(model, p)
        if target not in oracle_cache:
            oracle_cache[target] = util.map_ordered(
                lambda g: problems.brute_force_optimum(target, g), graphs, config.threads
            )
        oracles = oracle_cache[target]
        items = prepare_items(target, graphs, provider, config.threads)

        def transfer(index):
            graph, item = graphs[index], items[index]
            rng = util.derive_rng(config.seed, cell, index)
            before = meta.rollout(model, item.hamiltonian, item.embedding, config.horizon)
            adapted = meta.fine_tune(
                model,
                item.hamiltonian,
                item.embedding,
                config.fine_tune_steps,
                config.lr,
                config.horizon,
            )
            after = meta.rollout(adapted, item.hamiltonian, item.embedding, config.horizon)
            improved = float(meta.meta_loss(after, weights)) < float(meta.meta_loss(before, weights))
            state = simulator.run_qaoa(item.hamiltonian, after.thetas[-1])
            report = _score(config, target, graph, state, rng, oracles[index], config.horizon)
            return report, improved

        results = util.map_ordered(transfer, range(len(graphs)), config.threads)
        report = metrics.mean_reports([r for r, _ in results])
        improved = float(np.mean([flag for _, flag in results]))
        util.log(
            f"{source.value} -> {target.value} p={p}: "
            f"p_opt_hit={metrics.format_percent(report.optimal_hit_rate)} improved={improved:.2f}"
        )
        rows.append(
            ResultRow(
                target.value,
                p,
                method,
                report,
                len(graphs),
                config.seed,
                source=source.value,
                improved=improved,
            )
        )
    return rows


def run_diversity_experiment(config, dataset, checkpoint_dir, backends=None):
    """Angle-trajectory spread on the test split per (class, depth, method)"""
    backends = list(backends or [config.backend])
    graphs = list(dataset.test)
    stats = {}
    for problem in config.problem_classes:
        for p in config.p:
            for backend in backends:
                model = meta.load_model(checkpoint_dir, problem.value, p, backend)
                _check_depth(model, p)
                items = prepare_items(
                    problem, graphs, make_provider(backend, checkpoint_dir), config.threads
                )
                rollouts = meta.evaluate(model, items, config.horizon, config.threads)
                stats[(problem.value, p, BACKEND_METHODS[backend])] = metrics.trajectory_diversity(
                    np.array([r.thetas for r in rollouts])
                )
    return stats


def train_meta_models(config, dataset, checkpoint_dir):
    """Train and save one meta-optimizer per (class, depth) for ``config.backend``"""
    checkpoint_dir = Path(checkpoint_dir)
    provider = make_provider(config.backend, checkpoint_dir)
    train_config = config.train_config()
    num_batches = -(-len(dataset.train) // config.batch)
    paths = []
    for problem in config.problem_classes:
        items = prepare_items(problem, dataset.train, provider, config.threads)
        for p in config.p:
            util.log(f"Training {config.backend} meta-optimizer for {problem.value} p={p}")
            model = meta.create_model(
                meta.MetaConfig(
                    p=p,
                    horizon=config.horizon,
                    embed_dim=provider.dim,
                    problem=problem.value,
                    backend=config.backend,
                ),
                seed=config.seed,
            )
            best, history = meta.train(model, items, train_config)
            paths.append(meta.save_model(best, checkpoint_dir, len(history) * num_batches))
            meta.write_history(
                history, checkpoint_dir / f"history-{config.backend}-{problem.value}-p{p}.csv"
            )
    return paths


def pretrain_embeddings(config, dataset, checkpoint_dir):
    """Multi-domain GNN pre-training on the train split under every configured class"""
    datasets = {problem: list(dataset.train) for problem in config.problem_classes}
    pretrain_config = embeddings.PretrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        batch=config.batch,
        seed=config.seed,
        threads=config.threads,
    )
    weights, history = embeddings.pretrain_unihetco(datasets, pretrain_config)
    config_data = dict(classes=list(config.classes), epochs=config.epochs, seed=config.seed)
    path = embeddings.save_gnn(weights, checkpoint_dir, len(history), config_data)
    embeddings.write_pretrain_history(history, Path(checkpoint_dir) / "history-unihetco-gnn.csv")
    return path


def write_results(rows, path, exact=False):
    header = list(RESULT_COLUMNS) + (["ar_literal"] if exact else [])
    return util.write_csv(path, header, (row.to_csv(exact) for row in rows))


def write_transfer(rows, path, exact=False):
    header = list(TRANSFER_COLUMNS) + (["ar_literal"] if exact else [])
    return util.write_csv(path, header, (row.to_csv(exact) for row in rows))
