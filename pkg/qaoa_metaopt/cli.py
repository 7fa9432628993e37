# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import os
import time
from pathlib import Path

import click

from qaoa_metaopt import embeddings
from qaoa_metaopt import hamiltonians
from qaoa_metaopt import lib
from qaoa_metaopt import metrics
from qaoa_metaopt import problems
from qaoa_metaopt import util

COMMAND_KEY = "qaoa_metaopt.command"


class ExperimentGroup(click.Group):
    """Click group tailored to qaoa-metaopt"""

    def parse_args(self, ctx, args):
        """Fill options that are neither on the command line nor in the env from the config"""
        if args and args[0] in self.commands:
            ctx.meta[COMMAND_KEY] = args[0]
            if args[0] != "list-envvars" and "--help" not in args:
                args = [args[0]] + self._apply_config(ctx, self.commands[args[0]], list(args[1:]))
        return super().parse_args(ctx, args)

    def _apply_config(self, ctx, command, args):
        try:
            config = util.read_config(_config_path(args))
        except ValueError as e:
            raise click.UsageError(str(e), ctx) from None

        for param in command.params:
            if not isinstance(param, click.Option) or param.name == "config":
                continue
            # Defer to env var overrides
            if param.envvar and os.environ.get(param.envvar):
                continue
            if param.name not in config:
                continue
            # Defer to cli overrides
            if any(arg == opt or arg.startswith(f"{opt}=") for arg in args for opt in param.opts):
                continue
            value = config[param.name]
            flag = param.opts[0]
            if param.is_flag:
                if value:
                    args.append(flag)
            elif param.multiple:
                for item in value if isinstance(value, (list, tuple)) else [value]:
                    args.extend([flag, str(item)])
            else:
                args.extend([flag, str(value)])
        return args

    def invoke(self, ctx):
        cmd_name = ctx.meta.get(COMMAND_KEY)
        if cmd_name and cmd_name != "list-envvars":
            # Print a separation header
            util.log(f'\n\n{"-" * 50}')
            util.log(cmd_name)
            util.log(f'{"-" * 50}\n\n')
        return super().invoke(ctx)

    def list_commands(self, ctx):
        """List commands in insertion order"""
        return self.commands.keys()


def _config_path(args):
    for i, arg in enumerate(args):
        if arg == "--config" and i + 1 < len(args):
            return args[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return os.environ.get("QM_CONFIG")


@click.group(cls=ExperimentGroup)
def main():
    """QAOA meta-optimizer experiments"""
    pass


# Extracted common options
config_options = [
    click.option(
        "--config",
        envvar="QM_CONFIG",
        type=click.Path(dir_okay=False),
        help="A JSON or TOML config file",
    )
]

seed_options = [
    click.option("--seed", envvar="QM_SEED", default=0, type=int, help="The master seed")
]

out_options = [
    click.option(
        "--out",
        envvar="QM_OUT",
        default="results",
        type=click.Path(file_okay=False),
        help="The folder for results and the run manifest",
    )
]

threads_options = [
    click.option(
        "--threads",
        envvar="QM_THREADS",
        default=1,
        type=click.IntRange(min=1),
        help="Worker threads for per-instance work",
    )
]

dataset_options = [
    click.option(
        "--dataset",
        envvar="QM_DATASET",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="The JSON-lines dataset file",
    )
]

checkpoint_options = [
    click.option(
        "--checkpoints",
        envvar="QM_CHECKPOINTS",
        default="checkpoints",
        type=click.Path(file_okay=False),
        help="The folder holding model checkpoints",
    )
]

grid_options = [
    click.option(
        "--class",
        "classes",
        envvar="QM_CLASSES",
        multiple=True,
        default=lib.CLASS_NAMES,
        type=click.Choice(lib.CLASS_NAMES),
        help="Problem class(es) to run",
    ),
    click.option(
        "--p",
        envvar="QM_P",
        multiple=True,
        default=[str(p) for p in lib.DEPTHS],
        type=click.Choice([str(p) for p in lib.DEPTHS]),
        help="QAOA depth(s) to run",
    ),
]

backend_options = [
    click.option(
        "--backend",
        envvar="QM_BACKEND",
        default=lib.ExperimentConfig.backend,
        type=click.Choice(embeddings.BACKENDS),
        help="The graph embedding backend",
    )
]

training_options = [
    click.option(
        "--epochs", envvar="QM_EPOCHS", default=lib.ExperimentConfig.epochs, type=int, help="Training epochs"
    ),
    click.option(
        "--batch", envvar="QM_BATCH", default=lib.ExperimentConfig.batch, type=int, help="Mini-batch size"
    ),
    click.option(
        "--lr", envvar="QM_LR", default=lib.ExperimentConfig.lr, type=float, help="Adam learning rate"
    ),
]

horizon_options = [
    click.option(
        "--horizon",
        envvar="QM_HORIZON",
        default=lib.ExperimentConfig.horizon,
        type=int,
        help="Meta-optimizer rollout length",
    )
]

sampling_options = [
    click.option(
        "--shots", envvar="QM_SHOTS", default=lib.ExperimentConfig.shots, type=int, help="Measurement shots"
    ),
    click.option(
        "--exact",
        envvar="QM_EXACT",
        is_flag=True,
        help="Score exact probabilities instead of sampled shots",
    ),
]

fine_tune_options = [
    click.option(
        "--fine-tune-steps",
        envvar="QM_FINE_TUNE_STEPS",
        default=lib.ExperimentConfig.fine_tune_steps,
        type=int,
        help="Per-instance fine-tuning steps",
    )
]


def add_options(options):
    """Add extracted common options to a click command"""
    # https://stackoverflow.com/a/40195800
    def _add_options(func):
        for option in reversed(options):
            func = option(func)
        return func

    return _add_options


def _experiment_config(**kwargs):
    kwargs.pop("config", None)
    if "p" in kwargs and kwargs["p"] is not None:
        kwargs["p"] = tuple(int(p) for p in kwargs["p"])
    try:
        return lib.ExperimentConfig.from_mapping(kwargs)
    except ValueError as e:
        raise click.UsageError(str(e)) from None


def _finish(out, options, seed, started):
    ctx = click.get_current_context()
    path = util.write_manifest(out, ctx.info_name, options, seed, started)
    util.log(f"Wrote run manifest to {util.normalize_path(path)}")


@main.command()
def list_envvars():
    """List the environment variables"""
    group = click.get_current_context().parent.command
    envvars = set()
    for cmd_name in group.commands:
        for param in group.commands[cmd_name].params:
            if isinstance(param, click.Option):
                if param.envvar:
                    envvars.add((param.name, param.envvar))

    for key, envvar in sorted(envvars):
        click.echo(f"{key.replace('_', '-')}: {envvar}")


@main.command()
@click.option("--train", envvar="QM_TRAIN", default=1000, type=int, help="Training graphs")
@click.option("--test", envvar="QM_TEST", default=100, type=int, help="Test graphs")
@click.option("--train-n-min", envvar="QM_TRAIN_N_MIN", default=6, type=int, help="Smallest training graph")
@click.option("--train-n-max", envvar="QM_TRAIN_N_MAX", default=10, type=int, help="Largest training graph")
@click.option("--test-n", envvar="QM_TEST_N", default=12, type=int, help="Test graph size")
@add_options(seed_options)
@add_options(threads_options)
@add_options(config_options)
@click.option(
    "--out",
    envvar="QM_DATASET_OUT",
    default="dataset.jsonl",
    type=click.Path(dir_okay=False),
    help="The dataset file to write",
)
def gen_data(train, test, train_n_min, train_n_max, test_n, seed, threads, config, out):
    """Generate non-isomorphic train and test graphs"""
    started = time.time()
    try:
        dataset = problems.generate_dataset(
            train, test, (train_n_min, train_n_max), test_n, master_seed=seed, threads=threads
        )
    except ValueError as e:
        raise click.UsageError(str(e)) from None
    path = problems.write_dataset(dataset, out)
    util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(
        train=train,
        test=test,
        train_n_min=train_n_min,
        train_n_max=train_n_max,
        test_n=test_n,
        out=out,
        threads=threads,
    )
    _finish(Path(out).parent, options, seed, started)


@main.command()
@add_options(dataset_options)
@add_options(grid_options[:1])
@add_options(training_options)
@add_options(checkpoint_options)
@add_options(seed_options)
@add_options(threads_options)
@add_options(out_options)
@add_options(config_options)
def pretrain_embed(dataset, classes, epochs, batch, lr, checkpoints, seed, threads, out, config):
    """Pre-train the heterogeneous GNN on all configured classes"""
    started = time.time()
    cfg = _experiment_config(
        classes=classes, epochs=epochs, batch=batch, lr=lr, seed=seed, threads=threads
    )
    path = lib.pretrain_embeddings(cfg, problems.read_dataset(dataset), checkpoints)
    util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(dataset=dataset, classes=list(classes), epochs=epochs, batch=batch, lr=lr)
    _finish(out, dict(options, checkpoints=checkpoints, threads=threads), seed, started)


@main.command()
@add_options(dataset_options)
@add_options(grid_options)
@add_options(backend_options)
@add_options(training_options)
@add_options(horizon_options)
@add_options(checkpoint_options)
@add_options(seed_options)
@add_options(threads_options)
@add_options(out_options)
@add_options(config_options)
def train_meta(
    dataset, classes, p, backend, epochs, batch, lr, horizon, checkpoints, seed, threads, out, config
):
    """Train meta-optimizers for every (class, depth) cell"""
    started = time.time()
    cfg = _experiment_config(
        classes=classes,
        p=p,
        backend=backend,
        epochs=epochs,
        batch=batch,
        lr=lr,
        horizon=horizon,
        seed=seed,
        threads=threads,
    )
    for path in lib.train_meta_models(cfg, problems.read_dataset(dataset), checkpoints):
        util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(
        dataset=dataset,
        classes=list(cfg.classes),
        p=list(cfg.p),
        backend=backend,
        epochs=epochs,
        batch=batch,
        lr=lr,
        horizon=horizon,
        checkpoints=checkpoints,
        threads=threads,
    )
    _finish(out, options, seed, started)


@main.command()
@add_options(dataset_options)
@add_options(grid_options)
@click.option(
    "--method",
    "methods",
    envvar="QM_METHODS",
    multiple=True,
    default=list(lib.METHOD_BACKENDS),
    type=click.Choice(list(lib.METHOD_BACKENDS)),
    help="Method(s) to evaluate",
)
@add_options(horizon_options)
@add_options(sampling_options)
@click.option(
    "--vanilla-steps",
    envvar="QM_VANILLA_STEPS",
    default=lib.ExperimentConfig.vanilla_steps,
    type=int,
    help="Step budget of the vanilla optimizer",
)
@click.option(
    "--vanilla-lr",
    envvar="QM_VANILLA_LR",
    default=lib.ExperimentConfig.vanilla_lr,
    type=float,
    help="Learning rate of the vanilla optimizer",
)
@click.option(
    "--tolerance",
    envvar="QM_TOLERANCE",
    default=lib.ExperimentConfig.tolerance,
    type=float,
    help="Vanilla convergence tolerance",
)
@add_options(checkpoint_options)
@add_options(seed_options)
@add_options(threads_options)
@add_options(out_options)
@add_options(config_options)
def eval_single(
    dataset,
    classes,
    p,
    methods,
    horizon,
    shots,
    exact,
    vanilla_steps,
    vanilla_lr,
    tolerance,
    checkpoints,
    seed,
    threads,
    out,
    config,
):
    """Evaluate each method within its own problem class"""
    started = time.time()
    cfg = _experiment_config(
        classes=classes,
        p=p,
        horizon=horizon,
        shots=shots,
        exact=exact,
        vanilla_steps=vanilla_steps,
        vanilla_lr=vanilla_lr,
        tolerance=tolerance,
        seed=seed,
        threads=threads,
    )
    try:
        rows = lib.run_single_problem_experiment(
            cfg, problems.read_dataset(dataset), checkpoints, methods
        )
    except FileNotFoundError as e:
        raise click.ClickException(str(e)) from None
    path = lib.write_results(rows, Path(out) / "results-single.csv", exact)
    util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(
        dataset=dataset,
        classes=list(cfg.classes),
        p=list(cfg.p),
        methods=list(methods),
        horizon=horizon,
        shots=shots,
        exact=exact,
        vanilla_steps=vanilla_steps,
        vanilla_lr=vanilla_lr,
        tolerance=tolerance,
        checkpoints=checkpoints,
        threads=threads,
    )
    _finish(out, options, seed, started)


@main.command()
@add_options(dataset_options)
@add_options(grid_options)
@add_options(backend_options)
@add_options(horizon_options)
@add_options(fine_tune_options)
@click.option(
    "--lr", envvar="QM_LR", default=lib.ExperimentConfig.lr, type=float, help="Fine-tuning learning rate"
)
@add_options(sampling_options)
@click.option(
    "--include-same",
    envvar="QM_INCLUDE_SAME",
    is_flag=True,
    help="Also run source == target cells",
)
@add_options(checkpoint_options)
@add_options(seed_options)
@add_options(threads_options)
@add_options(out_options)
@add_options(config_options)
def eval_transfer(
    dataset,
    classes,
    p,
    backend,
    horizon,
    fine_tune_steps,
    lr,
    shots,
    exact,
    include_same,
    checkpoints,
    seed,
    threads,
    out,
    config,
):
    """Fine-tune models across problem classes"""
    started = time.time()
    cfg = _experiment_config(
        classes=classes,
        p=p,
        backend=backend,
        horizon=horizon,
        fine_tune_steps=fine_tune_steps,
        lr=lr,
        shots=shots,
        exact=exact,
        seed=seed,
        threads=threads,
    )
    try:
        rows = lib.run_cross_problem_experiment(
            cfg, problems.read_dataset(dataset), checkpoints, include_same
        )
    except FileNotFoundError as e:
        raise click.ClickException(str(e)) from None
    path = lib.write_transfer(rows, Path(out) / "results-transfer.csv", exact)
    util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(
        dataset=dataset,
        classes=list(cfg.classes),
        p=list(cfg.p),
        backend=backend,
        horizon=horizon,
        fine_tune_steps=fine_tune_steps,
        lr=lr,
        shots=shots,
        exact=exact,
        include_same=include_same,
        checkpoints=checkpoints,
        threads=threads,
    )
    _finish(out, options, seed, started)


@main.command()
@add_options(dataset_options)
@add_options(grid_options)
@click.option(
    "--backend",
    "backends",
    envvar="QM_BACKENDS",
    multiple=True,
    default=list(embeddings.BACKENDS),
    type=click.Choice(embeddings.BACKENDS),
    help="Embedding backend(s) to compare",
)
@add_options(horizon_options)
@add_options(checkpoint_options)
@add_options(seed_options)
@add_options(threads_options)
@add_options(out_options)
@add_options(config_options)
def diversity(dataset, classes, p, backends, horizon, checkpoints, seed, threads, out, config):
    """Measure the spread of generated angle trajectories"""
    started = time.time()
    cfg = _experiment_config(classes=classes, p=p, horizon=horizon, seed=seed, threads=threads)
    try:
        stats = lib.run_diversity_experiment(
            cfg, problems.read_dataset(dataset), checkpoints, backends
        )
    except FileNotFoundError as e:
        raise click.ClickException(str(e)) from None
    metrics.write_diversity(
        stats, Path(out) / "diversity.csv", Path(out) / "diversity-variance.csv"
    )
    util.log(f"Wrote diversity tables to {util.normalize_path(out)}")
    options = dict(
        dataset=dataset,
        classes=list(cfg.classes),
        p=list(cfg.p),
        backends=list(backends),
        horizon=horizon,
        checkpoints=checkpoints,
        threads=threads,
    )
    _finish(out, options, seed, started)


@main.command()
@add_options(dataset_options)
@add_options(grid_options[:1])
@click.option(
    "--split",
    envvar="QM_SPLIT",
    default="train",
    type=click.Choice(problems.SPLITS),
    help="The dataset split to embed",
)
@add_options(checkpoint_options)
@add_options(seed_options)
@add_options(threads_options)
@add_options(out_options)
@add_options(config_options)
def export_embed(dataset, classes, split, checkpoints, seed, threads, out, config):
    """Export pre-trained GNN embeddings as CSV"""
    started = time.time()
    try:
        weights = embeddings.load_gnn(checkpoints)
    except FileNotFoundError as e:
        raise click.ClickException(str(e)) from None
    graphs = problems.read_dataset(dataset).split(split)
    path = embeddings.export_embeddings(
        graphs, classes, weights, Path(out) / "embeddings.csv", threads
    )
    util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(
        dataset=dataset,
        classes=list(classes),
        split=split,
        checkpoints=checkpoints,
        threads=threads,
    )
    _finish(out, options, seed, started)


@main.command()
@add_options(dataset_options)
@click.option(
    "--class",
    "problem",
    envvar="QM_CLASS",
    required=True,
    type=click.Choice(lib.CLASS_NAMES),
    help="The problem class",
)
@click.option("--instance", envvar="QM_INSTANCE", required=True, help="The instance id")
@add_options(out_options)
@add_options(config_options)
def dump_hamiltonian(dataset, problem, instance, out, config):
    """Dump the cost Hamiltonian diagonal of one instance"""
    started = time.time()
    data = problems.read_dataset(dataset)
    graphs = {g.id: g for g in data.train + data.test}
    if instance not in graphs:
        raise click.BadParameter(f"No instance {instance!r} in {dataset}", param_hint="--instance")
    hamiltonian = hamiltonians.build_cost_hamiltonian(problem, graphs[instance])
    path = hamiltonians.write_diagonal_csv(
        hamiltonian, Path(out) / f"hamiltonian-{problem}-{instance}.csv"
    )
    util.log(f"Wrote {util.normalize_path(path)}")
    options = dict(dataset=dataset, problem=problem, instance=instance)
    _finish(out, options, None, started)


if __name__ == "__main__":  # pragma: no cover
    main()
