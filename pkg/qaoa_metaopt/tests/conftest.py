# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import os

import numpy as np
import pytest
from click.testing import CliRunner
from pytest import fixture

from qaoa_metaopt import cli
from qaoa_metaopt import problems
from qaoa_metaopt.tests import util as testutil


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="Run reduced-scale experiments"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@fixture(autouse=True)
def mock_env(mocker, tmp_path):
    """Clear unwanted environment variables and run from a scratch folder"""
    env = {key: value for key, value in os.environ.items() if not key.startswith("QM_")}
    mocker.patch.dict(os.environ, env, clear=True)

    prev_dir = os.getcwd()
    os.chdir(tmp_path)
    yield
    os.chdir(prev_dir)


@fixture
def rng():
    return np.random.default_rng(1234)


@fixture
def small_dataset(tmp_path):
    dataset = testutil.small_dataset()
    path = problems.write_dataset(dataset, tmp_path / "dataset.jsonl")
    return path


@fixture()
def runner():
    cli_runner = CliRunner()

    def run(*args, **kwargs):
        result = cli_runner.invoke(cli.main, *args, **kwargs)
        if result.exit_code != 0:
            if result.stderr_bytes:
                print("Captured stderr\n", result.stderr, "\n\n")
            print("Captured stdout\n", result.stdout, "\n\n")
            raise result.exception

        return result

    return run


@fixture()
def raw_runner():
    """Invoke the CLI without raising on a nonzero exit code"""
    cli_runner = CliRunner()

    def run(*args, **kwargs):
        return cli_runner.invoke(cli.main, *args, **kwargs)

    return run
