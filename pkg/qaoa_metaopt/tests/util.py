# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import numpy as np

from qaoa_metaopt import problems
from qaoa_metaopt.problems import GraphInstance
from qaoa_metaopt.problems import ProblemClass

ALL_CLASSES = list(ProblemClass)

TOML_CONFIG = """
[options]
seed = 7
threads = 2
"""

JSON_CONFIG = '{"seed": 7, "classes": ["mis"], "p": [4]}'


def single_edge():
    return GraphInstance(2, ((0, 1),))


def triangle():
    return problems.complete_graph(3)


def path_graph(n):
    return GraphInstance(n, tuple((i, i + 1) for i in range(n - 1)))


def cycle_graph(n):
    return GraphInstance(n, tuple((i, (i + 1) % n) for i in range(n)))


def star_graph(n):
    return GraphInstance(n, tuple((0, i) for i in range(1, n)))


def random_graph(n, seed):
    rng = np.random.default_rng(seed)
    k = n - 1 if n <= 3 else int(rng.integers(3, n))
    return problems.generate_random_connected_graph(n, k, rng)


def random_graphs(count, n_range=(4, 7), seed=0):
    rng = np.random.default_rng(seed)
    lo, hi = n_range
    return [random_graph(int(rng.integers(lo, hi + 1)), seed * 1000 + i) for i in range(count)]


def small_dataset(train=6, test=3, seed=0):
    """A dataset small enough for brute-force oracles in tests"""
    return problems.generate_dataset(train, test, (5, 6), 6, master_seed=seed)
