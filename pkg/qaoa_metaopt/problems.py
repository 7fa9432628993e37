# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Graph instances, problem classes, QP/QUBO encodings and brute-force oracles."""
import enum
import hashlib
import itertools
import json
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import networkx as nx
import numpy as np

from qaoa_metaopt import util

MAX_GENERATION_ATTEMPTS = 10_000
MAX_ORACLE_QUBITS = 20
WL_ITERATIONS = 3
SPLITS = ("train", "test")


class GraphGenerationError(RuntimeError):
    """Raised when rejection sampling cannot produce a graph"""


class ProblemClass(enum.Enum):
    MAXCUT = "maxcut"
    MIS = "mis"
    MAXCLIQUE = "maxclique"
    MVC = "mvc"

    @property
    def maximize(self):
        return self is not ProblemClass.MVC

    @property
    def sense(self):
        return "maximize" if self.maximize else "minimize"

    @property
    def constrained(self):
        return self is not ProblemClass.MAXCUT

    @classmethod
    def from_name(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            names = ", ".join(c.value for c in cls)
            raise ValueError(f"Unknown problem class {name!r}, expected one of {names}")


@dataclass(frozen=True)
class GraphInstance:
    """An undirected simple graph on vertices ``0..n-1``"""

    n: int
    edges: tuple
    id: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Graph needs at least one vertex, got n={self.n}")
        edges = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"Self-loop on vertex {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"Edge ({u}, {v}) out of range for n={self.n}")
            edge = (min(u, v), max(u, v))
            if edge in edges:
                raise ValueError(f"Duplicate edge {edge}")
            edges.add(edge)
        object.__setattr__(self, "edges", tuple(sorted(edges)))
        if not self.id:
            text = f"{self.n}:" + ",".join(f"{u}-{v}" for u, v in self.edges)
            digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
            object.__setattr__(self, "id", f"g{self.n}-{digest}")

    @property
    def num_edges(self):
        return len(self.edges)

    def edge_array(self):
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    def adjacency(self):
        adj = np.zeros((self.n, self.n), dtype=np.int64)
        for u, v in self.edges:
            adj[u, v] = adj[v, u] = 1
        return adj

    def degrees(self):
        return self.adjacency().sum(axis=1)

    def to_networkx(self):
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph

    def is_connected(self):
        return nx.is_connected(self.to_networkx())

    def relabel(self, perm):
        """Return the graph with vertex ``v`` renamed to ``perm[v]``"""
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.n)):
            raise ValueError(f"Not a permutation of {self.n} vertices: {perm}")
        return GraphInstance(self.n, tuple((perm[u], perm[v]) for u, v in self.edges))

    def to_record(self, split):
        return dict(id=self.id, n=self.n, edges=[list(e) for e in self.edges], split=split)


@dataclass(frozen=True)
class QpForm:
    """min xᵀQx + cᵀx subject to Ax ≤ b"""

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class QuboForm:
    """min xᵀQ̃x over binary x, constraints kept for the constraint graph"""

    Qtilde: np.ndarray
    A: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class OracleResult:
    optimal_value: float
    optimizers: frozenset
    feasible_count: int


@dataclass
class Dataset:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"Unknown split {name!r}, expected one of {SPLITS}")
        return getattr(self, name)

    def records(self):
        for split in SPLITS:
            for graph in self.split(split):
                yield graph.to_record(split)


def complete_graph(n):
    return GraphInstance(n, tuple(itertools.combinations(range(n), 2)))


def complement(graph):
    """Get the complement graph on the same vertex set"""
    present = set(graph.edges)
    edges = tuple(e for e in itertools.combinations(range(graph.n), 2) if e not in present)
    return GraphInstance(graph.n, edges)


def generate_random_connected_graph(n, k, rng):
    """Sample G(n, k/n) conditioned on connectivity by rejection.

    Parameters
    ----------
    n : int
        Number of vertices, at least 2
    k : int
        Expected degree parameter, ``1 <= k <= n - 1``
    rng : numpy.random.Generator
        Random stream, advanced by every attempt

    Returns
    -------
    GraphInstance
        A connected graph on ``n`` vertices
    """
    if n < 2:
        raise ValueError(f"Need n >= 2, got {n}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"Need 1 <= k <= n - 1, got k={k} for n={n}")

    pairs = list(itertools.combinations(range(n), 2))
    prob = k / n
    for _ in range(MAX_GENERATION_ATTEMPTS):
        keep = rng.random(len(pairs)) < prob
        graph = GraphInstance(n, tuple(p for p, kept in zip(pairs, keep) if kept))
        if graph.num_edges >= n - 1 and graph.is_connected():
            return graph
    raise GraphGenerationError(
        f"No connected graph after {MAX_GENERATION_ATTEMPTS} attempts for n={n}, k={k}"
    )


class IsomorphismIndex:
    """Set of graphs up to isomorphism.

    Graphs are bucketed by their WL hash; a hash collision is settled with an
    exact isomorphism test.
    """

    def __init__(self, iterations=WL_ITERATIONS):
        self.iterations = iterations
        self._buckets = {}

    def __len__(self):
        return sum(len(b) for b in self._buckets.values())

    def _key(self, graph):
        nx_graph = graph.to_networkx()
        wl = nx.weisfeiler_lehman_graph_hash(nx_graph, iterations=self.iterations)
        return (graph.n, graph.num_edges, wl), nx_graph

    def contains(self, graph):
        key, nx_graph = self._key(graph)
        return any(nx.is_isomorphic(nx_graph, other) for other in self._buckets.get(key, []))

    def add(self, graph):
        """Add a graph, returning False if an isomorphic copy is already present"""
        key, nx_graph = self._key(graph)
        bucket = self._buckets.setdefault(key, [])
        if any(nx.is_isomorphic(nx_graph, other) for other in bucket):
            return False
        bucket.append(nx_graph)
        return True


def _sample_graph(n_range, rng):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    k = int(rng.integers(3, n)) if n > 3 else n - 1
    return generate_random_connected_graph(n, k, rng)


def generate_dataset(
    train_count, test_count, train_n_range=(6, 10), test_n=12, master_seed=0, threads=1
):
    """Generate pairwise non-isomorphic train and test graphs.

    Record ``i`` of a split draws from its own stream derived from
    ``(master_seed, split, i)``; a draw isomorphic to an accepted graph is
    rejected and the same stream draws again. First draws are made on
    ``threads`` workers, acceptance runs in record order.
    """
    if train_count < 1 or test_count < 1:
        raise ValueError(f"Counts must be >= 1, got train={train_count}, test={test_count}")
    lo, hi = train_n_range
    if not 2 <= lo <= hi:
        raise ValueError(f"Invalid train size range {train_n_range}")

    plan = [("train", train_count, (lo, hi)), ("test", test_count, (test_n, test_n))]
    records = [
        (split_code, split, i, n_range)
        for split_code, (split, count, n_range) in enumerate(plan)
        for i in range(count)
    ]

    def first_draw(record):
        split_code, _, i, n_range = record
        rng = util.derive_rng(master_seed, split_code, i)
        return rng, _sample_graph(n_range, rng)

    index = IsomorphismIndex()
    dataset = Dataset()
    for (_, split, i, n_range), (rng, graph) in zip(
        records, util.map_ordered(first_draw, records, threads)
    ):
        for _ in range(MAX_GENERATION_ATTEMPTS):
            if index.add(graph):
                dataset.split(split).append(graph)
                break
            graph = _sample_graph(n_range, rng)
        else:
            raise GraphGenerationError(
                f"Could not find a new non-isomorphic graph for {split} record {i}"
            )
    util.log(f"Generated {len(dataset.train)} train and {len(dataset.test)} test graphs")
    return dataset


def write_dataset(dataset, path):
    """Write a dataset as JSON lines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(record, separators=(",", ":")) for record in dataset.records()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_dataset(path):
    """Read a JSON-lines dataset file"""
    dataset = Dataset()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        graph = GraphInstance(record["n"], tuple(map(tuple, record["edges"])), record["id"])
        dataset.split(record["split"]).append(graph)
    return dataset


def bits_to_str(bits):
    return "".join(str(int(b)) for b in bits)


def str_to_bits(text):
    return np.array([int(c) for c in text], dtype=np.uint8)


def bits_to_index(bits):
    return int(sum(int(b) << i for i, b in enumerate(bits)))


def index_to_bits(index, n):
    return np.array([(index >> i) & 1 for i in range(n)], dtype=np.uint8)


def basis_bits(n):
    """All 2^n bitstrings as rows, row ``idx`` holding x_i = bit i of idx"""
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def _pairs_both(bits, pairs):
    if len(pairs) == 0:
        return np.zeros(bits.shape[0], dtype=np.int64)
    pairs = np.asarray(pairs)
    return (bits[:, pairs[:, 0]] & bits[:, pairs[:, 1]]).sum(axis=1).astype(np.int64)


def objective_values(problem, graph, bits):
    """Classical objective for each row of a (rows, n) bit matrix"""
    problem = ProblemClass.from_name(problem)
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    if bits.shape[1] != graph.n:
        raise ValueError(f"Bitstring length {bits.shape[1]} does not match n={graph.n}")
    if problem is ProblemClass.MAXCUT:
        if graph.num_edges == 0:
            return np.zeros(bits.shape[0], dtype=np.int64)
        edges = graph.edge_array()
        return (bits[:, edges[:, 0]] != bits[:, edges[:, 1]]).sum(axis=1).astype(np.int64)
    return bits.sum(axis=1).astype(np.int64)


def violation_counts(problem, graph, bits):
    """Number of violated constraints for each row of a bit matrix"""
    problem = ProblemClass.from_name(problem)
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    if bits.shape[1] != graph.n:
        raise ValueError(f"Bitstring length {bits.shape[1]} does not match n={graph.n}")
    if problem is ProblemClass.MAXCUT:
        return np.zeros(bits.shape[0], dtype=np.int64)
    if problem is ProblemClass.MIS:
        return _pairs_both(bits, graph.edges)
    if problem is ProblemClass.MAXCLIQUE:
        return _pairs_both(bits, complement(graph).edges)
    return _pairs_both(1 - bits, graph.edges)


def feasible_mask(problem, graph, bits):
    return violation_counts(problem, graph, bits) == 0


def objective_value(problem, graph, x):
    """Classical objective of a single bitstring"""
    x = np.asarray(x)
    if x.ndim != 1 or len(x) != graph.n:
        raise ValueError(f"Bitstring length {x.size} does not match n={graph.n}")
    return float(objective_values(problem, graph, x[None, :])[0])


def is_feasible(problem, graph, x):
    x = np.asarray(x)
    if x.ndim != 1 or len(x) != graph.n:
        raise ValueError(f"Bitstring length {x.size} does not match n={graph.n}")
    return bool(feasible_mask(problem, graph, x[None, :])[0])


def brute_force_optimum(problem, graph):
    """Enumerate all 2^n bitstrings and return the best feasible ones"""
    problem = ProblemClass.from_name(problem)
    if graph.n > MAX_ORACLE_QUBITS:
        raise ValueError(f"Brute force is limited to n <= {MAX_ORACLE_QUBITS}, got {graph.n}")
    bits = basis_bits(graph.n)
    values = objective_values(problem, graph, bits)
    feasible = feasible_mask(problem, graph, bits)
    feasible_values = values[feasible]
    best = feasible_values.max() if problem.maximize else feasible_values.min()
    winners = np.flatnonzero(feasible & (values == best))
    optimizers = frozenset(tuple(int(b) for b in bits[i]) for i in winners)
    return OracleResult(float(best), optimizers, int(feasible.sum()))


def to_qp(problem, graph):
    """Encode an instance in the minimization QP template"""
    problem = ProblemClass.from_name(problem)
    n = graph.n
    Q = np.zeros((n, n))
    c = np.zeros(n)
    rows = []
    if problem is ProblemClass.MAXCUT:
        for u, v in graph.edges:
            Q[u, v] = Q[v, u] = 1.0
        c = -graph.degrees().astype(float)
    elif problem in (ProblemClass.MIS, ProblemClass.MAXCLIQUE):
        c = -np.ones(n)
        pairs = graph.edges if problem is ProblemClass.MIS else complement(graph).edges
        for u, v in pairs:
            row = np.zeros(n)
            row[u] = row[v] = 1.0
            rows.append((row, 1.0))
    else:
        c = np.ones(n)
        # x_u + x_v >= 1 standardized to -x_u - x_v <= -1
        for u, v in graph.edges:
            row = np.zeros(n)
            row[u] = row[v] = -1.0
            rows.append((row, -1.0))

    A = np.array([r for r, _ in rows]).reshape(len(rows), n)
    b = np.array([rhs for _, rhs in rows], dtype=float)
    return QpForm(Q, c, A, b)


def qp_to_qubo(qp):
    """Fold the linear terms into the diagonal"""
    return QuboForm(qp.Q + np.diag(qp.c), qp.A.copy(), qp.b.copy())


def qp_objective(qp, x):
    x = np.asarray(x, dtype=float)
    return float(x @ qp.Q @ x + qp.c @ x)
