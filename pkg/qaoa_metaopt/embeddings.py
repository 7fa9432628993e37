# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Graph embeddings: a structural WL histogram and the problem-aware heterogeneous GNN.

The heterogeneous graph carries three relations over the variable nodes:
the problem edges, the objective couplings of Q̃ (off-diagonal edges, with
the diagonal kept as a node feature), and a star expansion of the
constraint rows of A onto constraint nodes holding b.
"""
import time
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path

import networkx as nx
import numpy as np

from qaoa_metaopt import neural
from qaoa_metaopt import problems
from qaoa_metaopt import util
from qaoa_metaopt.meta import CheckpointNotFound
from qaoa_metaopt.problems import ProblemClass

RELATION_DIM = 32
FUSED_DIM = 3 * RELATION_DIM
GNN_LAYERS = 2
VAR_FEATURES = 3
CONSTR_FEATURES = 2
WL_DIM = 48
WL_ITERATIONS = 3
LAMBDA_OBJ = 1.0
LAMBDA_CONSTR = 1.0
BACKENDS = ("none", "wl", "unihetco")
EMBED_DIMS = dict(none=0, wl=WL_DIM, unihetco=FUSED_DIM)
GNN_CHECKPOINT = "unihetco-gnn.json"


@dataclass(frozen=True)
class HeteroGraph:
    n: int
    m: int
    prob_edges: np.ndarray
    obj_edges: np.ndarray
    obj_weights: np.ndarray
    self_loops: np.ndarray
    constr_edges: np.ndarray
    constr_coeffs: np.ndarray
    rhs: np.ndarray
    qtilde: np.ndarray
    A: np.ndarray

    @property
    def num_constraint_incidences(self):
        return len(self.constr_edges)

    def var_features(self):
        degrees = np.zeros(self.n)
        for u, v in self.prob_edges:
            degrees[u] += 1
            degrees[v] += 1
        return np.column_stack([degrees / self.n, np.ones(self.n), self.self_loops])

    def constr_features(self):
        return np.column_stack([self.rhs, np.ones(self.m)]).reshape(self.m, CONSTR_FEATURES)

    def prob_mean(self):
        return _row_mean(_symmetric(self.n, self.prob_edges, np.ones(len(self.prob_edges))))

    def obj_mean(self):
        weights = _symmetric(self.n, self.obj_edges, self.obj_weights)
        counts = _symmetric(self.n, self.obj_edges, np.ones(len(self.obj_edges))).sum(axis=1)
        return weights / np.maximum(counts, 1)[:, None]

    def var_to_constr(self):
        """(m, n): coefficient-weighted mean over each constraint's variables"""
        counts = (self.A != 0).sum(axis=1)
        return self.A / np.maximum(counts, 1)[:, None]

    def constr_to_var(self):
        """(n, m): coefficient-weighted mean over each variable's constraints"""
        counts = (self.A != 0).sum(axis=0)
        return self.A.T / np.maximum(counts, 1)[:, None]


def _symmetric(n, edges, weights):
    out = np.zeros((n, n))
    for (u, v), w in zip(edges, weights):
        out[u, v] = out[v, u] = w
    return out


def _row_mean(adj):
    counts = (adj != 0).sum(axis=1)
    return adj / np.maximum(counts, 1)[:, None]


def build_hetero_graph(graph, qubo):
    """Build the variable/constraint heterogeneous graph of an encoded instance"""
    n = graph.n
    qtilde = np.asarray(qubo.Qtilde, dtype=float)
    if qtilde.shape != (n, n):
        raise ValueError(f"Q̃ has shape {qtilde.shape}, expected ({n}, {n})")
    A = np.asarray(qubo.A, dtype=float).reshape(-1, n)
    obj_edges = [(u, v) for u in range(n) for v in range(u + 1, n) if qtilde[u, v] != 0]
    rows, cols = np.nonzero(A)
    return HeteroGraph(
        n=n,
        m=A.shape[0],
        prob_edges=graph.edge_array(),
        obj_edges=np.array(obj_edges, dtype=np.int64).reshape(-1, 2),
        obj_weights=np.array([qtilde[u, v] for u, v in obj_edges]),
        self_loops=np.diag(qtilde).copy(),
        constr_edges=np.column_stack([cols, rows]).astype(np.int64).reshape(-1, 2),
        constr_coeffs=A[rows, cols],
        rhs=np.asarray(qubo.b, dtype=float).copy(),
        qtilde=qtilde,
        A=A,
    )


def encode(problem, graph):
    """The heterogeneous graph of ``graph`` under ``problem``'s QUBO encoding"""
    return build_hetero_graph(graph, problems.qp_to_qubo(problems.to_qp(problem, graph)))


def init_hetero_gnn(seed=0):
    """Relation stacks, fusion MLP and prediction head in one ParameterStore"""
    rng = util.derive_rng(seed, FUSED_DIM)
    store = neural.ParameterStore()
    for relation in ("prob", "obj", "constr"):
        for layer in range(GNN_LAYERS):
            fan_in = VAR_FEATURES if layer == 0 else RELATION_DIM
            neural.init_linear(store, f"{relation}.{layer}.self", fan_in, RELATION_DIM, rng)
            nbr_in = RELATION_DIM if relation == "constr" else fan_in
            neural.init_linear(
                store, f"{relation}.{layer}.nbr", nbr_in, RELATION_DIM, rng, bias=False
            )
            if relation == "constr":
                neural.init_linear(
                    store, f"constr.{layer}.to_constr", fan_in, RELATION_DIM, rng, bias=False
                )
                neural.init_linear(store, f"constr.{layer}.rhs", CONSTR_FEATURES, RELATION_DIM, rng)
    neural.init_mlp(store, "fuse", [FUSED_DIM, FUSED_DIM, FUSED_DIM], rng)
    neural.init_linear(store, "head", FUSED_DIM, 1, rng)
    return store


@dataclass
class HeteroOutput:
    h_prob: neural.Tensor
    h_obj: neural.Tensor
    h_constr: neural.Tensor
    fused: neural.Tensor
    x: neural.Tensor

    def node_embeddings(self):
        return neural.concat([self.h_prob, self.h_obj, self.h_constr], axis=1)


def _message_layer(h, aggregate, weights, name):
    self_part = neural.linear(h, weights, f"{name}.self")
    messages = neural.linear(neural.matmul(aggregate, h), weights, f"{name}.nbr")
    return neural.tanh(self_part + messages)


def _constraint_layer(h, hg, to_constr, to_var, constr_feats, weights, layer):
    name = f"constr.{layer}"
    constr_state = neural.tanh(
        neural.linear(neural.matmul(to_constr, h), weights, f"{name}.to_constr")
        + neural.linear(constr_feats, weights, f"{name}.rhs")
    )
    self_part = neural.linear(h, weights, f"{name}.self")
    messages = neural.linear(neural.matmul(to_var, constr_state), weights, f"{name}.nbr")
    return neural.tanh(self_part + messages)


def hetero_forward(weights, hg):
    """Relation-specific message passing, fusion and the sigmoid head.

    ``weights`` maps parameter names to tape tensors.
    """
    tape = next(iter(weights.values())).tape
    features = tape.constant(hg.var_features())
    prob_mean, obj_mean = hg.prob_mean(), hg.obj_mean()
    to_constr, to_var = hg.var_to_constr(), hg.constr_to_var()
    constr_feats = tape.constant(hg.constr_features())

    h_prob = h_obj = h_constr = features
    for layer in range(GNN_LAYERS):
        h_prob = _message_layer(h_prob, prob_mean, weights, f"prob.{layer}")
        h_obj = _message_layer(h_obj, obj_mean, weights, f"obj.{layer}")
        h_constr = _constraint_layer(h_constr, hg, to_constr, to_var, constr_feats, weights, layer)

    fused = neural.mlp_forward(
        neural.concat([h_prob, h_obj, h_constr], axis=1), weights, "fuse", 2
    )
    logits = neural.linear(fused, weights, "head")
    x = neural.sigmoid(neural.matmul(logits, np.ones(1)))
    return HeteroOutput(h_prob, h_obj, h_constr, fused, x)


def nco_loss(hg, x, tape=None):
    """Objective xᵀQ̃x, hinge penalty 1ᵀmax(0, Ax − b) and their weighted sum"""
    if not isinstance(x, neural.Tensor):
        tape = neural.Tape() if tape is None else tape
        x = tape.constant(x)
    if x.shape != (hg.n,):
        raise ValueError(f"Relaxed solution has shape {x.shape}, expected ({hg.n},)")
    l_obj = neural.matmul(x, neural.matmul(hg.qtilde, x))
    if hg.m:
        l_constr = neural.total(neural.relu(neural.matmul(hg.A, x) - hg.rhs))
    else:
        l_constr = x.tape.constant(0.0)
    total = neural.scale(l_obj, LAMBDA_OBJ) + neural.scale(l_constr, LAMBDA_CONSTR)
    return l_obj, l_constr, total


def relaxed_solution(weights, hg):
    """Run the GNN without recording gradients for reuse"""
    tape = neural.Tape()
    return hetero_forward(tape.parameters(weights), hg).x.value


def extract_embedding(weights, hg):
    """Mean-pooled concatenation of the three relation embeddings"""
    tape = neural.Tape()
    out = hetero_forward(tape.parameters(weights), hg)
    return out.node_embeddings().value.mean(axis=0)


@dataclass
class PretrainConfig:
    epochs: int = 30
    lr: float = 0.001
    batch: int = 32
    seed: int = 0
    threads: int = 1


@dataclass
class PretrainRecord:
    epoch: int
    mean_loss: float
    mean_obj: float
    mean_constr: float
    wall_time: float


def _instance_loss(weights, hg):
    tape = neural.Tape()
    out = hetero_forward(tape.parameters(weights), hg)
    l_obj, l_constr, total = nco_loss(hg, out.x)
    return float(total), float(l_obj), float(l_constr), tape.backward(total)


def pretrain_unihetco(datasets, config=None, weights=None, log_every=1):
    """Multi-domain unsupervised pre-training.

    ``datasets`` maps a ProblemClass to its list of graphs. Every batch holds
    ``batch // K`` instances of each of the K classes and the loss is the
    mean per-instance NCO loss.

    Returns
    -------
    tuple
        The trained ParameterStore and the list of PretrainRecord
    """
    config = config or PretrainConfig()
    datasets = {ProblemClass.from_name(c): graphs for c, graphs in datasets.items()}
    classes = list(datasets)
    if not classes:
        raise ValueError("Need at least one problem class to pre-train on")
    encoded = {c: [encode(c, g) for g in datasets[c]] for c in classes}
    smallest = min(len(v) for v in encoded.values())
    if smallest < 1:
        raise ValueError("Every problem class needs at least one instance")
    # a class smaller than its batch share shrinks every share
    per_class = max(min(config.batch // len(classes), smallest), 1)
    num_batches = smallest // per_class

    weights = weights.copy() if weights is not None else init_hetero_gnn(config.seed)
    state = neural.AdamState()
    history = []
    started = time.time()
    for epoch in range(1, config.epochs + 1):
        orders = [
            util.derive_rng(config.seed, epoch, k).permutation(len(encoded[c]))
            for k, c in enumerate(classes)
        ]
        results = []
        for b in range(num_batches):
            batch = [
                encoded[c][order[i]]
                for c, order in zip(classes, orders)
                for i in range(b * per_class, (b + 1) * per_class)
            ]
            batch_results = util.map_ordered(
                lambda hg: _instance_loss(weights, hg), batch, config.threads
            )
            results.extend(batch_results)
            neural.adam_step(
                weights, neural.mean_gradients([r[3] for r in batch_results]), state, config.lr
            )
        record = PretrainRecord(
            epoch,
            float(np.mean([r[0] for r in results])),
            float(np.mean([r[1] for r in results])),
            float(np.mean([r[2] for r in results])),
            round(time.time() - started, 3),
        )
        history.append(record)
        if log_every and epoch % log_every == 0:
            util.log(f"epoch {epoch}/{config.epochs} nco_loss={record.mean_loss:.5f}")
    return weights, history


def write_pretrain_history(history, path):
    rows = (
        (r.epoch, repr(r.mean_loss), repr(r.mean_obj), repr(r.mean_constr), r.wall_time)
        for r in history
    )
    return util.write_csv(path, ["epoch", "mean_loss", "mean_obj", "mean_constr", "wall_time"], rows)


def greedy_decode(problem, graph, x):
    """Project a relaxed selection vector onto a feasible bitstring"""
    problem = ProblemClass.from_name(problem)
    x = np.asarray(x, dtype=float)
    if x.shape != (graph.n,):
        raise ValueError(f"Relaxed solution has shape {x.shape}, expected ({graph.n},)")
    adj = graph.adjacency().astype(bool)
    descending = np.argsort(-x, kind="stable")
    bits = np.zeros(graph.n, dtype=np.uint8)

    if problem is ProblemClass.MAXCUT:
        bits = (x >= 0.5).astype(np.uint8)
        for v in descending:
            same = int(np.sum(adj[v] & (bits == bits[v])))
            other = int(np.sum(adj[v] & (bits != bits[v])))
            if same > other:
                bits[v] = 1 - bits[v]
    elif problem is ProblemClass.MIS:
        for v in descending:
            if not np.any(adj[v] & (bits == 1)):
                bits[v] = 1
    elif problem is ProblemClass.MAXCLIQUE:
        for v in descending:
            selected = bits == 1
            if np.all(adj[v][selected]):
                bits[v] = 1
    else:
        bits[:] = 1
        for v in np.argsort(x, kind="stable"):
            if np.all(bits[adj[v]] == 1):
                bits[v] = 0
    return bits


def wl_embed(graph, dim=WL_DIM, iterations=WL_ITERATIONS):
    """Hashed histogram of WL subtree colors, ℓ2-normalized.

    Colors from the initial degree labelling and every refinement round are
    hashed into ``dim`` buckets.
    """
    nx_graph = graph.to_networkx()
    colors = [str(d) for _, d in sorted(nx_graph.degree())]
    if nx_graph.number_of_edges():
        hashes = nx.weisfeiler_lehman_subgraph_hashes(nx_graph, iterations=iterations)
        for node in sorted(hashes):
            colors.extend(hashes[node])
    vector = np.zeros(dim)
    for color in colors:
        bucket = int(blake2b(color.encode("ascii"), digest_size=8).hexdigest(), 16) % dim
        vector[bucket] += 1.0
    return vector / np.linalg.norm(vector)


class EmbeddingProvider:
    """Resolve the conditioning vector of a (graph, class) pair for a backend"""

    def __init__(self, backend, weights=None):
        if backend not in BACKENDS:
            raise ValueError(f"Unknown embedding backend {backend!r}, expected one of {BACKENDS}")
        if backend == "unihetco" and weights is None:
            raise ValueError("The unihetco backend needs pre-trained GNN weights")
        self.backend = backend
        self.weights = weights

    @property
    def dim(self):
        return EMBED_DIMS[self.backend]

    def __call__(self, graph, problem):
        if self.backend == "none":
            return None
        if self.backend == "wl":
            return wl_embed(graph)
        return extract_embedding(self.weights, encode(problem, graph))


def export_embeddings(graphs, classes, weights, out_path, threads=1):
    """Write one CSV row (instance id, class, g_1..g_d) per graph and class"""
    pairs = [(ProblemClass.from_name(problem), graph) for problem in classes for graph in graphs]

    def row(pair):
        problem, graph = pair
        g = extract_embedding(weights, encode(problem, graph))
        return [graph.id, problem.value] + [repr(float(v)) for v in g]

    header = ["instance_id", "class"] + [f"g_{i + 1}" for i in range(FUSED_DIM)]
    return util.write_csv(out_path, header, util.map_ordered(row, pairs, threads))


def save_gnn(weights, directory, global_step=0, config=None):
    return neural.save_checkpoint(weights, Path(directory) / GNN_CHECKPOINT, global_step, config)


def load_gnn(directory):
    path = Path(directory) / GNN_CHECKPOINT
    if not path.exists():
        raise CheckpointNotFound(f"No pre-trained GNN checkpoint (expected {path})")
    weights, _ = neural.load_checkpoint(path)
    return weights
