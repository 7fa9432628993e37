# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Graph-conditioned LSTM meta-optimizer for QAOA angles."""
import time
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np

from qaoa_metaopt import hamiltonians
from qaoa_metaopt import neural
from qaoa_metaopt import simulator
from qaoa_metaopt import util

DEFAULT_HIDDEN = 48
DEFAULT_HORIZON = 10
OMEGA_SCALE = 10.0


class CheckpointNotFound(FileNotFoundError):
    """Raised when no trained model exists for an experiment cell"""


@dataclass(frozen=True)
class MetaConfig:
    p: int
    horizon: int = DEFAULT_HORIZON
    hidden: int = DEFAULT_HIDDEN
    embed_dim: int = 0
    problem: str = ""
    backend: str = "none"

    @property
    def input_size(self):
        return 1 + 2 * self.p


@dataclass
class MetaOptimizerModel:
    config: MetaConfig
    params: neural.ParameterStore

    def copy(self):
        return MetaOptimizerModel(self.config, self.params.copy())

    @property
    def conditioned(self):
        return self.config.embed_dim > 0


@dataclass
class Rollout:
    thetas: np.ndarray
    energies: np.ndarray
    normalized_energies: np.ndarray
    feedback: np.ndarray
    hidden: np.ndarray
    cells: np.ndarray
    tape: neural.Tape = None
    normalized_terms: list = field(default_factory=list)

    @property
    def final_normalized_energy(self):
        return float(self.normalized_energies[-1])

    def detach(self):
        """Drop the tape so the rollout keeps only plain arrays"""
        self.tape = None
        self.normalized_terms = []
        return self


@dataclass(frozen=True)
class LossWeights:
    omega: tuple

    def __post_init__(self):
        omega = tuple(float(w) for w in self.omega)
        if any(b < a for a, b in zip(omega, omega[1:])):
            raise ValueError(f"Loss weights must be nondecreasing, got {omega}")
        object.__setattr__(self, "omega", omega)

    @classmethod
    def linear(cls, horizon, scale=OMEGA_SCALE):
        """ω_t = t / scale for t = 1..horizon"""
        return cls(tuple((t + 1) / scale for t in range(horizon)))

    def __len__(self):
        return len(self.omega)


@dataclass
class TrainConfig:
    batch: int = 32
    epochs: int = 100
    lr: float = 0.001
    horizon: int = DEFAULT_HORIZON
    seed: int = 0
    threads: int = 1


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    mean_final_energy: float
    wall_time: float


@dataclass
class MetaInstance:
    """A training or evaluation item: the Hamiltonian and its (optional) embedding"""

    instance_id: str
    hamiltonian: hamiltonians.CostHamiltonian
    embedding: np.ndarray = None


def create_model(config, seed=0):
    rng = util.derive_rng(seed, config.p, config.hidden, config.embed_dim)
    params = neural.ParameterStore()
    neural.init_lstm(params, "lstm", config.input_size, config.hidden, rng)
    neural.init_linear(params, "out", config.hidden, 2 * config.p, rng, bias=False)
    if config.embed_dim:
        neural.init_linear(params, "embed", config.embed_dim, config.hidden, rng, bias=False)
    return MetaOptimizerModel(config, params)


def _energy_node(tape, theta, hamiltonian, norm):
    """Ē(θ) as a tape primitive whose gradient comes from the adjoint sweep"""
    energy, grad = simulator.energy_and_gradient(hamiltonian, theta.value)
    return neural.custom(tape, energy / norm, (theta,), lambda g: (g * grad / norm,)), energy


def rollout(model, hamiltonian, embedding=None, horizon=None, tape=None, feedback=None):
    """Unroll the meta-optimizer for ``horizon`` steps on one instance.

    The energy fed back into the next input is treated as a constant, so
    gradients reach the weights through the hidden state, the previous angles
    and each step's energy, but not through the feedback energy.
    ``feedback`` replaces the fed-back energies Ē_0..Ē_{T-1} with fixed values.
    """
    config = model.config
    horizon = config.horizon if horizon is None else horizon
    if horizon < 1:
        raise ValueError(f"Rollout horizon must be >= 1, got {horizon}")
    if embedding is not None:
        embedding = np.asarray(embedding, dtype=float)
        if not model.conditioned:
            raise ValueError("Model was built without an embedding projection")
        if embedding.shape != (config.embed_dim,):
            raise ValueError(
                f"Embedding has shape {embedding.shape}, model expects ({config.embed_dim},)"
            )
    if feedback is not None and len(feedback) != horizon:
        raise ValueError(f"Need {horizon} feedback values, got {len(feedback)}")

    tape = neural.Tape() if tape is None else tape
    weights = tape.parameters(model.params)
    norm = hamiltonians.pauli_l1_norm(hamiltonian)
    if norm <= 0:
        raise ValueError("Cannot normalize by a Hamiltonian with zero Pauli norm")

    plus = simulator.prepare_plus_state(hamiltonian.n)
    previous_energy = simulator.expectation(plus, hamiltonian) / norm
    theta = tape.constant(np.zeros(2 * config.p))
    h = tape.constant(np.zeros(config.hidden))
    s = tape.constant(np.zeros(config.hidden))
    context = None
    if embedding is not None:
        context = weights["embed.W"] @ embedding

    thetas, energies, normalized, fed, hiddens, cells, terms = [], [], [], [], [], [], []
    for step in range(horizon):
        if feedback is not None:
            previous_energy = float(feedback[step])
        fed.append(previous_energy)
        z = neural.concat([tape.constant([previous_energy]), theta])
        h, s, _ = neural.lstm_cell_forward(z, h, s, weights, "lstm")
        conditioned = h if context is None else h + context
        theta = weights["out.W"] @ conditioned
        term, energy = _energy_node(tape, theta, hamiltonian, norm)

        thetas.append(theta.value.copy())
        energies.append(energy)
        normalized.append(float(term.value))
        hiddens.append(h.value.copy())
        cells.append(s.value.copy())
        terms.append(term)
        previous_energy = float(term.value)

    return Rollout(
        thetas=np.array(thetas),
        energies=np.array(energies),
        normalized_energies=np.array(normalized),
        feedback=np.array(fed),
        hidden=np.array(hiddens),
        cells=np.array(cells),
        tape=tape,
        normalized_terms=terms,
    )


def meta_loss(rollout, weights):
    """Σ_t ω_t Ē_t as a tape scalar"""
    terms = rollout.normalized_terms
    if len(terms) != len(weights):
        raise ValueError(f"Rollout has {len(terms)} steps but {len(weights)} loss weights")
    loss = None
    for omega, term in zip(weights.omega, terms):
        weighted = neural.scale(term, omega)
        loss = weighted if loss is None else loss + weighted
    return loss


def loss_and_gradients(model, item, weights, horizon=None):
    """Single-instance meta-loss and its gradient map"""
    tape = neural.Tape()
    result = rollout(model, item.hamiltonian, item.embedding, horizon, tape=tape)
    loss = meta_loss(result, weights)
    return float(loss), tape.backward(loss), result


def evaluate(model, items, horizon=None, threads=1):
    """Roll out without training, returning the rollouts in item order"""
    return util.map_ordered(
        lambda item: rollout(model, item.hamiltonian, item.embedding, horizon).detach(),
        items,
        threads,
    )


def train(model, items, config=None, log_every=1):
    """Train a meta-optimizer with mini-batch Adam.

    Each epoch visits the items in a seeded shuffled order; a batch loss is
    the mean of per-instance meta-losses, reduced in batch order. After every
    epoch the mean final-step normalized energy over all items is recorded and
    the weights with the lowest value are returned.

    Returns
    -------
    tuple
        The best model and the list of EpochRecord
    """
    config = config or TrainConfig()
    if not items:
        raise ValueError("Cannot train on an empty dataset")
    model = model.copy()
    weights = LossWeights.linear(config.horizon)
    state = neural.AdamState()
    history = []
    best_model, best_energy = model.copy(), np.inf
    started = time.time()

    for epoch in range(1, config.epochs + 1):
        order = util.derive_rng(config.seed, epoch).permutation(len(items))
        losses = []
        for start in range(0, len(order), config.batch):
            batch = [items[i] for i in order[start : start + config.batch]]
            results = util.map_ordered(
                lambda item: loss_and_gradients(model, item, weights, config.horizon),
                batch,
                config.threads,
            )
            losses.extend(loss for loss, _, _ in results)
            grads = neural.mean_gradients([g for _, g, _ in results])
            neural.adam_step(model.params, grads, state, config.lr)

        rollouts = evaluate(model, items, config.horizon, config.threads)
        final_energy = float(np.mean([r.final_normalized_energy for r in rollouts]))
        record = EpochRecord(
            epoch, float(np.mean(losses)), final_energy, round(time.time() - started, 3)
        )
        history.append(record)
        if log_every and epoch % log_every == 0:
            util.log(
                f"epoch {epoch}/{config.epochs} loss={record.mean_loss:.5f} "
                f"energy={record.mean_final_energy:.5f}"
            )
        if final_energy < best_energy:
            best_model, best_energy = model.copy(), final_energy

    return best_model, history


def fine_tune(model, hamiltonian, embedding=None, steps=5, lr=0.001, horizon=None):
    """Adapt a copy of ``model`` to one instance with a few Adam steps"""
    adapted = model.copy()
    horizon = model.config.horizon if horizon is None else horizon
    weights = LossWeights.linear(horizon)
    item = MetaInstance("fine-tune", hamiltonian, embedding)
    state = neural.AdamState()
    for _ in range(steps):
        _, grads, _ = loss_and_gradients(adapted, item, weights, horizon)
        neural.adam_step(adapted.params, grads, state, lr)
    return adapted


def write_history(history, path):
    rows = (
        (r.epoch, repr(r.mean_loss), repr(r.mean_final_energy), r.wall_time) for r in history
    )
    return util.write_csv(path, ["epoch", "mean_loss", "mean_final_energy", "wall_time"], rows)


def checkpoint_name(problem, p, backend):
    return f"meta-{backend}-{problem}-p{p}.json"


def save_model(model, directory, global_step=0):
    config = model.config
    path = Path(directory) / checkpoint_name(config.problem, config.p, config.backend)
    return neural.save_checkpoint(model.params, path, global_step, asdict(config))


def load_model(directory, problem, p, backend):
    path = Path(directory) / checkpoint_name(problem, p, backend)
    if not path.exists():
        raise CheckpointNotFound(
            f"No meta-optimizer checkpoint for class={problem}, p={p}, backend={backend} "
            f"(expected {path})"
        )
    params, manifest = neural.load_checkpoint(path)
    return MetaOptimizerModel(MetaConfig(**manifest["config"]), params)
