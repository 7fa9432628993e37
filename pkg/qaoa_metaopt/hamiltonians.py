# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Diagonal cost Hamiltonians, their Pauli decomposition and the X mixer.

Qubit ``i`` is bit ``i`` (least significant first) of a basis-state index.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qaoa_metaopt import problems
from qaoa_metaopt import util
from qaoa_metaopt.problems import ProblemClass

MAX_QUBITS = 20
PENALTY = 3.0


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    support: frozenset

    def label(self):
        if not self.support:
            return "I"
        return "".join(f"Z{i}" for i in sorted(self.support))


@dataclass(frozen=True)
class CostHamiltonian:
    n: int
    terms: tuple
    diagonal: np.ndarray

    @property
    def l1_norm(self):
        return pauli_l1_norm(self)

    @property
    def dim(self):
        return 2**self.n


@dataclass(frozen=True)
class MixerSpec:
    """The transverse-field mixer Σ X_i on ``n`` qubits"""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Mixer needs at least one qubit, got {self.n}")

    def apply_generator(self, amplitudes):
        """Compute (Σ_i X_i)|ψ⟩"""
        out = np.zeros_like(amplitudes)
        for i in range(self.n):
            view = amplitudes.reshape(-1, 2, 2**i)
            out += view[:, ::-1, :].reshape(-1)
        return out


def z_signs(n):
    """Rows of z_i = 1 - 2 x_i for every basis state"""
    return 1 - 2 * problems.basis_bits(n).astype(np.int64)


def diagonal_from_terms(n, terms):
    """Evaluate Σ_j α_j ∏_{i∈supp_j} z_i on every basis state"""
    signs = z_signs(n)
    diagonal = np.zeros(2**n)
    for term in terms:
        if term.support:
            diagonal += term.coefficient * np.prod(signs[:, sorted(term.support)], axis=1)
        else:
            diagonal += term.coefficient
    return diagonal


class _TermCollector:
    def __init__(self):
        self.coefficients = {}

    def add(self, coefficient, *qubits):
        key = frozenset(qubits)
        self.coefficients[key] = self.coefficients.get(key, 0.0) + coefficient

    def terms(self):
        ordered = sorted(self.coefficients.items(), key=lambda kv: (len(kv[0]), sorted(kv[0])))
        return tuple(PauliTerm(coef, support) for support, coef in ordered if coef != 0)


def build_cost_hamiltonian(problem, graph):
    """Build the cost Hamiltonian of an instance.

    MaxCut is the negated cut operator ½Σ_E(Z_uZ_v − I). MIS and MaxClique
    reward selected vertices and penalize selected pairs on E(G) or E(Ḡ),
    MVC rewards small covers and penalizes uncovered edges, all with the
    fixed penalty prefactor 3.
    """
    problem = ProblemClass.from_name(problem)
    if graph.n > MAX_QUBITS:
        raise ValueError(f"Diagonal materialization is limited to n <= {MAX_QUBITS}")

    collector = _TermCollector()
    if problem is ProblemClass.MAXCUT:
        for u, v in graph.edges:
            collector.add(0.5, u, v)
            collector.add(-0.5)
    elif problem in (ProblemClass.MIS, ProblemClass.MAXCLIQUE):
        pairs = graph.edges if problem is ProblemClass.MIS else problems.complement(graph).edges
        for u, v in pairs:
            collector.add(PENALTY, u, v)
            collector.add(-PENALTY, u)
            collector.add(-PENALTY, v)
        for i in range(graph.n):
            collector.add(1.0, i)
    else:
        for u, v in graph.edges:
            collector.add(PENALTY, u, v)
            collector.add(PENALTY, u)
            collector.add(PENALTY, v)
        for i in range(graph.n):
            collector.add(-1.0, i)

    terms = collector.terms()
    diagonal = diagonal_from_terms(graph.n, terms)
    diagonal.setflags(write=False)
    return CostHamiltonian(graph.n, terms, diagonal)


def pauli_l1_norm(hamiltonian):
    """Σ_j |α_j|, identity term included"""
    return float(sum(abs(term.coefficient) for term in hamiltonian.terms))


def normalized_energy(energy, hamiltonian):
    norm = pauli_l1_norm(hamiltonian)
    if norm <= 0:
        raise ValueError("Cannot normalize by a Hamiltonian with zero Pauli norm")
    return energy / norm


def hamiltonian_objective_identity_check(problem, graph):
    """Check the affine relation between H_C and the penalized objective on all 2^n strings"""
    problem = ProblemClass.from_name(problem)
    if graph.n > 12:
        raise ValueError(f"Identity check is limited to n <= 12, got {graph.n}")
    hamiltonian = build_cost_hamiltonian(problem, graph)
    bits = problems.basis_bits(graph.n)
    ones = bits.sum(axis=1)
    violations = problems.violation_counts(problem, graph, bits)
    step = 4 * PENALTY
    if problem is ProblemClass.MAXCUT:
        expected = -problems.objective_values(problem, graph, bits).astype(float)
    elif problem in (ProblemClass.MIS, ProblemClass.MAXCLIQUE):
        pairs = graph.num_edges if problem is ProblemClass.MIS else complement_size(graph)
        expected = graph.n - PENALTY * pairs - 2.0 * ones + step * violations
    else:
        expected = -graph.n - PENALTY * graph.num_edges + 2.0 * ones + step * violations
    return bool(np.array_equal(hamiltonian.diagonal, expected))


def complement_size(graph):
    return graph.n * (graph.n - 1) // 2 - graph.num_edges


def write_diagonal_csv(hamiltonian, path):
    """Dump (bitstring, H_C(x)) rows for oracle cross-checks"""
    bits = problems.basis_bits(hamiltonian.n)
    rows = (
        (problems.bits_to_str(bits[i]), repr(float(hamiltonian.diagonal[i])))
        for i in range(hamiltonian.dim)
    )
    return util.write_csv(Path(path), ["bitstring", "energy"], rows)
