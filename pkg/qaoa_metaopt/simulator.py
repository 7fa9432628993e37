# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Exact statevector simulation of depth-p QAOA.

The cost layer is an elementwise phase over the stored diagonal and the
mixer exp(-iβX) is applied qubit by qubit. Gradients use a single adjoint
sweep back through the layers.
"""
from dataclasses import dataclass

import numpy as np

from qaoa_metaopt import problems
from qaoa_metaopt.hamiltonians import MixerSpec

MAX_QUBITS = 20


@dataclass
class StateVector:
    n: int
    amplitudes: np.ndarray

    @classmethod
    def basis(cls, n, index):
        amplitudes = np.zeros(2**n, dtype=np.complex128)
        amplitudes[index] = 1.0
        return cls(n, amplitudes)

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class ParameterVector:
    """QAOA angles θ = (γ_1..γ_p, β_1..β_p)"""

    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if gamma.shape != beta.shape:
            raise ValueError(f"gamma has {gamma.size} angles but beta has {beta.size}")
        if gamma.size < 1:
            raise ValueError("QAOA depth must be at least 1")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(beta))):
            raise ValueError("QAOA angles must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @property
    def p(self):
        return self.gamma.size

    @property
    def flat(self):
        return np.concatenate([self.gamma, self.beta])

    @classmethod
    def from_flat(cls, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size % 2:
            raise ValueError(f"Flat parameter vector must have even length, got {theta.size}")
        p = theta.size // 2
        return cls(theta[:p], theta[p:])

    @classmethod
    def zeros(cls, p):
        return cls(np.zeros(p), np.zeros(p))


@dataclass
class SampleSet:
    counts: dict
    shots: int

    def index_counts(self, n):
        """Counts as a length-2^n array over basis indices"""
        out = np.zeros(2**n, dtype=np.int64)
        for text, count in self.counts.items():
            out[problems.bits_to_index(problems.str_to_bits(text))] += count
        return out


def prepare_plus_state(n):
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"Qubit count must be in [1, {MAX_QUBITS}], got {n}")
    dim = 2**n
    return StateVector(n, np.full(dim, dim**-0.5, dtype=np.complex128))


def _as_parameters(theta):
    if isinstance(theta, ParameterVector):
        return theta
    return ParameterVector.from_flat(theta)


def apply_cost(amplitudes, diagonal, gamma):
    return amplitudes * np.exp(-1j * gamma * diagonal)


def apply_mixer(amplitudes, n, beta):
    """Apply exp(-iβX) to every qubit"""
    c, s = np.cos(beta), -1j * np.sin(beta)
    out = amplitudes.copy()
    for i in range(n):
        view = out.reshape(-1, 2, 2**i)
        a0 = view[:, 0, :].copy()
        a1 = view[:, 1, :]
        view[:, 0, :] = c * a0 + s * a1
        view[:, 1, :] = s * a0 + c * a1
    return out


def _check_dims(hamiltonian, state=None):
    if hamiltonian.diagonal.shape != (2**hamiltonian.n,):
        raise ValueError("Hamiltonian diagonal does not match its qubit count")
    if state is not None and state.amplitudes.shape != hamiltonian.diagonal.shape:
        raise ValueError(
            f"State has {state.amplitudes.size} amplitudes, Hamiltonian has {hamiltonian.dim}"
        )


def run_qaoa(hamiltonian, theta):
    """Prepare |ψ(θ)⟩ = ∏_ℓ U_B(β_ℓ) U_C(γ_ℓ) |+⟩^⊗n"""
    _check_dims(hamiltonian)
    theta = _as_parameters(theta)
    state = prepare_plus_state(hamiltonian.n)
    amplitudes = state.amplitudes
    for gamma, beta in zip(theta.gamma, theta.beta):
        amplitudes = apply_cost(amplitudes, hamiltonian.diagonal, gamma)
        amplitudes = apply_mixer(amplitudes, hamiltonian.n, beta)
    return StateVector(hamiltonian.n, amplitudes)


def exact_probabilities(state):
    return np.abs(state.amplitudes) ** 2


def expectation(state, hamiltonian):
    _check_dims(hamiltonian, state)
    return float(np.dot(exact_probabilities(state), hamiltonian.diagonal))


def energy_and_gradient(hamiltonian, theta):
    """Energy and its gradient w.r.t. the flat angles (γ_1..γ_p, β_1..β_p).

    One forward pass, then the co-state λ = H_C|ψ⟩ and the state are walked
    back through the inverse layers; each generator G contributes
    ∂E/∂θ = 2 Im⟨λ|G|φ⟩ at its position.
    """
    _check_dims(hamiltonian)
    theta = _as_parameters(theta)
    n, p = hamiltonian.n, theta.p
    diagonal = hamiltonian.diagonal
    mixer = MixerSpec(n)

    phi = run_qaoa(hamiltonian, theta).amplitudes
    energy = float(np.dot(np.abs(phi) ** 2, diagonal))
    lam = diagonal * phi

    grad_gamma = np.zeros(p)
    grad_beta = np.zeros(p)
    for layer in reversed(range(p)):
        beta, gamma = theta.beta[layer], theta.gamma[layer]
        grad_beta[layer] = 2.0 * np.vdot(lam, mixer.apply_generator(phi)).imag
        phi = apply_mixer(phi, n, -beta)
        lam = apply_mixer(lam, n, -beta)

        grad_gamma[layer] = 2.0 * np.vdot(lam, diagonal * phi).imag
        phi = apply_cost(phi, diagonal, -gamma)
        lam = apply_cost(lam, diagonal, -gamma)

    return energy, np.concatenate([grad_gamma, grad_beta])


def sample(state, shots, rng):
    """Draw ``shots`` measurements in the computational basis"""
    if shots < 1:
        raise ValueError(f"Need at least one shot, got {shots}")
    probs = exact_probabilities(state)
    probs = probs / probs.sum()
    draws = rng.multinomial(shots, probs)
    counts = {}
    for index in np.flatnonzero(draws):
        counts[problems.bits_to_str(problems.index_to_bits(int(index), state.n))] = int(draws[index])
    return SampleSet(counts, int(shots))
