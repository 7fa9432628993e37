# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
import numpy as np
import pytest
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from qaoa_metaopt import hamiltonians
from qaoa_metaopt import simulator
from qaoa_metaopt.simulator import ParameterVector
from qaoa_metaopt.simulator import StateVector
from qaoa_metaopt.tests import util as testutil


def dense_mixer(n):
    """Σ X_i as a dense matrix"""
    dim = 2**n
    out = np.zeros((dim, dim))
    for index in range(dim):
        for i in range(n):
            out[index ^ (1 << i), index] += 1.0
    return out


def dense_qaoa_state(hamiltonian, theta):
    """Reference state from dense eigendecompositions"""
    n = hamiltonian.n
    values, vectors = np.linalg.eigh(dense_mixer(n))
    psi = np.full(2**n, 2 ** (-n / 2), dtype=complex)
    for gamma, beta in zip(theta.gamma, theta.beta):
        psi = np.exp(-1j * gamma * hamiltonian.diagonal) * psi
        unitary = vectors @ np.diag(np.exp(-1j * beta * values)) @ vectors.conj().T
        psi = unitary @ psi
    return psi


def finite_difference(hamiltonian, theta, h=1e-5):
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        step = np.zeros_like(theta)
        step[k] = h
        up = simulator.expectation(simulator.run_qaoa(hamiltonian, theta + step), hamiltonian)
        down = simulator.expectation(simulator.run_qaoa(hamiltonian, theta - step), hamiltonian)
        grad[k] = (up - down) / (2 * h)
    return grad


def test_plus_state():
    np.testing.assert_allclose(simulator.prepare_plus_state(1).amplitudes, [2**-0.5] * 2)
    np.testing.assert_allclose(simulator.prepare_plus_state(2).amplitudes, [0.5] * 4)
    assert simulator.prepare_plus_state(12).norm() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        simulator.prepare_plus_state(0)
    with pytest.raises(ValueError):
        simulator.prepare_plus_state(21)


def test_parameter_vector():
    theta = ParameterVector.from_flat([0.1, 0.2, 0.3, 0.4])
    assert theta.p == 2
    np.testing.assert_array_equal(theta.gamma, [0.1, 0.2])
    np.testing.assert_array_equal(theta.flat, [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ValueError, match="even length"):
        ParameterVector.from_flat([0.1, 0.2, 0.3])
    with pytest.raises(ValueError, match="finite"):
        ParameterVector([np.nan], [0.0])


def test_zero_angles_are_identity():
    hamiltonian = hamiltonians.build_cost_hamiltonian("mis", testutil.path_graph(4))
    state = simulator.run_qaoa(hamiltonian, ParameterVector.zeros(3))
    np.testing.assert_array_equal(state.amplitudes, simulator.prepare_plus_state(4).amplitudes)


def test_mixer_keeps_plus_state_energy():
    hamiltonian = hamiltonians.build_cost_hamiltonian("maxcut", testutil.triangle())
    state = simulator.run_qaoa(hamiltonian, ParameterVector([0.0], [np.pi / 2]))
    assert simulator.expectation(state, hamiltonian) == pytest.approx(-1.5, abs=1e-12)


def test_matches_dense_oracle():
    hamiltonian = hamiltonians.build_cost_hamiltonian("maxcut", testutil.triangle())
    theta = ParameterVector([0.4], [0.3])
    state = simulator.run_qaoa(hamiltonian, theta)
    reference = dense_qaoa_state(hamiltonian, theta)
    energy = simulator.expectation(state, hamiltonian)
    assert energy == pytest.approx(float(np.abs(reference) ** 2 @ hamiltonian.diagonal), abs=1e-9)
    np.testing.assert_allclose(state.amplitudes, reference, atol=1e-10)


def test_expectation_examples():
    k3 = hamiltonians.build_cost_hamiltonian("maxcut", testutil.triangle())
    assert simulator.expectation(simulator.prepare_plus_state(3), k3) == pytest.approx(-1.5)

    mis = hamiltonians.build_cost_hamiltonian("mis", testutil.single_edge())
    # x_0 = 0, x_1 = 1
    assert simulator.expectation(StateVector.basis(2, 2), mis) == -3.0

    with pytest.raises(ValueError):
        simulator.expectation(simulator.prepare_plus_state(3), mis)


def test_zero_angles_have_no_beta_gradient():
    hamiltonian = hamiltonians.build_cost_hamiltonian("mvc", testutil.star_graph(4))
    _, grad = simulator.energy_and_gradient(hamiltonian, np.zeros(6))
    np.testing.assert_allclose(grad[3:], 0.0, atol=1e-12)


@pytest.mark.parametrize(
    "problem,graph,p",
    [
        ("maxcut", testutil.triangle(), 2),
        ("mis", testutil.random_graph(6, 17), 4),
    ],
)
def test_gradient_examples(problem, graph, p, rng):
    hamiltonian = hamiltonians.build_cost_hamiltonian(problem, graph)
    theta = rng.uniform(-1, 1, size=2 * p)
    energy, grad = simulator.energy_and_gradient(hamiltonian, theta)
    assert energy == pytest.approx(
        simulator.expectation(simulator.run_qaoa(hamiltonian, theta), hamiltonian), abs=1e-12
    )
    np.testing.assert_allclose(grad, finite_difference(hamiltonian, theta), rtol=1e-6, atol=1e-6)


def test_gradient_suite(rng):
    for index in range(20):
        problem = testutil.ALL_CLASSES[index % 4]
        graph = testutil.random_graph(int(rng.integers(3, 7)), 100 + index)
        p = int(rng.integers(1, 5))
        hamiltonian = hamiltonians.build_cost_hamiltonian(problem, graph)
        # Scale angles so finite differences of the large MIS/MVC phases stay accurate
        theta = rng.uniform(-0.5, 0.5, size=2 * p)
        _, grad = simulator.energy_and_gradient(hamiltonian, theta)
        np.testing.assert_allclose(grad, finite_difference(hamiltonian, theta), rtol=1e-6, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(
    p=st.integers(min_value=1, max_value=10),
    seed=st.integers(min_value=0, max_value=2**16),
    problem=st.sampled_from(testutil.ALL_CLASSES),
)
def test_norm_is_preserved(p, seed, problem):
    rng = np.random.default_rng(seed)
    graph = testutil.random_graph(int(rng.integers(2, 7)), seed)
    hamiltonian = hamiltonians.build_cost_hamiltonian(problem, graph)
    state = simulator.run_qaoa(hamiltonian, rng.uniform(-np.pi, np.pi, size=2 * p))
    assert state.norm() == pytest.approx(1.0, abs=1e-10)
    probs = simulator.exact_probabilities(state)
    assert probs.sum() == pytest.approx(1.0, abs=1e-10)
    energy = simulator.expectation(state, hamiltonian)
    assert hamiltonian.diagonal.min() - 1e-9 <= energy <= hamiltonian.diagonal.max() + 1e-9


@pytest.mark.parametrize("problem", testutil.ALL_CLASSES)
def test_periodicity(problem, rng):
    hamiltonian = hamiltonians.build_cost_hamiltonian(problem, testutil.cycle_graph(4))
    theta = rng.uniform(-1, 1, size=4)
    energy = simulator.expectation(simulator.run_qaoa(hamiltonian, theta), hamiltonian)

    shifted = theta.copy()
    shifted[:2] += 2 * np.pi
    assert simulator.expectation(
        simulator.run_qaoa(hamiltonian, shifted), hamiltonian
    ) == pytest.approx(energy, abs=1e-9)

    shifted = theta.copy()
    shifted[2:] += np.pi
    assert simulator.expectation(
        simulator.run_qaoa(hamiltonian, shifted), hamiltonian
    ) == pytest.approx(energy, abs=1e-9)


def test_sample_basis_state(rng):
    samples = simulator.sample(StateVector.basis(2, 1), 5000, rng)
    assert samples.counts == {"10": 5000}
    assert samples.shots == 5000
    np.testing.assert_array_equal(samples.index_counts(2), [0, 5000, 0, 0])


def test_sample_plus_state_within_three_sigma(rng):
    samples = simulator.sample(simulator.prepare_plus_state(2), 5000, rng)
    assert sum(samples.counts.values()) == 5000
    sigma = np.sqrt(5000 * 0.25 * 0.75)
    for key in ("00", "01", "10", "11"):
        assert abs(samples.counts.get(key, 0) - 1250) <= 3 * sigma
    np.testing.assert_allclose(simulator.exact_probabilities(simulator.prepare_plus_state(3)), 1 / 8)


def test_sample_is_deterministic():
    state = simulator.prepare_plus_state(3)
    a = simulator.sample(state, 100, np.random.default_rng(9))
    b = simulator.sample(state, 100, np.random.default_rng(9))
    assert a == b
    with pytest.raises(ValueError):
        simulator.sample(state, 0, np.random.default_rng(9))


def test_normalized_energy_is_bounded(rng):
    for index in range(1000):
        problem = testutil.ALL_CLASSES[index % 4]
        graph = testutil.random_graph(int(rng.integers(2, 7)), 5000 + index)
        hamiltonian = hamiltonians.build_cost_hamiltonian(problem, graph)
        p = int(rng.integers(1, 4))
        energy = simulator.expectation(
            simulator.run_qaoa(hamiltonian, rng.uniform(-np.pi, np.pi, size=2 * p)), hamiltonian
        )
        assert abs(hamiltonians.normalized_energy(energy, hamiltonian)) <= 1.0
