import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcut.linalg import (
    PAULIS,
    X,
    Z,
    choi_of_channel,
    haar_random_unitaries,
    haar_random_unitary,
    is_density_operator,
    is_unitary,
    kron,
    max_entangled,
    num_qubits,
    partial_trace,
    permute_operator,
    random_density_matrix,
    random_kraus,
    random_observable,
    schmidt_coefficients,
    unitary_choi,
)


def test_partial_trace_of_product_state(rng):
    a = random_density_matrix(2, rng)
    b = random_density_matrix(4, rng)
    rho = kron(a, b)
    assert np.allclose(partial_trace(rho, [2, 4], [0]), a)
    assert np.allclose(partial_trace(rho, [2, 4], [1]), b)
    assert np.isclose(partial_trace(rho, [2, 4], []).item(), 1)


def test_partial_trace_matches_explicit_sum(rng):
    rho = random_density_matrix(8, rng)
    t = rho.reshape(2, 4, 2, 4)
    explicit = sum(t[i, :, i, :] for i in range(2))
    assert np.allclose(partial_trace(rho, [2, 4], [1]), explicit)


def test_partial_trace_rejects_bad_dims():
    with pytest.raises(ValueError):
        partial_trace(np.eye(4), [2, 3], [0])
    with pytest.raises(ValueError):
        partial_trace(np.eye(4), [2, 2], [5])


def test_choi_conventions(rng):
    u = haar_random_unitary(4, rng)
    j = unitary_choi(u)
    assert np.isclose(np.trace(j), 1)
    # reduced state on the reference is maximally mixed
    assert np.allclose(partial_trace(j, [4, 4], [0]), np.eye(4) / 4)
    v = kron(np.eye(4), u) @ max_entangled(4)
    assert np.allclose(j, np.outer(v, v.conj()))


def test_signed_choi_subtracts(rng):
    k = haar_random_unitary(2, rng)
    assert np.allclose(choi_of_channel([k], [k]), 0)


def test_permute_operator_inverts():
    op = kron(X, Z, np.eye(2))
    assert np.allclose(permute_operator(op, [2, 0, 1]), kron(np.eye(2), X, Z))


def test_haar_second_moment():
    # E |U_00|^2 = 1/d and E |U_00|^4 = 2/(d(d+1)) for Haar unitaries
    us = haar_random_unitaries(4, 40000, np.random.default_rng(1))
    a = np.abs(us[:, 0, 0]) ** 2
    se = a.std() / np.sqrt(a.size)
    assert abs(a.mean() - 0.25) < 4 * se
    assert abs(np.mean(a**2) - 0.1) < 4 * (a**2).std() / np.sqrt(a.size)
    assert all(is_unitary(u) for u in us[:50])


def test_random_kraus_is_cptp(rng):
    ks = random_kraus(4, 3, rng)
    assert np.allclose(sum(k.conj().T @ k for k in ks), np.eye(4))


def test_random_observable_spectrum(rng):
    ev = np.linalg.eigvalsh(random_observable(4, rng))
    assert ev.min() >= -1 and ev.max() <= 1


def test_schmidt_rejects_unnormalized():
    with pytest.raises(ValueError):
        schmidt_coefficients(np.ones(4), 2, 2)


def test_num_qubits():
    assert num_qubits(16) == 4
    with pytest.raises(ValueError):
        num_qubits(6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_random_density_is_valid(seed, rank):
    rho = random_density_matrix(4, np.random.default_rng(seed), rank)
    assert is_density_operator(rho, 1e-9)
    assert np.linalg.matrix_rank(rho, tol=1e-9) == rank


def test_paulis_are_unitary_and_hermitian():
    for p in PAULIS:
        assert is_unitary(p)
        assert np.allclose(p, p.conj().T)
