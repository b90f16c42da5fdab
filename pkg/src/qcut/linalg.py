"""Dense linear algebra and quantum-information primitives.

Everything here works on plain ``numpy`` complex arrays.  Dimensions stay
below 2**8 so nothing is sparse.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

UNITARY_TOL = 1e-10
CHANNEL_TOL = 1e-8
EIG_CLIP = -1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULIS = (I2, X, Y, Z)
PAULI_LABELS = "IXYZ"


def kron(*mats: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of matrices (left to right)."""
    if not mats:
        return np.eye(1, dtype=complex)
    return reduce(np.kron, mats)


def pauli_string(indices: Sequence[int]) -> np.ndarray:
    return kron(*(PAULIS[k] for k in indices))


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def is_unitary(m: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return np.linalg.norm(dagger(m) @ m - np.eye(m.shape[0])) <= tol


def is_hermitian(m: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.linalg.norm(m - dagger(m)) <= tol


def is_density_operator(rho: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    if not is_hermitian(rho, tol):
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return np.linalg.eigvalsh((rho + dagger(rho)) / 2).min() >= -tol


def num_qubits(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Reduce ``rho`` on subsystems ``dims`` to the subsystems listed in ``keep``.

    The kept subsystems appear in increasing index order in the result.
    """
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    rho = np.asarray(rho)
    if rho.shape != (total, total):
        raise ValueError(f"operator of shape {rho.shape} does not match subsystem dims {dims}")
    keep = sorted(set(keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    traced = [i for i in range(n) if i not in keep]
    t = rho.reshape(dims + dims)
    # contract each traced subsystem's row index with its column index
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in traced:
        col[i] = row[i]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    res = np.einsum("".join(row + col) + "->" + "".join(out), t)
    d = int(np.prod([dims[i] for i in keep])) if keep else 1
    return res.reshape(d, d)


def max_entangled(d: int) -> np.ndarray:
    """Normalized maximally entangled vector (1/sqrt d) sum_i |ii>."""
    return np.eye(d, dtype=complex).reshape(d * d) / np.sqrt(d)


def choi_of_channel(
    kraus_plus: Sequence[np.ndarray], kraus_minus: Sequence[np.ndarray] = ()
) -> np.ndarray:
    """Choi operator of the signed map A+ - A-, given Kraus operators of each part.

    Normalized convention: the reference copy is the first tensor factor and
    the maximally entangled input is (1/sqrt d) sum_i |ii>, so trace-preserving
    maps have unit trace.
    """
    ops = [np.asarray(k, dtype=complex) for k in list(kraus_plus) + list(kraus_minus)]
    if not ops:
        raise ValueError("at least one Kraus operator is required")
    d_out, d_in = ops[0].shape
    if any(k.shape != (d_out, d_in) for k in ops):
        raise ValueError("Kraus operators must share dimensions")
    choi = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for n, k in enumerate(ops):
        # (id ⊗ K)|psi>, column-stacked: entry (i, o) = K[o, i] / sqrt(d_in)
        v = k.T.reshape(d_in * d_out) / np.sqrt(d_in)
        sign = 1.0 if n < len(kraus_plus) else -1.0
        choi += sign * np.outer(v, v.conj())
    return choi


def unitary_choi(u: np.ndarray) -> np.ndarray:
    return choi_of_channel([u])


def choi_vector(u: np.ndarray) -> np.ndarray:
    """Choi state (id ⊗ U)|psi> of a unitary, reference first."""
    d = u.shape[0]
    return np.asarray(u).T.reshape(d * d) / np.sqrt(d)


def schmidt_coefficients(psi: np.ndarray, dim_a: int, dim_b: int) -> np.ndarray:
    """Schmidt coefficients of a bipartite pure state, in descending order."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if psi.size != dim_a * dim_b:
        raise ValueError(f"vector of length {psi.size} does not split as {dim_a}x{dim_b}")
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("state vector is not normalized")
    return np.linalg.svd(psi.reshape(dim_a, dim_b), compute_uv=False)


def permute_qubits(psi: np.ndarray, order: Sequence[int]) -> np.ndarray:
    """Reorder the qubit factors of a state vector; new factor i is old ``order[i]``."""
    n = len(order)
    return np.asarray(psi).reshape([2] * n).transpose(order).reshape(-1)


def permute_operator(op: np.ndarray, order: Sequence[int]) -> np.ndarray:
    """Reorder the qubit factors of an operator; new factor i is old ``order[i]``."""
    n = len(order)
    axes = list(order) + [n + o for o in order]
    return np.asarray(op).reshape([2] * (2 * n)).transpose(axes).reshape(2**n, 2**n)


def haar_random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a Ginibre matrix with phase-fixed R."""
    return haar_random_unitaries(dim, 1, rng)[0]


def haar_random_unitaries(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Batch of ``count`` Haar unitaries, shape (count, dim, dim)."""
    if dim < 1:
        raise ValueError("dim must be positive")
    g = rng.standard_normal((count, dim, dim)) + 1j * rng.standard_normal((count, dim, dim))
    q, r = np.linalg.qr(g / np.sqrt(2))
    diag = np.diagonal(r, axis1=1, axis2=2)
    phases = diag / np.abs(diag)
    return q * phases[:, None, :]


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


def random_observable(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random Hermitian observable with spectrum inside [-1, 1]."""
    u = haar_random_unitary(dim, rng)
    eigs = rng.uniform(-1, 1, dim)
    return u @ np.diag(eigs) @ dagger(u)


def random_kraus(dim: int, rank: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Kraus operators of a random CPTP map (Stinespring from a Haar isometry)."""
    v = haar_random_unitary(dim * rank, rng)[:, :dim]
    return [v[k * dim : (k + 1) * dim, :] for k in range(rank)]
