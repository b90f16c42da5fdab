"""Closed-form sampling overheads (γ-factors) for cutting two-qubit gates."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gates import TOFFOLI, toffoli_circuit_a, toffoli_circuit_b
from .kak import batch_abs_coefficients, kak_decompose
from .linalg import choi_vector, is_unitary, permute_qubits, schmidt_coefficients

NORM_TOL = 1e-9


@dataclass(frozen=True)
class GammaReport:
    gamma: float
    delta: float  # sum_{k != k'} |u_k||u_k'|
    s1: float  # sum_k |u_k|


def _check_normalized(u) -> np.ndarray:
    a = np.abs(np.asarray(u, dtype=complex)).reshape(-1)
    if abs(np.sum(a**2) - 1) > NORM_TOL:
        raise ValueError(f"coefficients are not normalized: sum |u|^2 = {np.sum(a**2)}")
    return a


def gamma_single(u) -> GammaReport:
    a = _check_normalized(u)
    s1 = float(a.sum())
    delta = s1**2 - float(np.sum(a**2))
    return GammaReport(gamma=2 * s1**2 - 1, delta=delta, s1=s1)


def gamma_parallel(us: Sequence) -> GammaReport:
    """Joint overhead of cutting several two-qubit gates in the same time slice."""
    if len(us) == 0:
        raise ValueError("gamma_parallel needs at least one coefficient vector")
    s1 = 1.0
    for u in us:
        s1 *= float(_check_normalized(u).sum())
    # sum over multi-indices of |u_k|^2 is 1, so delta = s1^2 - 1
    return GammaReport(gamma=2 * s1**2 - 1, delta=s1**2 - 1, s1=s1)


def gamma_mixed_powers(u, v, w, n: int, m: int, p: int) -> float:
    su = _check_normalized(u).sum()
    sv = _check_normalized(v).sum()
    sw = _check_normalized(w).sum()
    return float(2 * su ** (2 * n) * sv ** (2 * m) * sw ** (2 * p) - 1)


def gamma_regularized(u) -> float:
    """Per-gate overhead in the limit of many parallel copies: (sum |u_k|)^2."""
    return float(_check_normalized(u).sum() ** 2)


def pure_state_gamma(schmidt) -> float:
    a = np.asarray(schmidt, dtype=float)
    if np.any(a < -1e-12) or abs(np.sum(a**2) - 1) > NORM_TOL:
        raise ValueError("invalid Schmidt vector")
    return float(2 * np.sum(np.clip(a, 0, None)) ** 2 - 1)


def choi_schmidt(u: np.ndarray, n_a: int) -> np.ndarray:
    """Schmidt coefficients of the Choi state of ``u`` across (A'A):(B'B).

    ``u`` acts on n qubits, the first ``n_a`` of which form side A.
    """
    n = int(round(np.log2(u.shape[0])))
    psi = choi_vector(u)  # factors: ref_0..ref_{n-1}, out_0..out_{n-1}
    order = list(range(n_a)) + [n + i for i in range(n_a)]
    order += list(range(n_a, n)) + [n + i for i in range(n_a, n)]
    psi = permute_qubits(psi, order)
    return schmidt_coefficients(psi, 4**n_a, 4 ** (n - n_a))


def choi_lower_bound(u4: np.ndarray) -> float:
    u4 = np.asarray(u4, dtype=complex)
    if u4.shape != (4, 4) or not is_unitary(u4):
        raise ValueError("choi_lower_bound expects a 4x4 unitary")
    return pure_state_gamma(choi_schmidt(u4, 1))


def gamma_of_unitary(u4: np.ndarray) -> float:
    return gamma_single(kak_decompose(u4).u).gamma


def _postselected(v: np.ndarray) -> np.ndarray:
    """Action of a 4-qubit circuit on q0..q2 with ancilla q3 in |0> in and out."""
    t = v.reshape([2] * 8)
    return t[:, :, :, 0, :, :, :, 0].reshape(8, 8)


def verify_toffoli_identities(tol: float = 1e-9) -> tuple[float, float]:
    """Check both ancilla circuits reproduce Toffoli; returns their errors."""
    errs = []
    for circ in (toffoli_circuit_a(), toffoli_circuit_b()):
        v = circ
        if not is_unitary(v):
            raise RuntimeError("Toffoli identity circuit is not unitary")
        err = float(np.linalg.norm(_postselected(v) - TOFFOLI))
        if err > tol:
            raise RuntimeError(f"Toffoli identity circuit failed verification (error {err:.2e})")
        errs.append(err)
    return errs[0], errs[1]


def toffoli_state_gamma() -> float:
    """γ of (Toffoli ⊗ 1)(|+>|1> ⊗ |0>|0>) across the 2:2 split."""
    plus = np.array([1, 1]) / np.sqrt(2)
    one = np.array([0, 1])
    zero = np.array([1, 0])
    # wires: A = (q0, q1), B = (q2, q3); Toffoli targets q2
    psi = np.kron(np.kron(plus, one), np.kron(zero, zero)).astype(complex)
    psi = np.kron(TOFFOLI, np.eye(2)) @ psi
    return pure_state_gamma(schmidt_coefficients(psi, 4, 4))


def toffoli_choi_gamma() -> float:
    """γ of the Toffoli Choi state across control | (control, target)."""
    return pure_state_gamma(choi_schmidt(TOFFOLI, 1))


def toffoli_bounds() -> tuple[float, float]:
    verify_toffoli_identities()
    from .gates import CNOT, CZ

    # each identity circuit has exactly one crossing gate
    upper = max(gamma_of_unitary(CZ), gamma_of_unitary(CNOT))
    lower = toffoli_state_gamma()
    if abs(lower - 3) > 1e-9:
        raise RuntimeError(f"Toffoli state bound evaluated to {lower}")
    return lower, upper


@dataclass
class HaarSurvey:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    stderr: float
    samples: int
    min_gamma: float
    max_gamma: float

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.samples

    def scaling_table(self, n_max: int = 10) -> list[tuple[int, float, float]]:
        """(n, single-cut overhead mean^n, joint-cut overhead 2((mean+1)/2)^n - 1)."""
        x = (self.mean + 1) / 2
        return [(n, self.mean**n, 2 * x**n - 1) for n in range(1, n_max + 1)]


CHUNK = 50_000


def _survey_chunk(seed, index: int, size: int, edges: np.ndarray):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    from .linalg import haar_random_unitaries

    us = haar_random_unitaries(4, size, rng)
    s1 = batch_abs_coefficients(us).sum(axis=1)
    g = 2 * s1**2 - 1
    counts, _ = np.histogram(g, bins=edges)
    return counts, float(g.sum()), float(np.sum(g**2)), float(g.min()), float(g.max())


def haar_survey(samples: int, seed: int = 0, bins: int = 200, workers: int = 1) -> HaarSurvey:
    """Histogram of γ over Haar-random two-qubit gates.

    Randomness is drawn per fixed-size chunk from (seed, chunk index), so the
    result does not depend on ``workers``.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    edges = np.linspace(1.0, 7.0, bins + 1)
    sizes = [min(CHUNK, samples - s) for s in range(0, samples, CHUNK)]
    jobs = list(enumerate(sizes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda j: _survey_chunk(seed, j[0], j[1], edges), jobs))
    else:
        parts = [_survey_chunk(seed, i, s, edges) for i, s in jobs]
    counts = np.sum([p[0] for p in parts], axis=0)
    total = math.fsum(p[1] for p in parts)
    total_sq = math.fsum(p[2] for p in parts)
    mean = total / samples
    var = (total_sq - samples * mean**2) / max(samples - 1, 1)
    return HaarSurvey(
        edges=edges,
        counts=counts,
        mean=mean,
        stderr=math.sqrt(max(var, 0.0) / samples),
        samples=samples,
        min_gamma=min(p[3] for p in parts),
        max_gamma=max(p[4] for p in parts),
    )


def shots_required(gamma: float, epsilon: float, delta: float) -> int:
    """Shot count ceil(2 γ² ε⁻² ln(1/(2δ))).

    Assumes each shot's outcome lies in [-γ, γ], i.e. the observable's
    spectrum is inside [-1, 1].
    """
    if gamma < 1 or epsilon <= 0 or not 0 < delta < 0.5:
        raise ValueError("need gamma >= 1, epsilon > 0 and 0 < delta < 1/2")
    return int(math.ceil(2 * gamma**2 * math.log(1 / (2 * delta)) / epsilon**2))
