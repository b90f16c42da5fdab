"""Canonical (KAK) decomposition of two-qubit unitaries.

    U = exp(i * global_phase) (v1 ⊗ v2) (sum_k u_k σ_k ⊗ σ_k) (v3 ⊗ v4)

with ``u`` the coefficients of exp(i sum_k θ_k σ_k ⊗ σ_k) and the angles in
the Weyl chamber |θ3| <= θ2 <= θ1 <= π/4.  The decomposition works in the
magic basis, where SU(2) ⊗ SU(2) becomes SO(4) and the interaction part is
diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import PAULIS, X, H, dagger, is_unitary, kron

# columns are the magic basis vectors
MAGIC = np.array(
    [[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]], dtype=complex
) / np.sqrt(2)
MAGIC_DAG = dagger(MAGIC)

# MAGIC_SIGNS[k, j]: eigenvalue of σ_k ⊗ σ_k on magic basis vector j
MAGIC_SIGNS = np.real(
    np.array([np.diag(MAGIC_DAG @ kron(p, p) @ MAGIC) for p in PAULIS])
).round().astype(int)

_GROUP_TOL = 1e-9
_S = np.diag([1, 1j]).astype(complex)
_RX90 = (np.eye(2) - 1j * X) / np.sqrt(2)
# g with (g ⊗ g) swapping two of XX, YY, ZZ
_SWAPPERS = {(0, 1): _S, (1, 2): _RX90, (0, 2): H}


class KAKError(RuntimeError):
    """Raised when the decomposition fails its own consistency checks."""


@dataclass
class KAK:
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    v4: np.ndarray
    thetas: np.ndarray
    global_phase: float = 0.0
    u: np.ndarray = field(init=False)

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.u = interaction_coefficients(self.thetas)

    @property
    def abs_u(self) -> np.ndarray:
        return np.abs(self.u)

    def interaction(self) -> np.ndarray:
        return sum(c * kron(p, p) for c, p in zip(self.u, PAULIS))

    @classmethod
    def identity(cls) -> "KAK":
        e = np.eye(2, dtype=complex)
        return cls(e, e.copy(), e.copy(), e.copy(), np.zeros(3), 0.0)


def interaction_coefficients(thetas) -> np.ndarray:
    """Coefficients of exp(i sum_k θ_k σ_k⊗σ_k) in the basis {σ_k ⊗ σ_k}."""
    t1, t2, t3 = thetas
    c1, c2, c3 = np.cos([t1, t2, t3])
    s1, s2, s3 = np.sin([t1, t2, t3])
    return np.array(
        [
            c1 * c2 * c3 + 1j * s1 * s2 * s3,
            c1 * s2 * s3 + 1j * s1 * c2 * c3,
            s1 * c2 * s3 + 1j * c1 * s2 * c3,
            s1 * s2 * c3 + 1j * c1 * c2 * s3,
        ]
    )


def interaction_unitary(thetas) -> np.ndarray:
    u = interaction_coefficients(thetas)
    return sum(c * kron(p, p) for c, p in zip(u, PAULIS))


def kak_reconstruct(k: KAK) -> np.ndarray:
    return np.exp(1j * k.global_phase) * kron(k.v1, k.v2) @ k.interaction() @ kron(k.v3, k.v4)


def _simultaneous_orthogonal_eig(m: np.ndarray) -> np.ndarray:
    """Real orthogonal P (det +1) diagonalizing the complex symmetric normal matrix m.

    Diagonalizes Re(m) first, then Im(m) inside each degenerate eigenspace.
    """
    re, im = m.real, m.imag
    re = (re + re.T) / 2
    im = (im + im.T) / 2
    w, p = np.linalg.eigh(re)
    blocks = []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i] - w[i - 1] > _GROUP_TOL:
            blocks.append((start, i))
            start = i
    for a, b in blocks:
        if b - a > 1:
            sub = p[:, a:b]
            _, q = np.linalg.eigh(sub.T @ im @ sub)
            p[:, a:b] = sub @ q
    # deterministic column signs: largest-magnitude entry positive
    for j in range(p.shape[1]):
        i = np.argmax(np.abs(p[:, j]) > np.abs(p[:, j]).max() - 1e-12)
        if p[i, j] < 0:
            p[:, j] = -p[:, j]
    if np.linalg.det(p) < 0:
        p[:, -1] = -p[:, -1]
    return p


def _split_local(k4: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Factor k4 = exp(i phase) a ⊗ b with a, b in SU(2)."""
    r = k4.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    uu, s, vh = np.linalg.svd(r)
    if s[1] > 1e-6 * s[0]:
        raise KAKError("local factor is not a tensor product")
    a = uu[:, 0].reshape(2, 2) * np.sqrt(s[0])
    b = vh[0, :].reshape(2, 2) * np.sqrt(s[0])
    a = a / np.sqrt(np.linalg.det(a))
    b = b / np.sqrt(np.linalg.det(b))
    prod = kron(a, b)
    idx = np.unravel_index(np.argmax(np.abs(prod)), prod.shape)
    phase = float(np.angle(k4[idx] / prod[idx]))
    return a, b, phase


class _Frame:
    """Mutable bookkeeping while folding angles into the Weyl chamber."""

    def __init__(self, v1, v2, v3, v4, thetas, phase):
        self.v1, self.v2, self.v3, self.v4 = v1, v2, v3, v4
        self.t = np.array(thetas, dtype=float)
        self.phase = phase

    def shift(self, k: int, m: int):
        # θ_k -> θ_k - m π/2;  exp(i m π/2 σσ) = i^m (σσ)^m moves right
        if m == 0:
            return
        self.t[k] -= m * np.pi / 2
        p = np.linalg.matrix_power(PAULIS[k + 1], m % 2)
        self.v3 = p @ self.v3
        self.v4 = p @ self.v4
        self.phase += m * np.pi / 2

    def flip(self, keep: int):
        # conjugation by σ_keep ⊗ 1 negates the two other angles
        p = PAULIS[keep + 1]
        for k in range(3):
            if k != keep:
                self.t[k] = -self.t[k]
        self.v1 = self.v1 @ p
        self.v3 = p @ self.v3

    def swap(self, a: int, b: int):
        g = _SWAPPERS[(min(a, b), max(a, b))]
        self.t[[a, b]] = self.t[[b, a]]
        self.v1 = self.v1 @ dagger(g)
        self.v2 = self.v2 @ dagger(g)
        self.v3 = g @ self.v3
        self.v4 = g @ self.v4


def _canonicalize(f: _Frame) -> None:
    quarter = np.pi / 4
    for k in range(3):
        m = int(np.round(f.t[k] / (np.pi / 2)))
        f.shift(k, m)
        if f.t[k] <= -quarter + _GROUP_TOL:
            f.shift(k, -1)
    # sort by magnitude, descending
    for i in range(3):
        j = i + int(np.argmax(np.abs(f.t[i:]) - 1e-13 * np.arange(3 - i)))
        if j != i:
            f.swap(i, j)
    if f.t[0] < 0:
        f.flip(1)
    if f.t[1] < 0:
        f.flip(0)
    # residual symmetry on the θ1 = π/4 face: prefer θ3 >= 0
    if f.t[2] < 0 and abs(f.t[0] - quarter) < _GROUP_TOL:
        f.shift(0, 1)
        f.flip(1)
    if f.t[2] < 0 and abs(f.t[1]) < _GROUP_TOL:
        f.flip(0)
    f.t[np.abs(f.t) < 1e-15] = 0.0


def kak_decompose(u4: np.ndarray) -> KAK:
    """Canonical decomposition of a 4x4 unitary."""
    u4 = np.asarray(u4, dtype=complex)
    if u4.shape != (4, 4) or not is_unitary(u4):
        raise ValueError("kak_decompose expects a 4x4 unitary")
    det = np.linalg.det(u4)
    phase = float(np.angle(det)) / 4
    su = u4 * np.exp(-1j * phase)
    m = MAGIC_DAG @ su @ MAGIC
    mtm = m.T @ m
    p = _simultaneous_orthogonal_eig(mtm)
    d2 = np.diag(p.T @ mtm @ p)
    lam = np.angle(d2) / 2
    if np.real(np.prod(np.exp(1j * lam))) < 0:
        lam[0] += np.pi
    k1 = m @ p @ np.diag(np.exp(-1j * lam))
    if np.linalg.norm(k1.imag) > 1e-6:
        raise KAKError("magic-basis frame is not real orthogonal")
    k1 = k1.real
    # m = k1 diag(e^{i λ}) p^T  ->  su = (Q k1 Q†)(Q D Q†)(Q p^T Q†)
    left = MAGIC @ k1 @ MAGIC_DAG
    right = MAGIC @ p.T @ MAGIC_DAG
    a1, a2, ph_l = _split_local(left)
    a3, a4, ph_r = _split_local(right)
    # λ_j = θ0 + sum_k θ_k s_kj
    coeffs = MAGIC_SIGNS @ lam / 4
    theta0, thetas = coeffs[0], coeffs[1:]
    frame = _Frame(a1, a2, a3, a4, thetas, phase + ph_l + ph_r + theta0)
    _canonicalize(frame)
    out = KAK(frame.v1, frame.v2, frame.v3, frame.v4, frame.t, 0.0)
    # settle the global phase against the input exactly
    rec = kak_reconstruct(out)
    idx = np.unravel_index(np.argmax(np.abs(rec)), rec.shape)
    out.global_phase = float(np.angle(u4[idx] / rec[idx]))
    if np.linalg.norm(kak_reconstruct(out) - u4) > 1e-8:
        raise KAKError("reconstruction check failed")
    return out


def abs_coefficients(u4: np.ndarray) -> np.ndarray:
    return kak_decompose(u4).abs_u


def batch_abs_coefficients(us: np.ndarray) -> np.ndarray:
    """|u_k| for a stack of 4x4 unitaries, shape (n, 4), without the local factors.

    Uses only the magic-basis spectrum of M^T M; the multiset of |u_k| is
    invariant under the residual Weyl-group freedom, so no canonical folding
    is needed.  Order within a row is not canonical.
    """
    us = np.asarray(us, dtype=complex)
    det = np.linalg.det(us)
    su = us * np.exp(-1j * np.angle(det) / 4)[:, None, None]
    m = MAGIC_DAG @ su @ MAGIC
    mtm = np.swapaxes(m, 1, 2) @ m
    ev = np.linalg.eigvals(mtm)
    lam = np.angle(ev) / 2
    neg = np.real(np.prod(np.exp(1j * lam), axis=1)) < 0
    lam[neg, 0] += np.pi
    diag = np.exp(1j * lam)
    # u_k = (1/4) sum_j s_kj e^{i λ_j}  (σ_k⊗σ_k diagonal in the magic basis)
    return np.abs(diag @ MAGIC_SIGNS.T) / 4
