"""Optimal quasiprobability decompositions of two-qubit gates into local instruments.

A decomposition is a signed list of terms.  Each term pairs a local
instrument on side A with one on side B; the instruments may measure
ancillas, and the parity of selected measurement bits flips the sign of the
shot (the negativity trick).  Diagonal terms apply ``L_k ⊗ R_k`` directly;
each pair k < k' gets two Hadamard-test terms at phases φ/2 and φ/2 + π/2.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .gates import CNOT, matrix_from_json, matrix_to_json
from .kak import KAK, kak_decompose
from .linalg import (
    CHANNEL_TOL,
    H,
    PAULI_LABELS,
    PAULIS,
    choi_of_channel,
    kron,
    permute_operator,
    unitary_choi,
)

COEFF_CUTOFF = 1e-12
SCHEMA = "qpd-v1"


@dataclass(frozen=True)
class ApplyUnitary:
    wires: tuple[str, ...]
    matrix: np.ndarray


@dataclass(frozen=True)
class MeasureZ:
    wire: str
    bit: int


@dataclass(frozen=True)
class PrepareBell:
    """Turn two fresh |0> ancillas into (|00> + |11>)/sqrt 2."""

    wires: tuple[str, str]


@dataclass(frozen=True)
class Barrier:
    """Pause point; black box ``slot`` runs once both sides reach it."""

    slot: int


Op = Union[ApplyUnitary, MeasureZ, PrepareBell, Barrier]

BELL_PREP = CNOT @ kron(H, np.eye(2))


def op_matrix(op: ApplyUnitary | PrepareBell) -> np.ndarray:
    return BELL_PREP if isinstance(op, PrepareBell) else op.matrix


@dataclass
class LocalInstrument:
    system: tuple[str, ...]
    ancillas: tuple[str, ...] = ()
    ops: tuple[Op, ...] = ()
    sign_mask: int = 0

    def __post_init__(self):
        self.system = tuple(self.system)
        self.ancillas = tuple(self.ancillas)
        self.ops = tuple(self.ops)
        self.validate()

    @property
    def ancilla_count(self) -> int:
        return len(self.ancillas)

    @property
    def wires(self) -> tuple[str, ...]:
        return self.system + self.ancillas

    @property
    def n_bits(self) -> int:
        return sum(isinstance(op, MeasureZ) for op in self.ops)

    def sign(self, bits: int) -> int:
        return -1 if bin(bits & self.sign_mask).count("1") % 2 else 1

    def validate(self) -> None:
        known = set(self.wires)
        measured: set[str] = set()
        bits: set[int] = set()
        for op in self.ops:
            if isinstance(op, Barrier):
                continue
            touched = (op.wire,) if isinstance(op, MeasureZ) else tuple(op.wires)
            if not set(touched) <= known:
                raise ValueError(f"instrument op touches foreign wires {set(touched) - known}")
            if set(touched) & measured:
                raise ValueError(f"wire reused after measurement: {set(touched) & measured}")
            if isinstance(op, MeasureZ):
                if op.wire in self.system:
                    raise ValueError("system wires may not be measured")
                if op.bit in bits:
                    raise ValueError(f"bit {op.bit} recorded twice")
                measured.add(op.wire)
                bits.add(op.bit)
            if isinstance(op, ApplyUnitary) and op.matrix.shape != (2 ** len(op.wires),) * 2:
                raise ValueError("unitary size does not match its wires")

    def kraus(self) -> list[tuple[int, np.ndarray]]:
        """Branch Kraus operators (bits, K) on the system wires.

        Simulates the instrument on the ancilla-extended space with ancillas
        starting in |0>.  Measured wires are never reused, so measurement can
        be deferred to the end; unmeasured ancillas are traced out, which adds
        Kraus operators sharing the same bits.
        """
        wires = list(self.wires)
        ns, n = len(self.system), len(wires)
        # tensor axes: one per wire, then a batch axis over system input basis
        v = np.zeros((2,) * n + (2**ns,), dtype=complex)
        idx = (slice(None),) * ns + (0,) * (n - ns)
        v[idx] = np.eye(2**ns).reshape((2,) * ns + (2**ns,))
        measured: dict[str, int] = {}
        for op in self.ops:
            if isinstance(op, Barrier):
                continue
            if isinstance(op, MeasureZ):
                measured[op.wire] = op.bit
                continue
            mat = op_matrix(op)
            axes = [wires.index(w) for w in op.wires]
            k = len(axes)
            v = np.tensordot(mat.reshape((2,) * (2 * k)), v, axes=(list(range(k, 2 * k)), axes))
            v = np.moveaxis(v, list(range(k)), axes)
        meas_wires = list(measured)
        traced = [w for w in self.ancillas if w not in measured]
        order = [wires.index(w) for w in meas_wires + traced + list(self.system)]
        v = np.transpose(v, order + [n])
        v = v.reshape(2 ** len(meas_wires), 2 ** len(traced), 2**ns, 2**ns)
        out = []
        for m in range(2 ** len(meas_wires)):
            bits = 0
            for pos, w in enumerate(meas_wires):
                if (m >> (len(meas_wires) - 1 - pos)) & 1:
                    bits |= 1 << measured[w]
            for r in range(2 ** len(traced)):
                out.append((bits, v[m, r]))
        return out

    def signed_choi(self) -> np.ndarray:
        plus, minus = [], []
        for bits, k in self.kraus():
            (plus if self.sign(bits) > 0 else minus).append(k)
        return choi_of_channel(plus, minus)

    def unsigned_choi(self) -> np.ndarray:
        return choi_of_channel([k for _, k in self.kraus()])


@dataclass
class QPDTerm:
    weight: float
    inst_a: LocalInstrument
    inst_b: LocalInstrument
    label: str = ""

    def __post_init__(self):
        if self.weight == 0:
            raise ValueError("QPD term weights must be nonzero")

    def sign(self, bits_a: int, bits_b: int) -> int:
        return self.inst_a.sign(bits_a) * self.inst_b.sign(bits_b)


@dataclass
class QPD:
    terms: list[QPDTerm]
    n_a: int
    n_b: int
    target: np.ndarray | None = None
    one_norm: float = field(init=False)

    def __post_init__(self):
        self.one_norm = float(sum(abs(t.weight) for t in self.terms))

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.terms])

    @property
    def dim(self) -> int:
        return 2 ** (self.n_a + self.n_b)


def hadamard_test_ops(
    wires: Sequence[str], ancilla: str, l0: np.ndarray, l1: np.ndarray, phase: float, bit: int = 0
) -> list[Op]:
    """|0> - H - diag(1, e^{-i phase}) - (ctrl-0 l0, ctrl-1 l1) - H - measure.

    Outcome 0 applies (l0 + e^{-i phase} l1)/2, outcome 1 (l0 - e^{-i phase} l1)/2.
    """
    d = l0.shape[0]
    ctrl = np.zeros((2 * d, 2 * d), dtype=complex)
    ctrl[:d, :d] = l0
    ctrl[d:, d:] = l1
    return [
        ApplyUnitary((ancilla,), H),
        ApplyUnitary((ancilla,), np.diag([1, np.exp(-1j * phase)])),
        ApplyUnitary((ancilla,) + tuple(wires), ctrl),
        ApplyUnitary((ancilla,), H),
        MeasureZ(ancilla, bit),
    ]


def side_wires(n: int) -> tuple[str, ...]:
    return tuple(f"q{i}" for i in range(n))


def pauli_label(k: Sequence[int]) -> str:
    return "".join(PAULI_LABELS[i] for i in k)


def kak_terms(ks: Sequence[KAK], cutoff: float = COEFF_CUTOFF):
    """Surviving multi-indices with coefficient u_k, L_k and R_k (lexicographic)."""
    out = []
    for k in itertools.product(range(4), repeat=len(ks)):
        c = complex(np.prod([kk.u[i] for kk, i in zip(ks, k)]))
        if abs(c) <= cutoff:
            continue
        lk = kron(*(kk.v1 @ PAULIS[i] @ kk.v3 for kk, i in zip(ks, k)))
        rk = kron(*(kk.v2 @ PAULIS[i] @ kk.v4 for kk, i in zip(ks, k)))
        out.append((k, c, lk, rk))
    return out


def parallel_target(us: Sequence[np.ndarray]) -> np.ndarray:
    """⊗ U_i reordered to wire order (A_1..A_n, B_1..B_n)."""
    n = len(us)
    full = kron(*us)  # order A1 B1 A2 B2 ...
    order = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    return permute_operator(full, order)


def build_parallel_cut_qpd(ks: Sequence[KAK], cutoff: float = COEFF_CUTOFF) -> QPD:
    if len(ks) == 0:
        raise ValueError("need at least one gate")
    n = len(ks)
    wires = side_wires(n)
    entries = kak_terms(ks, cutoff)
    terms: list[QPDTerm] = []
    for k, c, lk, rk in entries:
        terms.append(
            QPDTerm(
                abs(c) ** 2,
                LocalInstrument(wires, (), [ApplyUnitary(wires, lk)]),
                LocalInstrument(wires, (), [ApplyUnitary(wires, rk)]),
                f"diag[{pauli_label(k)}]",
            )
        )
    for (i, (k, c, lk, rk)), (j, (k2, c2, lk2, rk2)) in itertools.combinations(enumerate(entries), 2):
        phi = np.angle(c) - np.angle(c2)
        w = 2 * abs(c) * abs(c2)
        for shift, sgn, tag in ((0.0, 1.0, "phi/2"), (np.pi / 2, -1.0, "phi/2+pi/2")):
            beta = phi / 2 + shift
            terms.append(
                QPDTerm(
                    sgn * w,
                    LocalInstrument(wires, ("anc",), hadamard_test_ops(wires, "anc", lk, lk2, beta), 1),
                    LocalInstrument(wires, ("anc",), hadamard_test_ops(wires, "anc", rk, rk2, beta), 1),
                    f"off[{pauli_label(k)},{pauli_label(k2)}]@{tag}",
                )
            )
    target = parallel_target([kak_to_unitary(kk) for kk in ks])
    return QPD(terms, n, n, target)


def build_single_cut_qpd(k: KAK, cutoff: float = COEFF_CUTOFF) -> QPD:
    return build_parallel_cut_qpd([k], cutoff)


def kak_to_unitary(k: KAK) -> np.ndarray:
    from .kak import kak_reconstruct

    return kak_reconstruct(k)


def qpd_for_unitaries(us: Sequence[np.ndarray]) -> QPD:
    return build_parallel_cut_qpd([kak_decompose(u) for u in us])


def _combine_chois(ja: np.ndarray, jb: np.ndarray, n_a: int, n_b: int) -> np.ndarray:
    # kron gives factors (refA, outA, refB, outB); reorder to (refA, refB, outA, outB)
    j = np.kron(ja, jb)
    ra = list(range(n_a))
    oa = list(range(n_a, 2 * n_a))
    rb = list(range(2 * n_a, 2 * n_a + n_b))
    ob = list(range(2 * n_a + n_b, 2 * (n_a + n_b)))
    return permute_operator(j, ra + rb + oa + ob)


def term_channel_choi(t: QPDTerm, n_a: int | None = None, n_b: int | None = None) -> np.ndarray:
    """Signed Choi operator of a term's induced map on the system wires."""
    n_a = len(t.inst_a.system) if n_a is None else n_a
    n_b = len(t.inst_b.system) if n_b is None else n_b
    if len(t.inst_a.system) != n_a or len(t.inst_b.system) != n_b:
        raise ValueError("instrument wire counts do not match the requested dimensions")
    return _combine_chois(t.inst_a.signed_choi(), t.inst_b.signed_choi(), n_a, n_b)


def unsigned_term_choi(t: QPDTerm) -> np.ndarray:
    return _combine_chois(
        t.inst_a.unsigned_choi(), t.inst_b.unsigned_choi(), len(t.inst_a.system), len(t.inst_b.system)
    )


def qpd_choi(q: QPD) -> np.ndarray:
    total = np.zeros((q.dim**2, q.dim**2), dtype=complex)
    for t in q.terms:  # fixed order keeps the sum bit-stable
        total += t.weight * term_channel_choi(t, q.n_a, q.n_b)
    return total


@dataclass(frozen=True)
class VerificationReport:
    max_error: float
    one_norm: float
    passed: bool
    n_terms: int


MAX_VERIFY_QUBITS = 8


def verify_qpd(q: QPD, target: np.ndarray | None = None, tol: float = CHANNEL_TOL) -> VerificationReport:
    """Compare the weighted sum of term Chois with the target unitary's Choi (Frobenius)."""
    target = q.target if target is None else target
    if target is None:
        raise ValueError("no target unitary to verify against")
    if q.n_a + q.n_b > MAX_VERIFY_QUBITS // 2:
        raise ValueError("decomposition too large for the dense Choi verifier")
    if target.shape != (q.dim, q.dim):
        raise ValueError("target dimension does not match the decomposition")
    err = float(np.linalg.norm(qpd_choi(q) - unitary_choi(target)))
    return VerificationReport(err, q.one_norm, err <= tol, len(q.terms))


def term_probabilities(q: QPD) -> np.ndarray:
    return np.abs(q.weights) / q.one_norm


def sample_term(q: QPD, rng: np.random.Generator) -> tuple[int, int, float]:
    """Draw index i with probability |a_i| / sum |a|; returns (i, sign(a_i), p_i)."""
    if q.one_norm <= 0:
        raise ValueError("empty decomposition")
    p = term_probabilities(q)
    i = int(rng.choice(len(p), p=p))
    return i, int(np.sign(q.terms[i].weight)), float(p[i])


# serialization -------------------------------------------------------------


def _op_to_json(op: Op) -> dict:
    if isinstance(op, ApplyUnitary):
        return {"kind": "unitary", "wires": list(op.wires), "matrix": matrix_to_json(op.matrix)}
    if isinstance(op, MeasureZ):
        return {"kind": "measure_z", "wire": op.wire, "bit": op.bit}
    if isinstance(op, PrepareBell):
        return {"kind": "prepare_bell", "wires": list(op.wires)}
    return {"kind": "barrier", "slot": op.slot}


def _op_from_json(d: dict) -> Op:
    kind = d["kind"]
    if kind == "unitary":
        return ApplyUnitary(tuple(d["wires"]), matrix_from_json(d["matrix"]))
    if kind == "measure_z":
        return MeasureZ(d["wire"], int(d["bit"]))
    if kind == "prepare_bell":
        return PrepareBell(tuple(d["wires"]))
    if kind == "barrier":
        return Barrier(int(d["slot"]))
    raise ValueError(f"unknown op kind {kind!r}")


def instrument_to_json(inst: LocalInstrument) -> dict:
    return {
        "system": list(inst.system),
        "ancillas": list(inst.ancillas),
        "ops": [_op_to_json(op) for op in inst.ops],
        "sign_rule": {"type": "parity", "mask": inst.sign_mask},
    }


def instrument_from_json(d: dict) -> LocalInstrument:
    rule = d.get("sign_rule", {"type": "parity", "mask": 0})
    if rule.get("type") != "parity":
        raise ValueError("only parity sign rules are supported")
    return LocalInstrument(
        tuple(d["system"]), tuple(d.get("ancillas", ())), [_op_from_json(o) for o in d["ops"]], int(rule["mask"])
    )


def qpd_to_json(q: QPD) -> dict:
    return {
        "schema": SCHEMA,
        "n_a": q.n_a,
        "n_b": q.n_b,
        "one_norm": q.one_norm,
        "target": None if q.target is None else matrix_to_json(q.target),
        "terms": [
            {
                "weight": t.weight,
                "label": t.label,
                "A": instrument_to_json(t.inst_a),
                "B": instrument_to_json(t.inst_b),
            }
            for t in q.terms
        ],
    }


def qpd_from_json(d: dict) -> QPD:
    if d.get("schema") != SCHEMA:
        raise ValueError(f"expected schema {SCHEMA!r}, got {d.get('schema')!r}")
    terms = [
        QPDTerm(float(t["weight"]), instrument_from_json(t["A"]), instrument_from_json(t["B"]), t.get("label", ""))
        for t in d["terms"]
    ]
    target = None if d.get("target") is None else matrix_from_json(d["target"])
    return QPD(terms, int(d["n_a"]), int(d["n_b"]), target)
