"""Cutting gates that are separated by unknown channels.

Every gate after the first black box is deferred: each side prepares a Bell
pair (``e{j}a``, ``e{j}b``) up front, the quasiprobability instrument acts on
the ``e{j}b`` halves before any box runs, and at the gate's slot the system
qubit is teleported through with a Bell measurement.  The Pauli correction
σ_a is applied coherently from the two measurement wires and then pushed
past σ_k, which costs a sign f(a, k) f(a, k'); that sign is folded into each
instrument's parity mask.  Only one side's wires appear in any instrument.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gamma import gamma_parallel
from .gates import CNOT, CZ, SWAP, matrix_from_json, matrix_to_json, resolve_gate
from .kak import KAK, kak_decompose, kak_reconstruct
from .linalg import (
    H,
    PAULIS,
    dagger,
    haar_random_unitary,
    kron,
    pauli_string,
    random_kraus,
)
from .qpd import (
    ApplyUnitary,
    Barrier,
    LocalInstrument,
    MeasureZ,
    PrepareBell,
    QPDTerm,
    hadamard_test_ops,
    kak_terms,
    pauli_label,
)
from .simulator import EstimatorResult, build_shot_model, estimate_from_model, run_term

SCHEMA = "bbplan-v1"
SYSTEM = ("A:q0", "B:q0")
MAX_LIVE_QUBITS = 10
CPTP_TOL = 1e-9

# σ = X^x-part Z^z-part up to phase: (has X component, has Z component)
_X_PART = (0, 1, 1, 0)
_Z_PART = (0, 0, 1, 1)


def pauli_commutation_sign(a: int, k: int) -> int:
    return 1 if a == 0 or k == 0 or a == k else -1


def term_sign_correction(a: Sequence[int], b: Sequence[int], k: Sequence[int], k2: Sequence[int]) -> int:
    """Π_j f(a_j, k_j) f(a_j, k'_j) f(b_j, k_j) f(b_j, k'_j) over the deferred gates."""
    s = 1
    for aj, bj, kj, k2j in zip(a, b, k, k2, strict=True):
        for p in (aj, bj):
            s *= pauli_commutation_sign(p, kj) * pauli_commutation_sign(p, k2j)
    return s


def bell_outcome(x: int, z: int) -> int:
    """Pauli index a of the Bell state (σ_a ⊗ 1)|φ0> read off as bits (x, z).

    ``x`` comes from the system wire after CNOT and H, ``z`` from the Bell
    half; σ_a ∝ X^z Z^x.
    """
    return {(0, 0): 0, (0, 1): 1, (1, 1): 2, (1, 0): 3}[(x, z)]


class BlackBoxError(ValueError):
    pass


@dataclass
class BlackBoxChannel:
    kraus: list[np.ndarray]
    wires: tuple[str, ...] = SYSTEM
    name: str = "box"

    def __post_init__(self):
        self.kraus = [np.asarray(k, dtype=complex) for k in self.kraus]
        self.wires = tuple(self.wires)
        if not set(self.wires) <= set(SYSTEM):
            raise BlackBoxError(f"black box touches non-system wires {sorted(set(self.wires) - set(SYSTEM))}")
        d = 2 ** len(self.wires)
        if not self.kraus or any(k.shape != (d, d) for k in self.kraus):
            raise BlackBoxError(f"Kraus operators must be {d}x{d}")
        gram = sum(dagger(k) @ k for k in self.kraus)
        err = np.linalg.norm(gram - np.eye(d))
        if err > CPTP_TOL:
            raise BlackBoxError(f"box is not trace preserving (error {err:.2e})")

    def full_kraus(self) -> list[np.ndarray]:
        """Kraus operators on (A:q0, B:q0)."""
        if self.wires == SYSTEM:
            return self.kraus
        if self.wires == SYSTEM[::-1]:
            return [SWAP @ k @ SWAP for k in self.kraus]
        if self.wires == (SYSTEM[0],):
            return [kron(k, np.eye(2)) for k in self.kraus]
        return [kron(np.eye(2), k) for k in self.kraus]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ dagger(k) for k in self.full_kraus())


def identity_box() -> BlackBoxChannel:
    return BlackBoxChannel([np.eye(4)], name="identity")


def unitary_box(u: np.ndarray, name: str = "unitary") -> BlackBoxChannel:
    return BlackBoxChannel([u], name=name)


def local_unitary_box(seed: int) -> BlackBoxChannel:
    rng = np.random.default_rng(seed)
    return unitary_box(kron(haar_random_unitary(2, rng), haar_random_unitary(2, rng)), "local")


def swap_box() -> BlackBoxChannel:
    return unitary_box(SWAP, "swap")


def depolarizing_box(p: float) -> BlackBoxChannel:
    """ρ -> (1 - p) ρ + p 1/4, as a Pauli mixture."""
    if not 0 <= p <= 16 / 15:
        raise BlackBoxError("depolarizing parameter out of range")
    ks = []
    for i, j in itertools.product(range(4), repeat=2):
        w = 1 - 15 * p / 16 if i == j == 0 else p / 16
        if w > 0:
            ks.append(np.sqrt(w) * pauli_string([i, j]))
    return BlackBoxChannel(ks, name="depolarizing")


def random_box(seed: int, rank: int = 4) -> BlackBoxChannel:
    return BlackBoxChannel(random_kraus(4, rank, np.random.default_rng(seed)), name="random")


def box_battery(seed: int = 11) -> list[BlackBoxChannel]:
    return [
        identity_box(),
        local_unitary_box(seed),
        swap_box(),
        depolarizing_box(0.3),
        random_box(seed + 1),
    ]


@dataclass
class ProtocolPlan:
    """Gates interleaved with black boxes; ``slots`` reads left to right, e.g. ``"GXG"``."""

    gate_kaks: list[KAK]
    slots: str
    gate_specs: list = field(default_factory=list)

    def __post_init__(self):
        if not self.gate_kaks:
            raise ValueError("plan needs at least one gate")
        if set(self.slots) - {"G", "X"}:
            raise ValueError("slots may only contain 'G' and 'X'")
        if self.slots.count("G") != len(self.gate_kaks):
            raise ValueError("slot string must contain one 'G' per gate")
        live = 2 * (2 + 2 * len(self.deferred))
        if live > MAX_LIVE_QUBITS:
            raise ValueError(f"plan needs {live} live qubits; the dense engine allows {MAX_LIVE_QUBITS}")

    @classmethod
    def from_unitaries(cls, us: Sequence[np.ndarray], slots: str | None = None) -> "ProtocolPlan":
        return cls([kak_decompose(u) for u in us], default_slots(len(us)) if slots is None else slots)

    @property
    def n_boxes(self) -> int:
        return self.slots.count("X")

    @property
    def immediate(self) -> bool:
        """True if the first gate runs before any box (no Bell pair needed)."""
        return self.slots[0] == "G"

    @property
    def deferred(self) -> list[int]:
        return list(range(1 if self.immediate else 0, len(self.gate_kaks)))

    @property
    def unitaries(self) -> list[np.ndarray]:
        return [kak_reconstruct(k) for k in self.gate_kaks]

    def ancilla_layout(self) -> dict[int, tuple[str, str]]:
        return {j: (f"e{j}a", f"e{j}b") for j in self.deferred}


def default_slots(n_gates: int) -> str:
    """One box before every gate except the first: ``XG`` for one gate, ``GXG`` for two."""
    return "XG" if n_gates == 1 else "G" + "XG" * (n_gates - 1)


def _side_ops(plan: ProtocolPlan, side: str, k, k2, phase):
    """Ops of one side for multi-index k (and k2 with ``phase`` for Hadamard tests)."""
    gates = plan.gate_kaks
    layout = plan.ancilla_layout()
    left = (lambda g: g.v1) if side == "A" else (lambda g: g.v2)
    right = (lambda g: g.v3) if side == "A" else (lambda g: g.v4)

    def controlled_op(idx):
        factors = []
        if plan.immediate:
            g = gates[0]
            factors.append(left(g) @ PAULIS[idx[0]] @ right(g))
        factors += [PAULIS[idx[j]] for j in plan.deferred]
        return kron(*factors)

    targets = (("q0",) if plan.immediate else ()) + tuple(layout[j][1] for j in plan.deferred)
    ops: list = [PrepareBell(layout[j]) for j in plan.deferred]
    ancillas = [w for j in plan.deferred for w in layout[j]]
    mask = 0
    bit = 0
    if k2 is None:
        ops.append(ApplyUnitary(targets, controlled_op(k)))
    else:
        ops += hadamard_test_ops(targets, "h", controlled_op(k), controlled_op(k2), phase, bit)
        ancillas.append("h")
        mask |= 1 << bit
    bit += 1
    box = 0
    for j, slot in zip(_gate_order(plan.slots), plan.slots):
        if slot == "X":
            ops.append(Barrier(box))
            box += 1
            continue
        if j not in layout:
            continue
        ea, eb = layout[j]
        g = gates[j]
        bx, bz = bit, bit + 1
        bit += 2
        ops += [
            ApplyUnitary(("q0",), right(g)),
            ApplyUnitary(("q0", ea), CNOT),
            ApplyUnitary(("q0",), H),
            ApplyUnitary((ea, eb), CNOT),  # X^z
            ApplyUnitary(("q0", eb), CZ),  # Z^x
            ApplyUnitary(("q0", eb), SWAP),
            MeasureZ(eb, bx),
            MeasureZ(ea, bz),
            ApplyUnitary(("q0",), left(g)),
        ]
        if k2 is not None:
            # σ_a = X^z Z^x anticommutes with σ_k through X^z iff σ_k has a Z part, and vice versa
            if _Z_PART[k[j]] ^ _Z_PART[k2[j]]:
                mask |= 1 << bz
            if _X_PART[k[j]] ^ _X_PART[k2[j]]:
                mask |= 1 << bx
    return LocalInstrument(("q0",), tuple(ancillas), ops, mask)


def _gate_order(slots: str) -> list[int | None]:
    out, j = [], 0
    for s in slots:
        out.append(j if s == "G" else None)
        j += s == "G"
    return out


def protocol_terms(plan: ProtocolPlan) -> list[QPDTerm]:
    """All signed local terms of the protocol; independent of the boxes."""
    entries = kak_terms(plan.gate_kaks)
    terms = []
    for k, c, _, _ in entries:
        terms.append(
            QPDTerm(abs(c) ** 2, _side_ops(plan, "A", k, None, 0.0), _side_ops(plan, "B", k, None, 0.0),
                    f"diag[{pauli_label(k)}]")
        )
    for (k, c, _, _), (k2, c2, _, _) in itertools.combinations(entries, 2):
        phi = np.angle(c) - np.angle(c2)
        w = 2 * abs(c) * abs(c2)
        for shift, sgn, tag in ((0.0, 1.0, "phi/2"), (np.pi / 2, -1.0, "phi/2+pi/2")):
            beta = phi / 2 + shift
            terms.append(
                QPDTerm(sgn * w, _side_ops(plan, "A", k, k2, beta), _side_ops(plan, "B", k, k2, beta),
                        f"off[{pauli_label(k)},{pauli_label(k2)}]@{tag}")
            )
    for t in terms:
        check_locality(t)
    return terms


def check_locality(t: QPDTerm) -> None:
    """Each instrument touches only its own side's wires; boxes are not instruments."""
    for inst in (t.inst_a, t.inst_b):
        inst.validate()
        if inst.system != ("q0",):
            raise AssertionError("protocol instruments must own exactly one system wire")


def blackbox_overhead(plan: ProtocolPlan) -> float:
    return gamma_parallel([k.u for k in plan.gate_kaks]).gamma


def _check_boxes(plan: ProtocolPlan, boxes: Sequence[BlackBoxChannel]) -> dict[int, BlackBoxChannel]:
    boxes = list(boxes)
    if len(boxes) == 1 and plan.n_boxes > 1:
        boxes = boxes * plan.n_boxes
    if len(boxes) != plan.n_boxes:
        raise ValueError(f"plan has {plan.n_boxes} black-box slots but {len(boxes)} boxes were given")
    for b in boxes:
        if not isinstance(b, BlackBoxChannel):
            raise TypeError("boxes must be BlackBoxChannel instances")
    return dict(enumerate(boxes))


def composed_output(plan: ProtocolPlan, boxes: Sequence[BlackBoxChannel], rho: np.ndarray) -> np.ndarray:
    """Dense reference: apply gates and boxes in slot order on the two system qubits."""
    box_map = _check_boxes(plan, boxes)
    us = plan.unitaries
    out = np.asarray(rho, dtype=complex)
    b = 0
    for j, s in zip(_gate_order(plan.slots), plan.slots):
        if s == "G":
            out = us[j] @ out @ dagger(us[j])
        else:
            out = box_map[b].apply(out)
            b += 1
    return out


def protocol_output(
    plan: ProtocolPlan, boxes: Sequence[BlackBoxChannel], rhos: np.ndarray, terms: list[QPDTerm] | None = None
) -> np.ndarray:
    """Σ_t w_t (signed output of term t) for a stack of input states."""
    box_map = _check_boxes(plan, boxes)
    terms = protocol_terms(plan) if terms is None else terms
    rhos = np.asarray(rhos, dtype=complex)
    stack = rhos[None] if rhos.ndim == 2 else rhos
    total = np.zeros_like(stack)
    for t in terms:
        (branch,) = run_term(t, stack, box_map, mode="signed")
        total += t.weight * branch.state.matrix(list(SYSTEM))
    return total[0] if rhos.ndim == 2 else total


@dataclass(frozen=True)
class BlackBoxReport:
    values: np.ndarray
    exact: np.ndarray
    max_error: float
    overhead: float
    n_terms: int
    passed: bool


def build_blackbox_execution(
    plan: ProtocolPlan,
    boxes: Sequence[BlackBoxChannel],
    rho_in: np.ndarray,
    obs: np.ndarray,
    tol: float = 1e-8,
) -> BlackBoxReport:
    """Exact weighted sum over every term and measurement record versus the dense composition.

    ``rho_in`` may be one state or a stack; ``obs`` may be one observable or
    a matching stack.
    """
    rhos = np.asarray(rho_in, dtype=complex)
    rhos = rhos[None] if rhos.ndim == 2 else rhos
    obs = np.asarray(obs, dtype=complex)
    obs = np.broadcast_to(obs, rhos.shape) if obs.ndim == 2 else obs
    if obs.shape != rhos.shape or rhos.shape[1:] != (4, 4):
        raise ValueError("states and observables must be 4x4 (one system qubit per side)")
    terms = protocol_terms(plan)
    out = protocol_output(plan, boxes, rhos, terms)
    ref = np.array([composed_output(plan, boxes, r) for r in rhos])
    values = np.real(np.einsum("bij,bji->b", obs, out))
    exact = np.real(np.einsum("bij,bji->b", obs, ref))
    err = float(np.max(np.abs(values - exact)))
    return BlackBoxReport(values, exact, err, float(sum(abs(t.weight) for t in terms)), len(terms), err <= tol)


def estimate_blackbox(
    plan: ProtocolPlan,
    boxes: Sequence[BlackBoxChannel],
    rho_in: np.ndarray,
    obs: np.ndarray,
    shots: int,
    seed: int | None = None,
    workers: int = 1,
) -> EstimatorResult:
    terms = protocol_terms(plan)
    model = build_shot_model(terms, [t.weight for t in terms], rho_in, obs, _check_boxes(plan, boxes))
    return estimate_from_model(model, shots, seed, workers)


# serialization -------------------------------------------------------------


def plan_to_json(plan: ProtocolPlan, seed: int | None = None) -> dict:
    gates = []
    for spec, u in zip(plan.gate_specs or [None] * len(plan.gate_kaks), plan.unitaries):
        gates.append(spec if isinstance(spec, str) else {"matrix": matrix_to_json(u)})
    return {"schema": SCHEMA, "gates": gates, "slots": plan.slots, "seed": seed}


def plan_from_json(d: dict) -> ProtocolPlan:
    if d.get("schema") != SCHEMA:
        raise ValueError(f"expected schema {SCHEMA!r}, got {d.get('schema')!r}")
    specs = d.get("gates")
    if not isinstance(specs, list) or not specs:
        raise ValueError("plan needs a nonempty 'gates' list")
    us = []
    for g in specs:
        if isinstance(g, str):
            us.append(resolve_gate(g))
        elif isinstance(g, dict) and "matrix" in g:
            us.append(matrix_from_json(g["matrix"]))
        else:
            raise ValueError(f"cannot read gate entry {g!r}")
    plan = ProtocolPlan.from_unitaries(us, d.get("slots"))
    plan.gate_specs = list(specs)
    return plan


def box_from_spec(spec: str | dict) -> BlackBoxChannel:
    """``identity``, ``swap``, ``local:SEED``, ``depolarizing:P``, ``random:SEED`` or a JSON dict."""
    if isinstance(spec, dict):
        kraus = [matrix_from_json(k) for k in spec["kraus"]]
        return BlackBoxChannel(kraus, tuple(spec.get("wires", SYSTEM)), spec.get("name", "custom"))
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    try:
        if name == "identity":
            return identity_box()
        if name == "swap":
            return swap_box()
        if name == "local":
            return local_unitary_box(int(arg or 0))
        if name == "depolarizing":
            return depolarizing_box(float(arg or 0.3))
        if name == "random":
            return random_box(int(arg or 0))
    except ValueError as exc:
        raise BlackBoxError(f"bad box parameter in {spec!r}") from exc
    raise BlackBoxError(f"unknown box spec {spec!r}")
