import itertools

import numpy as np
import pytest

from conftest import PLUS, ZERO, product_state
from qcut.blackbox import (
    BlackBoxChannel,
    BlackBoxError,
    ProtocolPlan,
    bell_outcome,
    blackbox_overhead,
    box_battery,
    box_from_spec,
    build_blackbox_execution,
    composed_output,
    estimate_blackbox,
    identity_box,
    pauli_commutation_sign,
    plan_from_json,
    plan_to_json,
    protocol_terms,
    random_box,
    swap_box,
    term_sign_correction,
)
from qcut.gamma import gamma_parallel, gamma_single
from qcut.gates import CNOT, SWAP, crx
from qcut.kak import kak_decompose
from qcut.linalg import PAULIS, Z, haar_random_unitary, kron, random_density_matrix, random_observable
from qcut.qpd import ApplyUnitary, Barrier, MeasureZ, PrepareBell, build_parallel_cut_qpd, build_single_cut_qpd
from qcut.simulator import qpd_expectation

ZZ = kron(Z, Z)


def pushing_sign(a, k):
    """c with σ_a σ_k σ_a = c σ_k, found by conjugating the matrices."""
    pushed = PAULIS[a] @ PAULIS[k] @ PAULIS[a].conj().T
    c = np.trace(PAULIS[k].conj().T @ pushed) / 2
    assert np.allclose(pushed, c * PAULIS[k])
    return int(np.round(c.real))


def test_commutation_sign_matrix_oracle():
    for a, k in itertools.product(range(4), repeat=2):
        comm = PAULIS[a] @ PAULIS[k] - PAULIS[k] @ PAULIS[a]
        expected = 1 if np.allclose(comm, 0) else -1
        assert pauli_commutation_sign(a, k) == expected
    assert pauli_commutation_sign(1, 2) == -1


def test_sign_correction_all_cases():
    for a, b, k, k2 in itertools.product(range(4), repeat=4):
        oracle = pushing_sign(a, k) * pushing_sign(a, k2) * pushing_sign(b, k) * pushing_sign(b, k2)
        assert term_sign_correction([a], [b], [k], [k2]) == oracle
    for a, b, k in itertools.product(range(4), repeat=3):
        assert term_sign_correction([a], [b], [k], [k]) == 1
    assert term_sign_correction([0], [0], [1], [2]) == 1


def test_instrument_masks_encode_sign_correction():
    plan = ProtocolPlan.from_unitaries([SWAP], "XG")
    for t in protocol_terms(plan):
        if not t.label.startswith("off"):
            continue
        k, k2 = (["IXYZ".index(c) for c in part] for part in t.label[4:].split("]")[0].split(","))
        for x, z in itertools.product((0, 1), repeat=2):
            # bit 0 is the Hadamard-test outcome, bits 1 and 2 the Bell record (x, z)
            bits = (x << 1) | (z << 2)
            a = bell_outcome(x, z)
            expected = pauli_commutation_sign(a, k[0]) * pauli_commutation_sign(a, k2[0])
            assert t.inst_a.sign(bits) == expected
            assert t.inst_b.sign(bits) == expected
            assert t.inst_a.sign(bits | 1) == -expected


PLANS = [([CNOT], "XG"), ([CNOT], "GX"), ([CNOT, crx(np.pi / 2)], "GXG"), ([SWAP], "XG")]


@pytest.mark.parametrize("gates, slots", PLANS)
@pytest.mark.parametrize("box", box_battery(), ids=lambda b: b.name)
def test_exact_against_composition(gates, slots, box, rng):
    plan = ProtocolPlan.from_unitaries(gates, slots)
    rhos = np.array([random_density_matrix(4, rng) for _ in range(10)])
    obs = np.array([random_observable(4, rng) for _ in range(10)])
    r = build_blackbox_execution(plan, [box], rhos, obs)
    assert r.passed and r.max_error < 1e-8


def test_identity_box_reduces_to_cut(rng):
    plan = ProtocolPlan.from_unitaries([CNOT], "XG")
    q = build_single_cut_qpd(kak_decompose(CNOT))
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    r = build_blackbox_execution(plan, [identity_box()], rho, obs)
    assert r.values[0] == pytest.approx(qpd_expectation(q, rho, obs), abs=1e-10)


def test_two_boxes(rng):
    plan = ProtocolPlan.from_unitaries([CNOT, SWAP], "GXG")
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    assert build_blackbox_execution(plan, [random_box(3)], rho, obs).passed
    plan = ProtocolPlan.from_unitaries([CNOT], "XGX")
    out = composed_output(plan, [swap_box(), random_box(4)], rho)
    assert np.isclose(np.trace(out), 1)
    assert build_blackbox_execution(plan, [swap_box(), random_box(4)], rho, obs).passed


@pytest.mark.parametrize("theta", [0.3, np.pi / 2, np.pi, -2.0])
def test_overhead_matches_parallel_cut(theta):
    plan = ProtocolPlan.from_unitaries([CNOT, crx(theta)])
    us = [k.u for k in plan.gate_kaks]
    assert blackbox_overhead(plan) == gamma_parallel(us).gamma
    assert blackbox_overhead(plan) == pytest.approx(3 + 4 * abs(np.sin(theta / 2)), abs=1e-12)
    q = build_parallel_cut_qpd(plan.gate_kaks)
    assert abs(blackbox_overhead(plan) - q.one_norm) < 1e-12
    assert abs(sum(abs(t.weight) for t in protocol_terms(plan)) - q.one_norm) < 1e-12


def test_single_gate_overhead(rng):
    plan = ProtocolPlan.from_unitaries([haar_random_unitary(4, rng)])
    assert blackbox_overhead(plan) == pytest.approx(gamma_single(plan.gate_kaks[0].u).gamma, abs=1e-12)


def test_ancilla_layout():
    assert ProtocolPlan.from_unitaries([CNOT], "XG").ancilla_layout() == {0: ("e0a", "e0b")}
    assert ProtocolPlan.from_unitaries([CNOT], "GX").ancilla_layout() == {}
    plan = ProtocolPlan.from_unitaries([CNOT, CNOT], "GXG")
    assert plan.ancilla_layout() == {1: ("e1a", "e1b")}
    for t in protocol_terms(plan):
        assert len(set(t.inst_a.wires)) == len(t.inst_a.wires)


def test_every_deferred_gate_uses_one_bell_pair_per_side():
    plan = ProtocolPlan.from_unitaries([CNOT, crx(1.0)], "GXG")
    for t in protocol_terms(plan):
        for inst in (t.inst_a, t.inst_b):
            assert sum(isinstance(op, PrepareBell) for op in inst.ops) == 1


def test_locality_is_structural():
    plan = ProtocolPlan.from_unitaries([CNOT, SWAP], "GXG")
    for t in protocol_terms(plan):
        for inst in (t.inst_a, t.inst_b):
            own = set(inst.wires)
            for op in inst.ops:
                if isinstance(op, Barrier):
                    continue
                touched = {op.wire} if isinstance(op, MeasureZ) else set(op.wires)
                assert touched <= own


def test_terms_do_not_depend_on_boxes():
    plan = ProtocolPlan.from_unitaries([CNOT, crx(0.4)], "GXG")
    a, b = protocol_terms(plan), protocol_terms(plan)
    for s, t in zip(a, b):
        assert s.label == t.label and s.weight == t.weight
        for x, y in zip(s.inst_a.ops, t.inst_a.ops):
            if isinstance(x, ApplyUnitary):
                assert np.array_equal(x.matrix, y.matrix)


def test_box_rejections():
    with pytest.raises(BlackBoxError):
        BlackBoxChannel([np.eye(4)], wires=("A:e0a", "B:q0"))
    with pytest.raises(BlackBoxError):
        BlackBoxChannel([2 * np.eye(4)])
    with pytest.raises(BlackBoxError):
        box_from_spec("nonsense")


def test_one_sided_box(rng):
    u = haar_random_unitary(2, rng)
    box = BlackBoxChannel([u], wires=("B:q0",))
    plan = ProtocolPlan.from_unitaries([CNOT], "XG")
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    assert np.allclose(box.apply(rho), kron(np.eye(2), u) @ rho @ kron(np.eye(2), u).conj().T)
    assert build_blackbox_execution(plan, [box], rho, obs).passed


def test_plan_validation():
    with pytest.raises(ValueError):
        ProtocolPlan.from_unitaries([CNOT], "GG")
    with pytest.raises(ValueError):
        ProtocolPlan.from_unitaries([CNOT], "XQ")
    with pytest.raises(ValueError, match="live qubits"):
        ProtocolPlan.from_unitaries([CNOT, CNOT], "XGXG")
    plan = ProtocolPlan.from_unitaries([CNOT], "XG")
    with pytest.raises(ValueError):
        build_blackbox_execution(plan, [identity_box(), identity_box()], np.eye(4) / 4, ZZ)


def test_plan_json_round_trip():
    plan = ProtocolPlan.from_unitaries([CNOT, crx(0.5)], "GXG")
    back = plan_from_json(plan_to_json(plan, seed=3))
    assert back.slots == "GXG"
    assert np.allclose(back.unitaries[1], plan.unitaries[1])
    named = plan_from_json({"schema": "bbplan-v1", "gates": ["CNOT", "CRX:pi/2"], "slots": "GXG"})
    assert blackbox_overhead(named) == pytest.approx(3 + 4 * np.sin(np.pi / 4))


def test_estimate_identity_box():
    plan = ProtocolPlan.from_unitaries([CNOT], "XG")
    rho = product_state(PLUS, ZERO)
    r = estimate_blackbox(plan, [identity_box()], rho, ZZ, 100_000, seed=4)
    assert abs(r.mean - 1) <= 4 * r.stderr


def test_estimate_random_box_two_gates(rng):
    plan = ProtocolPlan.from_unitaries([CNOT, crx(np.pi / 2)], "GXG")
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    box = random_box(8)
    exact = build_blackbox_execution(plan, [box], rho, obs).exact[0]
    r = estimate_blackbox(plan, [box], rho, obs, 60_000, seed=5)
    assert abs(r.mean - exact) <= 4 * r.stderr


def test_separable_plan_zero_variance(rng):
    u = kron(haar_random_unitary(2, rng), haar_random_unitary(2, rng))
    plan = ProtocolPlan.from_unitaries([u], "XG")
    rho = product_state(ZERO, ZERO)
    # eigenstate of the observable after the box and gate: Z⊗Z on |00> rotated by u
    obs = u @ ZZ @ u.conj().T
    r = estimate_blackbox(plan, [identity_box()], rho, obs, 500, seed=1)
    assert r.mean == pytest.approx(1) and r.stderr == pytest.approx(0, abs=1e-12)


def test_blackbox_stderr_tracks_overhead():
    rho = product_state(PLUS, ZERO)
    cnot = ProtocolPlan.from_unitaries([CNOT], "XG")
    swap = ProtocolPlan.from_unitaries([SWAP], "XG")
    a = np.mean([estimate_blackbox(cnot, [identity_box()], rho, ZZ, 10_000, seed=s).stderr for s in range(10)])
    b = np.mean([estimate_blackbox(swap, [identity_box()], rho, ZZ, 10_000, seed=s).stderr for s in range(10)])
    ratio = blackbox_overhead(swap) / blackbox_overhead(cnot)
    assert abs((b / a) / ratio - 1) < 0.25
