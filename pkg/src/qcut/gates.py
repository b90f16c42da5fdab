"""Named gates, gate-spec parsing and small circuit helpers."""

from __future__ import annotations

import ast
import json
import operator
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import H, X, haar_random_unitary, is_unitary, kron

CNOT = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
CZ = np.diag([1, 1, 1, -1]).astype(complex)
SWAP = np.eye(4, dtype=complex)[[0, 2, 1, 3]]
ISWAP = np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=complex)
TOFFOLI = np.eye(8, dtype=complex)[[0, 1, 2, 3, 4, 5, 7, 6]]


class GateSpecError(ValueError):
    pass


def rx(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * X


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-1j * theta / 2), np.exp(1j * theta / 2)])


def controlled(u: np.ndarray) -> np.ndarray:
    """|0><0| ⊗ 1 + |1><1| ⊗ u, control on the first factor."""
    d = u.shape[0]
    out = np.eye(2 * d, dtype=complex)
    out[d:, d:] = u
    return out


def crx(theta: float) -> np.ndarray:
    return controlled(rx(theta))


def crz(theta: float) -> np.ndarray:
    return controlled(rz(theta))


def embed(u: np.ndarray, wires: Sequence[int], n: int) -> np.ndarray:
    """Lift ``u`` acting on ``wires`` (in that order) to an n-qubit operator."""
    k = len(wires)
    rest = [w for w in range(n) if w not in wires]
    full = kron(u, np.eye(2 ** (n - k)))
    # full acts on order wires + rest; permute back to 0..n-1
    order = list(wires) + rest
    inv = np.argsort(order)
    t = full.reshape([2] * (2 * n))
    t = t.transpose(list(inv) + [n + i for i in inv])
    return t.reshape(2**n, 2**n)


_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def parse_angle(text: str) -> float:
    """Radians; accepts arithmetic with a ``pi`` token, e.g. ``3*pi/4``."""
    text = text.strip().replace("π", "pi")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return np.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise GateSpecError(f"cannot parse angle {text!r}")

    try:
        return float(ev(ast.parse(text, mode="eval")))
    except SyntaxError as exc:
        raise GateSpecError(f"cannot parse angle {text!r}") from exc


def load_matrix(path: str | Path) -> np.ndarray:
    """Read a matrix file: JSON array of rows, each entry ``[re, im]``."""
    try:
        data = json.loads(Path(path).read_text())
        return matrix_from_json(data)
    except (OSError, json.JSONDecodeError) as exc:
        raise GateSpecError(f"cannot read matrix file {path}: {exc}") from exc


def matrix_from_json(data) -> np.ndarray:
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise GateSpecError("matrix entries must be [re, im] pairs") from exc
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise GateSpecError(f"matrix must be square with [re, im] entries, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def matrix_to_json(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def resolve_gate(spec: str) -> np.ndarray:
    """Turn a gate spec into a 4x4 unitary.

    Forms: ``CNOT``, ``CZ``, ``SWAP``, ``iSWAP``, ``I``, ``CRX:θ``, ``CRZ:θ``,
    ``Haar:seed`` or a path to a matrix file.
    """
    name, _, arg = spec.partition(":")
    key = name.strip().upper()
    fixed = {"CNOT": CNOT, "CX": CNOT, "CZ": CZ, "SWAP": SWAP, "ISWAP": ISWAP, "I": np.eye(4, dtype=complex)}
    if key in fixed and not arg:
        u = fixed[key]
    elif key == "CRX" and arg:
        u = crx(parse_angle(arg))
    elif key == "CRZ" and arg:
        u = crz(parse_angle(arg))
    elif key == "HAAR" and arg:
        try:
            seed = int(arg)
        except ValueError as exc:
            raise GateSpecError(f"Haar seed must be an integer, got {arg!r}") from exc
        u = haar_random_unitary(4, np.random.default_rng(seed))
    elif Path(spec).is_file():
        u = load_matrix(spec)
    else:
        raise GateSpecError(f"unknown gate spec {spec!r}")
    if u.shape != (4, 4) or not is_unitary(u):
        raise GateSpecError(f"gate {spec!r} is not a 4x4 unitary")
    return np.array(u, dtype=complex)


def toffoli_circuit_a() -> np.ndarray:
    """Toffoli (controls q0, q1; target q2) with an ancilla q3 on the q1/q2 side.

    The ancilla computes q1 AND q2 in the Hadamard frame of q2, a single CZ
    couples it to q0, then it is uncomputed.  Only that CZ crosses q0 | q1 q2 q3.
    """
    n = 4
    h2 = embed(H, [2], n)
    tof = embed(TOFFOLI, [1, 2, 3], n)
    cz = embed(CZ, [0, 3], n)
    return h2 @ tof @ cz @ tof @ h2


def toffoli_circuit_b() -> np.ndarray:
    """Toffoli with an ancilla q3 on the control side; one CNOT crosses to q2."""
    n = 4
    tof = embed(TOFFOLI, [0, 1, 3], n)
    cx = embed(CNOT, [3, 2], n)
    return tof @ cx @ tof
