"""Density-matrix execution of local instruments and the quasiprobability estimator."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .gamma import shots_required
from .linalg import is_hermitian
from .qpd import QPD, Barrier, LocalInstrument, MeasureZ, QPDTerm, op_matrix, sample_term

SPECTRUM_TOL = 1e-9


class DensityState:
    """A batch of (possibly unnormalized) density operators on labelled qubits.

    The tensor has shape (batch, 2, ..., 2, 2, ..., 2): row axes first, then
    column axes, both in ``labels`` order.
    """

    def __init__(self, rho: np.ndarray, labels: Sequence[str]):
        rho = np.asarray(rho, dtype=complex)
        if rho.ndim == 2:
            rho = rho[None]
        n = len(labels)
        if rho.shape[1:] != (2**n, 2**n):
            raise ValueError(f"operator shape {rho.shape[1:]} does not match {n} wires")
        self.labels = list(labels)
        self.t = rho.reshape((rho.shape[0],) + (2,) * (2 * n))

    @classmethod
    def _raw(cls, t: np.ndarray, labels: list[str]) -> "DensityState":
        s = cls.__new__(cls)
        s.t, s.labels = t, labels
        return s

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def batch(self) -> int:
        return self.t.shape[0]

    def copy(self) -> "DensityState":
        return DensityState._raw(self.t.copy(), list(self.labels))

    def _axes(self, wires: Sequence[str]) -> tuple[list[int], list[int]]:
        try:
            pos = [self.labels.index(w) for w in wires]
        except ValueError as exc:
            raise ValueError(f"unknown wire in {list(wires)}") from exc
        return [1 + p for p in pos], [1 + self.n + p for p in pos]

    def add_zero(self, label: str) -> None:
        if label in self.labels:
            raise ValueError(f"wire {label!r} already present")
        n = self.n
        new = np.zeros(self.t.shape[: 1 + n] + (2,) + self.t.shape[1 + n :] + (2,), dtype=complex)
        new[(slice(None),) * (1 + n) + (0,) + (slice(None),) * n + (0,)] = self.t
        self.t = new
        self.labels.append(label)

    def _contract(self, mat: np.ndarray, axes: list[int]) -> np.ndarray:
        k = len(axes)
        out = np.tensordot(mat.reshape((2,) * (2 * k)), self.t, axes=(list(range(k, 2 * k)), axes))
        return np.moveaxis(out, list(range(k)), axes)

    def apply(self, mat: np.ndarray, wires: Sequence[str]) -> None:
        rows, cols = self._axes(wires)
        self.t = self._contract(mat, rows)
        self.t = self._contract(mat.conj(), cols)

    def apply_kraus(self, kraus: Sequence[np.ndarray], wires: Sequence[str]) -> None:
        rows, cols = self._axes(wires)
        base = self.t
        total = np.zeros_like(base)
        for k in kraus:
            half = DensityState._raw(base, self.labels)._contract(k, rows)
            total += DensityState._raw(half, self.labels)._contract(k.conj(), cols)
        self.t = total

    def project(self, wire: str, outcome: int) -> "DensityState":
        """Unnormalized post-measurement state with ``wire`` removed."""
        (r,), (c,) = self._axes([wire])
        idx = [slice(None)] * self.t.ndim
        idx[r] = outcome
        idx[c] = outcome
        labels = [w for w in self.labels if w != wire]
        return DensityState._raw(self.t[tuple(idx)], labels)

    def signed_measure(self, wire: str, sign_of_one: int) -> None:
        p0, p1 = self.project(wire, 0), self.project(wire, 1)
        self.t = p0.t + sign_of_one * p1.t
        self.labels = p0.labels

    def trace_out(self, wire: str) -> None:
        self.signed_measure(wire, 1)

    def matrix(self, order: Sequence[str] | None = None) -> np.ndarray:
        order = self.labels if order is None else list(order)
        if sorted(order) != sorted(self.labels):
            raise ValueError("order must list every wire exactly once")
        perm = [self.labels.index(w) for w in order]
        n = self.n
        t = self.t.transpose([0] + [1 + p for p in perm] + [1 + n + p for p in perm])
        return t.reshape(self.batch, 2**n, 2**n)

    def trace(self) -> np.ndarray:
        m = self.matrix()
        return np.trace(m, axis1=1, axis2=2)


@dataclass
class Branch:
    """One measurement branch: unnormalized state plus recorded bits per side."""

    state: DensityState
    bits_a: int = 0
    bits_b: int = 0
    sign: int = 1

    @property
    def probability(self) -> np.ndarray:
        return self.state.trace().real


def _segments(inst: LocalInstrument) -> list[tuple[list, int | None]]:
    segs, cur = [], []
    for op in inst.ops:
        if isinstance(op, Barrier):
            segs.append((cur, op.slot))
            cur = []
        else:
            cur.append(op)
    segs.append((cur, None))
    return segs


def _prefixed(side: str, inst: LocalInstrument):
    return {w: f"{side}:{w}" for w in inst.wires}


def system_labels(t: QPDTerm) -> list[str]:
    return [f"A:{w}" for w in t.inst_a.system] + [f"B:{w}" for w in t.inst_b.system]


def run_term(
    t: QPDTerm,
    rho: np.ndarray,
    boxes: Mapping[int, object] | None = None,
    mode: str = "signed",
) -> list[Branch]:
    """Execute a term's two instruments (and any black boxes) on ``rho``.

    ``mode="signed"`` folds every measurement into the sign rule and returns
    one branch holding the signed output; ``mode="branch"`` enumerates all
    measurement records.  Boxes expose ``kraus`` and ``wires`` (labels such
    as ``"A:q0"``) and run when both sides reach the matching barrier.
    """
    if mode not in ("signed", "branch"):
        raise ValueError(f"unknown mode {mode!r}")
    boxes = boxes or {}
    sys = system_labels(t)
    branches = [Branch(DensityState(rho, sys))]
    segs_a, segs_b = _segments(t.inst_a), _segments(t.inst_b)
    if [s for _, s in segs_a] != [s for _, s in segs_b]:
        raise ValueError("instruments disagree on black-box slots")
    names = {"A": _prefixed("A", t.inst_a), "B": _prefixed("B", t.inst_b)}
    insts = {"A": t.inst_a, "B": t.inst_b}
    for (ops_a, slot), (ops_b, _) in zip(segs_a, segs_b):
        for side, ops in (("A", ops_a), ("B", ops_b)):
            branches = _run_ops(branches, side, ops, insts[side], names[side], mode)
        if slot is not None:
            if slot not in boxes:
                raise ValueError(f"no black box supplied for slot {slot}")
            box = boxes[slot]
            if not set(box.wires) <= set(sys):
                raise ValueError("black boxes may only act on system wires")
            for b in branches:
                b.state.apply_kraus(box.kraus, box.wires)
    for b in branches:
        for w in [w for w in b.state.labels if w not in sys]:
            b.state.trace_out(w)
    return branches


def _run_ops(branches, side, ops, inst, names, mode):
    for op in ops:
        if isinstance(op, MeasureZ):
            wire = names[op.wire]
            flip = -1 if (inst.sign_mask >> op.bit) & 1 else 1
            nxt = []
            for b in branches:
                _ensure(b.state, wire)
                if mode == "signed":
                    b.state.signed_measure(wire, flip)
                    nxt.append(b)
                    continue
                for outcome in (0, 1):
                    bit = outcome << op.bit
                    nxt.append(
                        Branch(
                            b.state.project(wire, outcome),
                            b.bits_a | (bit if side == "A" else 0),
                            b.bits_b | (bit if side == "B" else 0),
                            b.sign * (flip if outcome else 1),
                        )
                    )
            branches = nxt
        else:
            wires = [names[w] for w in op.wires]
            for b in branches:
                for w in wires:
                    _ensure(b.state, w)
                b.state.apply(op_matrix(op), wires)
    return branches


def _ensure(state: DensityState, wire: str) -> None:
    if wire not in state.labels:
        state.add_zero(wire)


def _check_observable(obs: np.ndarray, bounded: bool = True) -> np.ndarray:
    obs = np.asarray(obs, dtype=complex)
    if not is_hermitian(obs):
        raise ValueError("observable must be Hermitian")
    if bounded:
        ev = np.linalg.eigvalsh(obs)
        if ev.min() < -1 - SPECTRUM_TOL or ev.max() > 1 + SPECTRUM_TOL:
            raise ValueError("observable spectrum must lie in [-1, 1]")
    return obs


def exact_expectation(u: np.ndarray, rho: np.ndarray, obs: np.ndarray) -> float:
    """tr(obs U rho U†)."""
    obs = _check_observable(obs, bounded=False)
    u = np.asarray(u, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if not (u.shape == rho.shape == obs.shape):
        raise ValueError("unitary, state and observable dimensions differ")
    return float(np.real(np.trace(obs @ u @ rho @ u.conj().T)))


def run_term_exact(t: QPDTerm, rho: np.ndarray, obs: np.ndarray, boxes=None) -> float | np.ndarray:
    """Signed expectation of one term, summed exactly over every measurement branch.

    Accepts a single state or a stack of states (returns an array then).
    """
    obs = _check_observable(obs, bounded=False)
    rho = np.asarray(rho, dtype=complex)
    dim = 2 ** len(system_labels(t))
    if rho.shape[-2:] != (dim, dim) or obs.shape != (dim, dim):
        raise ValueError("state or observable dimension does not match the term")
    (b,) = run_term(t, rho, boxes, mode="signed")
    out = b.state.matrix(system_labels(t))
    vals = np.real(np.einsum("ij,bji->b", obs, out))
    return float(vals[0]) if rho.ndim == 2 else vals


def qpd_expectation(q: QPD, rho: np.ndarray, obs: np.ndarray) -> float:
    return float(sum(t.weight * run_term_exact(t, rho, obs) for t in q.terms))


def branch_probabilities(t: QPDTerm, rho: np.ndarray, boxes=None) -> list[tuple[int, int, float]]:
    return [(b.bits_a, b.bits_b, float(b.probability[0])) for b in run_term(t, rho, boxes, mode="branch")]


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    stderr: float
    shots: int
    seed: int | None
    gamma_used: float
    workers: int = 1


@dataclass
class _TermTable:
    """Per-term leaf distribution: branch probabilities, signs, eigenvalue CDFs."""

    probs: np.ndarray
    signs: np.ndarray
    eig_cdf: np.ndarray  # (leaves, eigenvalues)


@dataclass
class ShotModel:
    """Everything a shot needs, precomputed once per (decomposition, state, observable)."""

    weights: np.ndarray
    gamma: float
    eigvals: np.ndarray
    tables: list[_TermTable] = field(default_factory=list)

    @property
    def term_probs(self) -> np.ndarray:
        return np.abs(self.weights) / self.gamma


def build_shot_model(terms: Sequence[QPDTerm], weights, rho, obs, boxes=None) -> ShotModel:
    obs = _check_observable(obs)
    eigvals, vecs = np.linalg.eigh(obs)
    weights = np.asarray(weights, dtype=float)
    tables = []
    for t in terms:
        leaves = run_term(t, rho, boxes, mode="branch")
        probs, signs, dists = [], [], []
        for leaf in leaves:
            m = leaf.state.matrix(system_labels(t))[0]
            p = float(np.real(np.trace(m)))
            probs.append(max(p, 0.0))
            signs.append(leaf.sign)
            diag = np.clip(np.real(np.einsum("ij,ik,kj->j", vecs.conj(), m, vecs)), 0, None)
            dists.append(diag / diag.sum() if diag.sum() > 0 else np.full(len(eigvals), 1 / len(eigvals)))
        probs = np.array(probs)
        if abs(probs.sum() - 1) > 1e-8:
            raise RuntimeError(f"branch probabilities of term {t.label!r} sum to {probs.sum()}")
        tables.append(_TermTable(probs / probs.sum(), np.array(signs), np.cumsum(dists, axis=1)))
    gamma = float(np.abs(weights).sum())
    return ShotModel(weights, gamma, eigvals, tables)


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, None] > cdf).sum(axis=1), cdf.shape[-1] - 1)


def sample_outcomes(model: ShotModel, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``shots`` estimator outcomes stage by stage.

    Term, then measurement record given the term, then observable eigenvalue
    given the record: the same joint law as running shots one at a time.
    """
    terms = rng.choice(len(model.weights), size=shots, p=model.term_probs)
    out = np.empty(shots)
    for i in np.unique(terms):
        sel = np.flatnonzero(terms == i)
        table = model.tables[i]
        leaf = _inverse_cdf(np.cumsum(table.probs)[None, :], rng.random(sel.size))
        eig = _inverse_cdf(table.eig_cdf[leaf], rng.random(sel.size))
        out[sel] = np.sign(model.weights[i]) * table.signs[leaf] * model.gamma * model.eigvals[eig]
    return out


def estimate_from_model(model: ShotModel, shots: int, seed: int | None = None, workers: int = 1) -> EstimatorResult:
    if not isinstance(shots, (int, np.integer)) or shots < 1:
        raise ValueError("shots must be a positive integer")
    if workers < 1:
        raise ValueError("workers must be positive")
    streams = np.random.SeedSequence(seed).spawn(workers)
    sizes = [shots // workers + (w < shots % workers) for w in range(workers)]
    jobs = [(np.random.default_rng(s), n) for s, n in zip(streams, sizes) if n > 0]
    if len(jobs) > 1:
        with ThreadPoolExecutor(len(jobs)) as pool:
            parts = list(pool.map(lambda j: sample_outcomes(model, j[1], j[0]), jobs))
    else:
        parts = [sample_outcomes(model, n, r) for r, n in jobs]
    outcomes = np.concatenate(parts)
    stderr = float(outcomes.std(ddof=1) / math.sqrt(shots)) if shots > 1 else float("inf")
    return EstimatorResult(float(outcomes.mean()), stderr, int(shots), seed, model.gamma, workers)


def estimate(
    q: QPD, rho: np.ndarray, obs: np.ndarray, shots: int, seed: int | None = None, workers: int = 1
) -> EstimatorResult:
    """Monte Carlo estimate of tr(obs E(rho)) by sampling signed local terms."""
    if not isinstance(shots, (int, np.integer)) or shots < 1:
        raise ValueError("shots must be a positive integer")
    model = build_shot_model(q.terms, q.weights, rho, obs)
    return estimate_from_model(model, shots, seed, workers)


def run_shot(q: QPD, rho: np.ndarray, obs: np.ndarray, rng: np.random.Generator) -> float:
    """One literal shot: sample a term, collapse each measurement, measure obs."""

    obs = _check_observable(obs)
    i, sign, _ = sample_term(q, rng)
    t = q.terms[i]
    b = Branch(DensityState(rho, system_labels(t)))
    for side, inst in (("A", t.inst_a), ("B", t.inst_b)):
        names = _prefixed(side, inst)
        for op in inst.ops:
            if isinstance(op, Barrier):
                raise ValueError("run_shot does not execute black boxes")
            if isinstance(op, MeasureZ):
                wire = names[op.wire]
                _ensure(b.state, wire)
                p0 = b.state.project(wire, 0)
                p1 = b.state.project(wire, 1)
                tr0 = float(p0.trace()[0].real)
                tr1 = float(p1.trace()[0].real)
                outcome = int(rng.random() * (tr0 + tr1) >= tr0)
                b.state = p1 if outcome else p0
                b.state.t = b.state.t / (tr1 if outcome else tr0)
                if outcome and (inst.sign_mask >> op.bit) & 1:
                    sign = -sign
            else:
                wires = [names[w] for w in op.wires]
                for w in wires:
                    _ensure(b.state, w)
                b.state.apply(op_matrix(op), wires)
    for w in [w for w in b.state.labels if w not in system_labels(t)]:
        b.state.trace_out(w)
    m = b.state.matrix(system_labels(t))[0]
    eigvals, vecs = np.linalg.eigh(obs)
    p = np.clip(np.real(np.einsum("ij,ik,kj->j", vecs.conj(), m, vecs)), 0, None)
    e = rng.choice(len(eigvals), p=p / p.sum())
    return sign * q.one_norm * float(eigvals[e])


def calibrate_overhead(
    q: QPD,
    rho: np.ndarray,
    obs: np.ndarray,
    target_eps: float,
    delta: float,
    seed: int | None = None,
    exact: float | None = None,
    model: ShotModel | None = None,
) -> tuple[int, bool]:
    """Run the estimator at the Hoeffding shot count and report whether it hit ±ε."""
    shots = shots_required(max(q.one_norm, 1.0), target_eps, delta)
    if exact is None:
        exact = exact_expectation(q.target, rho, obs) if q.target is not None else qpd_expectation(q, rho, obs)
    model = build_shot_model(q.terms, q.weights, rho, obs) if model is None else model
    res = estimate_from_model(model, shots, seed)
    return shots, abs(res.mean - exact) <= target_eps

