"""Command-line interface: ``qcut <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 input error.  Every command
is deterministic given its flags; the default seed comes from ``QCUT_SEED``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import blackbox as bb
from .gamma import gamma_parallel, gamma_regularized, gamma_single, haar_survey
from .gates import GateSpecError, load_matrix, resolve_gate
from .kak import kak_decompose, kak_reconstruct
from .linalg import PAULI_LABELS, is_density_operator, is_hermitian, kron, pauli_string
from .linalg import random_density_matrix, random_observable
from .qpd import build_parallel_cut_qpd, build_single_cut_qpd, qpd_from_json, qpd_to_json, verify_qpd
from .simulator import estimate, exact_expectation, qpd_expectation

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _default_seed() -> int:
    raw = os.getenv("QCUT_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _cplx(z) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def _mat(m) -> list:
    return [[_cplx(z) for z in row] for row in np.asarray(m)]


def _gates(specs: list[str]) -> list[np.ndarray]:
    try:
        return [resolve_gate(s) for s in specs]
    except GateSpecError as exc:
        raise InputError(str(exc)) from exc


# state and observable specs --------------------------------------------------

_KETS = {
    "0": np.array([1, 0]),
    "1": np.array([0, 1]),
    "+": np.array([1, 1]) / math.sqrt(2),
    "-": np.array([1, -1]) / math.sqrt(2),
    "r": np.array([1, 1j]) / math.sqrt(2),
    "l": np.array([1, -1j]) / math.sqrt(2),
}


def parse_state(spec: str, n: int) -> np.ndarray:
    """Product state like ``+0`` (chars 0 1 + - r l), or a matrix file holding a density operator."""
    if Path(spec).is_file():
        rho = load_matrix(spec)
    else:
        if len(spec) != n or any(c not in _KETS for c in spec):
            raise InputError(f"state spec {spec!r} must be {n} chars from 01+-rl or a matrix file")
        psi = kron(*(_KETS[c].reshape(-1, 1).astype(complex) for c in spec)).reshape(-1)
        rho = np.outer(psi, psi.conj())
    if rho.shape != (2**n, 2**n) or not is_density_operator(rho, 1e-9):
        raise InputError(f"state {spec!r} is not a {n}-qubit density operator")
    return rho


def parse_observable(spec: str, n: int) -> np.ndarray:
    """Pauli string like ``ZZ`` or a matrix file with a Hermitian matrix."""
    if Path(spec).is_file():
        obs = load_matrix(spec)
    else:
        s = spec.upper()
        if len(s) != n or any(c not in PAULI_LABELS for c in s):
            raise InputError(f"observable spec {spec!r} must be a {n}-letter Pauli string or a matrix file")
        obs = pauli_string([PAULI_LABELS.index(c) for c in s])
    if obs.shape != (2**n, 2**n) or not is_hermitian(obs, 1e-9):
        raise InputError(f"observable {spec!r} is not a Hermitian {n}-qubit matrix")
    return obs


# commands --------------------------------------------------------------------


def cmd_gamma(args) -> int:
    us = _gates(args.gates)
    kaks = [kak_decompose(u) for u in us]
    singles = [gamma_single(k.u).gamma for k in kaks]
    rows = [
        {
            "gate": spec,
            "abs_u": [float(a) for a in k.abs_u],
            "gamma_single": g,
            "gamma_regularized": gamma_regularized(k.u),
        }
        for spec, k, g in zip(args.gates, kaks, singles)
    ]
    product = float(np.prod(singles))
    if args.mode == "single":
        value = product
    elif args.mode == "regularized":
        value = float(np.prod([r["gamma_regularized"] for r in rows]))
    elif args.mode == "parallel":
        value = gamma_parallel([k.u for k in kaks]).gamma
    else:
        value = bb.blackbox_overhead(bb.ProtocolPlan(kaks, bb.default_slots(len(kaks))))
    report = {"mode": args.mode, "gamma": value, "product_of_singles": product, "gates": rows}
    if args.json:
        _emit(report)
        return EXIT_OK
    print(f"{'gate':<20} {'|u_0|':>8} {'|u_1|':>8} {'|u_2|':>8} {'|u_3|':>8} {'gamma':>10} {'gamma_reg':>10}")
    for r in rows:
        a = r["abs_u"]
        print(f"{r['gate']:<20} " + " ".join(f"{x:8.5f}" for x in a) +
              f" {r['gamma_single']:10.6f} {r['gamma_regularized']:10.6f}")
    print(f"mode={args.mode} gamma={value:.10g} product_of_singles={product:.10g}")
    return EXIT_OK


def kak_report(spec: str, u: np.ndarray) -> dict:
    k = kak_decompose(u)
    return {
        "schema": "kak-v1",
        "gate": spec,
        "global_phase": k.global_phase,
        "thetas": [float(t) for t in k.thetas],
        "u": [_cplx(z) for z in k.u],
        "abs_u": [float(a) for a in k.abs_u],
        "v1": _mat(k.v1),
        "v2": _mat(k.v2),
        "v3": _mat(k.v3),
        "v4": _mat(k.v4),
        "residual": float(np.linalg.norm(kak_reconstruct(k) - u)),
    }


def cmd_kak(args) -> int:
    (u,) = _gates([args.gate])
    _emit(kak_report(args.gate, u), args.out)
    return EXIT_OK


def cmd_decompose(args) -> int:
    us = _gates(args.gates)
    if args.mode == "single" and len(us) != 1:
        raise InputError("--mode single takes exactly one gate")
    kaks = [kak_decompose(u) for u in us]
    q = build_single_cut_qpd(kaks[0]) if args.mode == "single" else build_parallel_cut_qpd(kaks)
    report = verify_qpd(q)
    data = qpd_to_json(q)
    data["verification"] = {"max_error": report.max_error, "passed": report.passed}
    if args.out:
        Path(args.out).write_text(json.dumps(data) + "\n")
    _emit({"terms": report.n_terms, "one_norm": q.one_norm, "max_error": report.max_error,
           "passed": report.passed, "out": args.out})
    return EXIT_OK if report.passed else EXIT_FAIL


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    try:
        q = qpd_from_json(_read_json(args.qpd))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed decomposition file: {exc}") from exc
    n = q.n_a + q.n_b
    rho = parse_state(args.state, n)
    obs = parse_observable(args.obs, n)
    res = estimate(q, rho, obs, args.shots, seed=args.seed, workers=args.workers)
    exact = exact_expectation(q.target, rho, obs) if q.target is not None else qpd_expectation(q, rho, obs)
    _emit({
        "mean": res.mean,
        "stderr": res.stderr,
        "shots": res.shots,
        "seed": res.seed,
        "workers": res.workers,
        "gamma_used": res.gamma_used,
        "exact": exact,
    })
    return EXIT_OK


def _load_plan(args) -> bb.ProtocolPlan:
    if args.plan:
        try:
            return bb.plan_from_json(_read_json(args.plan))
        except GateSpecError as exc:
            raise InputError(str(exc)) from exc
    if not args.gates:
        raise InputError("give a plan file or --gates")
    plan = bb.ProtocolPlan.from_unitaries(_gates(args.gates), args.slots)
    plan.gate_specs = list(args.gates)
    return plan


def _load_box(spec: str) -> bb.BlackBoxChannel:
    if Path(spec).is_file():
        return bb.box_from_spec(_read_json(spec))
    return bb.box_from_spec(spec)


def cmd_blackbox(args) -> int:
    plan = _load_plan(args)
    boxes = [_load_box(s) for s in (args.box or ["identity"])]
    rng = np.random.default_rng(args.seed)
    rhos = [random_density_matrix(4, rng) for _ in range(args.checks)]
    obs = [random_observable(4, rng) for _ in range(args.checks)]
    if args.state:
        rhos.append(parse_state(args.state, 2))
        obs.append(parse_observable(args.obs, 2))
    report = bb.build_blackbox_execution(plan, boxes, np.array(rhos), np.array(obs), tol=args.tol)
    out = {
        "plan": bb.plan_to_json(plan, args.seed),
        "boxes": [b.name for b in boxes],
        "overhead": bb.blackbox_overhead(plan),
        "one_norm": report.overhead,
        "terms": report.n_terms,
        "checks": len(rhos),
        "max_error": report.max_error,
        "passed": report.passed,
    }
    if args.state:
        out["exact"] = float(report.exact[-1])
    if args.shots:
        if not args.state:
            raise InputError("--shots needs --state and --obs")
        res = bb.estimate_blackbox(plan, boxes, rhos[-1], obs[-1], args.shots, args.seed, args.workers)
        out["estimate"] = {"mean": res.mean, "stderr": res.stderr, "shots": res.shots, "seed": res.seed}
    _emit(out)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_haar_survey(args) -> int:
    s = haar_survey(args.samples, seed=args.seed, bins=args.bins, workers=args.workers)
    table = s.scaling_table(args.scaling)
    summary = {
        "samples": s.samples,
        "seed": args.seed,
        "mean": s.mean,
        "stderr": s.stderr,
        "min": s.min_gamma,
        "max": s.max_gamma,
        "scaling": [{"n": n, "single": a, "joint": b} for n, a, b in table],
    }
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count", "frequency"])
            for lo, hi, c, f in zip(s.edges[:-1], s.edges[1:], s.counts, s.frequencies):
                w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(c), f"{f:.8g}"])
            fh.write(f"# samples={s.samples} seed={args.seed} mean={s.mean:.8f} stderr={s.stderr:.8f} "
                     f"min={s.min_gamma:.8f} max={s.max_gamma:.8f}\n")
            fh.write("# n,single,joint\n")
            for n, a, b in table:
                fh.write(f"# {n},{a:.8g},{b:.8g}\n")
    _emit(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcut", description="Optimal cutting of two-qubit gates")
    sub = p.add_subparsers(dest="command", required=True)
    seed_help = "RNG seed (CLI > env:QCUT_SEED > 0)"

    g = sub.add_parser("gamma", help="sampling overhead of one or more gates")
    g.add_argument("gates", nargs="+", help="CNOT, CZ, SWAP, iSWAP, I, CRX:θ, CRZ:θ, Haar:seed or a matrix file")
    g.add_argument("--mode", choices=["single", "parallel", "regularized", "blackbox"], default="single")
    g.add_argument("--json", action="store_true", help="machine-readable output")
    g.set_defaults(func=cmd_gamma)

    k = sub.add_parser("kak", help="canonical decomposition of a gate as JSON")
    k.add_argument("gate")
    k.add_argument("--out", help="write JSON here instead of stdout")
    k.set_defaults(func=cmd_kak)

    d = sub.add_parser("decompose", help="build and verify a quasiprobability decomposition")
    d.add_argument("gates", nargs="+")
    d.add_argument("--mode", choices=["single", "parallel"], default="single")
    d.add_argument("--out", help="qpd-v1 JSON output path")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("simulate", help="Monte Carlo estimate from a qpd-v1 file")
    s.add_argument("qpd")
    s.add_argument("--state", required=True, help="product state like +0, or a density-matrix file")
    s.add_argument("--obs", required=True, help="Pauli string like ZZ, or a matrix file")
    s.add_argument("--shots", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=_default_seed(), help=seed_help)
    s.add_argument("--workers", type=int, default=1, help="results are reproducible per (seed, workers)")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("blackbox", help="verify (and optionally sample) the black-box cutting protocol")
    b.add_argument("plan", nargs="?", help="bbplan-v1 JSON file")
    b.add_argument("--gates", nargs="+", help="gate specs instead of a plan file")
    b.add_argument("--slots", help="gate/box order such as GXG (default: a box before each later gate)")
    b.add_argument("--box", action="append",
                   help="identity, swap, local:SEED, depolarizing:P, random:SEED or a JSON file; repeat per slot")
    b.add_argument("--checks", type=int, default=20, help="random (state, observable) pairs to verify")
    b.add_argument("--tol", type=float, default=1e-8)
    b.add_argument("--state")
    b.add_argument("--obs", default="ZZ")
    b.add_argument("--shots", type=int, default=0)
    b.add_argument("--seed", type=int, default=_default_seed(), help=seed_help)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_blackbox)

    h = sub.add_parser("haar-survey", help="histogram of gamma over Haar-random gates")
    h.add_argument("--samples", type=int, default=1_000_000)
    h.add_argument("--seed", type=int, default=_default_seed(), help=seed_help)
    h.add_argument("--bins", type=int, default=200)
    h.add_argument("--scaling", type=int, default=10, help="largest n in the scaling table")
    h.add_argument("--workers", type=int, default=1, help="does not change the result")
    h.add_argument("--out", help="CSV output path")
    h.set_defaults(func=cmd_haar_survey)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, GateSpecError, bb.BlackBoxError, ValueError) as exc:
        print(json.dumps({"error": str(exc), "kind": type(exc).__name__}), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
