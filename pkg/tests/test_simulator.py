import numpy as np
import pytest
from scipy.stats import chi2_contingency

from conftest import PLUS, ZERO, product_state
from qcut.gates import CNOT, SWAP, crx
from qcut.kak import kak_decompose
from qcut.linalg import X, Z, haar_random_unitary, kron, random_density_matrix, random_observable
from qcut.qpd import build_parallel_cut_qpd, build_single_cut_qpd, qpd_for_unitaries
from qcut.simulator import (
    DensityState,
    branch_probabilities,
    build_shot_model,
    calibrate_overhead,
    estimate,
    estimate_from_model,
    exact_expectation,
    qpd_expectation,
    run_shot,
    run_term_exact,
)

ZZ = kron(Z, Z)
PLUS0 = product_state(PLUS, ZERO)


def test_exact_expectation_examples():
    assert exact_expectation(np.eye(4), product_state(ZERO, ZERO), kron(Z, np.eye(2))) == pytest.approx(1)
    assert exact_expectation(CNOT, PLUS0, ZZ) == pytest.approx(1)


def test_exact_expectation_statevector_oracle(rng):
    u = haar_random_unitary(4, rng)
    psi = haar_random_unitary(4, rng)[:, 0]
    obs = random_observable(4, rng)
    phi = u @ psi
    ref = np.real(phi.conj() @ obs @ phi)
    assert abs(exact_expectation(u, np.outer(psi, psi.conj()), obs) - ref) < 1e-12


def test_non_hermitian_observable_rejected():
    with pytest.raises(ValueError):
        exact_expectation(CNOT, PLUS0, np.triu(np.ones((4, 4))))


def test_density_state_apply_matches_dense(rng):
    rho = random_density_matrix(8, rng)
    u = haar_random_unitary(4, rng)
    s = DensityState(rho, ["a", "b", "c"])
    s.apply(u, ["c", "a"])
    # u acts on (c, a): move c to the front, apply, move back
    from qcut.gates import embed

    full = embed(u, [2, 0], 3)
    assert np.allclose(s.matrix()[0], full @ rho @ full.conj().T)
    s.trace_out("b")
    assert s.labels == ["a", "c"]


@pytest.mark.parametrize("gates", [[CNOT], [SWAP], [crx(0.7)], "haar", "pair"])
def test_completeness(gates, rng):
    if gates == "haar":
        gates = [haar_random_unitary(4, rng)]
    elif gates == "pair":
        gates = [haar_random_unitary(4, rng), CNOT]
    q = qpd_for_unitaries(gates)
    d = q.dim
    for _ in range(10):
        rho = random_density_matrix(d, rng)
        obs = random_observable(d, rng)
        assert abs(qpd_expectation(q, rho, obs) - exact_expectation(q.target, rho, obs)) < 1e-9


def test_identity_qpd_single_term(rng):
    q = build_single_cut_qpd(kak_decompose(np.eye(4)))
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    assert run_term_exact(q.terms[0], rho, obs) == pytest.approx(exact_expectation(np.eye(4), rho, obs))


def test_branch_probabilities_and_boundedness(rng):
    q = build_single_cut_qpd(kak_decompose(haar_random_unitary(4, rng)))
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    for t in q.terms:
        probs = [p for _, _, p in branch_probabilities(t, rho)]
        assert abs(sum(probs) - 1) < 1e-10
        assert abs(run_term_exact(t, rho, obs)) <= 1 + 1e-12


def test_run_term_exact_dimension_mismatch():
    q = build_single_cut_qpd(kak_decompose(CNOT))
    with pytest.raises(ValueError):
        run_term_exact(q.terms[0], np.eye(8) / 8, np.eye(8))


def test_estimate_cnot():
    q = build_single_cut_qpd(kak_decompose(CNOT))
    r = estimate(q, PLUS0, ZZ, 100_000, seed=3)
    assert r.gamma_used == pytest.approx(3)
    assert abs(r.mean - 1) <= 4 * r.stderr


def test_estimate_deterministic_and_worker_streams():
    q = build_single_cut_qpd(kak_decompose(CNOT))
    a = estimate(q, PLUS0, ZZ, 20_000, seed=11)
    b = estimate(q, PLUS0, ZZ, 20_000, seed=11)
    assert a == b
    c = estimate(q, PLUS0, ZZ, 20_000, seed=11, workers=3)
    d = estimate(q, PLUS0, ZZ, 20_000, seed=11, workers=3)
    assert c == d and c.shots == 20_000


def test_invalid_shots():
    q = build_single_cut_qpd(kak_decompose(CNOT))
    with pytest.raises(ValueError):
        estimate(q, PLUS0, ZZ, 0)


def test_unbounded_observable_rejected():
    q = build_single_cut_qpd(kak_decompose(CNOT))
    with pytest.raises(ValueError):
        estimate(q, PLUS0, 2 * ZZ, 10)


def test_gamma_one_binomial_stderr():
    q = build_single_cut_qpd(kak_decompose(np.eye(4)))
    obs = kron(X, np.eye(2))
    rho = product_state(np.array([np.cos(0.4), np.sin(0.4)]), ZERO)
    m = exact_expectation(np.eye(4), rho, obs)
    r = estimate(q, rho, obs, 40_000, seed=2)
    predicted = np.sqrt((1 - m**2) / 40_000)
    assert abs(r.stderr / predicted - 1) < 0.2


def test_unbiased_over_repetitions(rng):
    q = build_single_cut_qpd(kak_decompose(haar_random_unitary(4, rng)))
    rho, obs = random_density_matrix(4, rng), random_observable(4, rng)
    exact = exact_expectation(q.target, rho, obs)
    model = build_shot_model(q.terms, q.weights, rho, obs)
    runs = [estimate_from_model(model, 10_000, seed=s) for s in range(100)]
    grand = np.mean([r.mean for r in runs])
    pooled = np.sqrt(np.mean([r.stderr**2 for r in runs]) / len(runs))
    assert abs(grand - exact) <= 4 * pooled


def test_staged_sampler_matches_literal_shots():
    q = build_parallel_cut_qpd([kak_decompose(crx(1.1))])
    rho = product_state(PLUS, PLUS)
    obs = kron(Z, X)
    model = build_shot_model(q.terms, q.weights, rho, obs)
    staged = estimate_from_model(model, 1, seed=0)  # exercise the path
    assert staged.shots == 1
    from qcut.simulator import sample_outcomes

    fast = sample_outcomes(model, 6000, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    slow = np.array([run_shot(q, rho, obs, rng) for _ in range(6000)])
    values = np.unique(np.round(np.concatenate([fast, slow]), 9))
    table = np.array([[np.sum(np.isclose(x, v)) for v in values] for x in (fast, slow)])
    table = table[:, table.sum(axis=0) > 0]
    assert chi2_contingency(table).pvalue > 1e-3


def test_stderr_scales_with_gamma():
    cnot = build_single_cut_qpd(kak_decompose(CNOT))
    swap = build_single_cut_qpd(kak_decompose(SWAP))
    ra = [estimate(cnot, PLUS0, ZZ, 20_000, seed=s).stderr for s in range(10)]
    rb = [estimate(swap, PLUS0, ZZ, 20_000, seed=s).stderr for s in range(10)]
    assert abs(np.mean(rb) / np.mean(ra) / (7 / 3) - 1) < 0.25


def test_calibrate_overhead_success_rate():
    q = build_single_cut_qpd(kak_decompose(CNOT))
    delta = 0.1
    model = build_shot_model(q.terms, q.weights, PLUS0, ZZ)
    hits = [calibrate_overhead(q, PLUS0, ZZ, 0.15, delta, seed=s, model=model)[1] for s in range(200)]
    assert np.mean(hits) >= 1 - delta - 0.05


def test_calibrate_gamma_one_and_ratio():
    ident = build_single_cut_qpd(kak_decompose(np.eye(4)))
    for seed in range(20):
        shots, ok = calibrate_overhead(ident, product_state(ZERO, ZERO), ZZ, 0.5, 0.2, seed=seed)
        assert ok and shots < 10
    cnot = build_single_cut_qpd(kak_decompose(CNOT))
    swap = build_single_cut_qpd(kak_decompose(SWAP))
    n_c, _ = calibrate_overhead(cnot, PLUS0, ZZ, 0.05, 0.05, seed=0)
    n_s, _ = calibrate_overhead(swap, PLUS0, ZZ, 0.05, 0.05, seed=0)
    assert n_s / n_c == pytest.approx(49 / 9, rel=1e-3)
