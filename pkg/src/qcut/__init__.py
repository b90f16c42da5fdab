"""Optimal sampling-overhead cutting of two-qubit gates."""

from .blackbox import (
    BlackBoxChannel,
    ProtocolPlan,
    blackbox_overhead,
    build_blackbox_execution,
    estimate_blackbox,
    pauli_commutation_sign,
    term_sign_correction,
)
from .gamma import (
    choi_lower_bound,
    gamma_parallel,
    gamma_regularized,
    gamma_single,
    haar_survey,
    shots_required,
    toffoli_bounds,
)
from .kak import KAK, kak_decompose, kak_reconstruct
from .qpd import QPD, LocalInstrument, QPDTerm, build_parallel_cut_qpd, build_single_cut_qpd, sample_term, verify_qpd
from .simulator import EstimatorResult, calibrate_overhead, estimate, exact_expectation, run_term_exact

__all__ = [
    "BlackBoxChannel",
    "EstimatorResult",
    "KAK",
    "LocalInstrument",
    "ProtocolPlan",
    "QPD",
    "QPDTerm",
    "blackbox_overhead",
    "build_blackbox_execution",
    "build_parallel_cut_qpd",
    "build_single_cut_qpd",
    "calibrate_overhead",
    "choi_lower_bound",
    "estimate",
    "estimate_blackbox",
    "exact_expectation",
    "gamma_parallel",
    "gamma_regularized",
    "gamma_single",
    "haar_survey",
    "kak_decompose",
    "kak_reconstruct",
    "pauli_commutation_sign",
    "run_term_exact",
    "sample_term",
    "shots_required",
    "term_sign_correction",
    "toffoli_bounds",
    "verify_qpd",
]
