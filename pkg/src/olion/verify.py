"""Fast invariant checks behind the ``verify`` subcommand."""

import numpy as np

from . import diagnostics, geometry, matcore, problems
from .optimizers import HyperParams, Optimizer


def _polar_orthonormal(rng):
    M = rng.standard_normal((40, 12))
    P = matcore.polar_factor_exact(M)
    return np.linalg.norm(P.T @ P - np.eye(12)) < 1e-10


def _polar_scale_invariant(rng):
    M = rng.standard_normal((20, 10))
    return np.max(np.abs(matcore.polar_factor_exact(7.5 * M) - matcore.polar_factor_exact(M))) < 1e-10


def _ns_scale_invariant(rng):
    M = rng.standard_normal((24, 12))
    return np.max(np.abs(matcore.newton_schulz(3.0 * M, 5) - matcore.newton_schulz(M, 5))) < 1e-6


def _trace_identity(rng):
    Q = rng.standard_normal((30, 20))
    return abs(matcore.inner(Q, matcore.sign_map(Q)) - np.abs(Q).sum()) <= 1e-12 * np.abs(Q).sum()


def _proof_identity(rng):
    Z = rng.standard_normal((48, 24))
    a = diagnostics.cancellation_audit(Z)
    return a["identity_residual"] <= 1e-8 * max(a["lhs"], 1e-300) + 1e-12 and a["lhs"] <= a["rhs"] + 1e-8


def _m_sum(rng):
    Z = rng.standard_normal((32, 16))
    rep = diagnostics.isotropy_epsilon(Z)
    return abs(rep.m_vector.sum() - rep.q_l1) <= 1e-8 * rep.q_l1


def _project_A_maximal(rng):
    Z = rng.standard_normal((16, 8))
    best = matcore.inner(geometry.project_A(Z), Z)
    for _ in range(50):
        X = matcore.polar_factor_exact(rng.standard_normal((16, 8)))
        if matcore.inner(X, Z) > best + 1e-9:
            return False
    return True


def _weight_decay(rng):
    hp = HyperParams(lr=0.1, weight_decay=0.3, beta1=0.0, beta2=0.0)
    X0 = rng.standard_normal((5, 4))
    params = {"X": X0.copy()}
    opt = Optimizer("olion", hp)
    for _ in range(7):
        opt.step(params, {"X": np.zeros((5, 4))}, 0.1)
    expected = X0.copy()
    for _ in range(7):
        expected = expected - 0.3 * 0.1 * expected
    return np.array_equal(params["X"], expected)


def _gradients(rng):
    q = problems.build_problem("quadratic")
    s = problems.build_problem("softmax")
    m = problems.build_problem("mlp", init_scale=1.0)
    return (problems.finite_difference_check(q, q.init(0)) < 1e-7
            and problems.finite_difference_check(s, s.init(0)) < 1e-5
            and problems.finite_difference_check(m, m.init(0)) < 1e-4)


CHECKS = [
    ("polar factor has orthonormal columns", _polar_orthonormal),
    ("polar factor is positive-scale invariant", _polar_scale_invariant),
    ("Newton-Schulz output is positive-scale invariant", _ns_scale_invariant),
    ("trace identity <Q, sign Q> = ||Q||_1", _trace_identity),
    ("diagonal correlations sum to ||Q||_1", _m_sum),
    ("cancellation identity and bound", _proof_identity),
    ("polar factor maximizes the spectral-set score", _project_A_maximal),
    ("decoupled weight decay on zero gradients", _weight_decay),
    ("analytic gradients match finite differences", _gradients),
]


def run_checks(seed=0):
    """Return a list of ``(name, passed)``."""
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            ok = bool(fn(rng))
        except Exception:  # a crash counts as a failed invariant
            ok = False
        results.append((name, ok))
    return results
