"""Theoretical quantities of the OLion descent analysis, computed on real matrices.

All quantities derive from the thin SVD ``Z = U diag(sigma) V^T``, the polar
factor ``Q = U V^T`` and its sign pattern ``S = sign(Q)``.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import matcore

DIAG_COLUMNS = (
    "step", "block", "eps", "alpha", "rho", "phi",
    "fro_X", "spec_X", "nuc_X", "l1_X", "linf_X",
    "rms_D", "descent_residual", "lr",
)


def fmt(x):
    """17-significant-digit float formatting used by every CSV writer."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class IsotropyReport:
    r: int
    m_vector: np.ndarray
    m_bar: float
    epsilon: float
    q_l1: float
    sigma_min: float = float("nan")


def isotropy_from_factors(U, V, sigma_min=float("nan")):
    """Diagonal-isotropy report for known orthonormal factors U (d1 x r), V (d2 x r)."""
    Q = U @ V.T
    S = np.sign(Q)
    r = U.shape[1]
    m = np.einsum("ik,ij,jk->k", U, S, V)
    q_l1 = float(np.sum(np.abs(Q)))
    m_bar = q_l1 / r
    eps = float(np.linalg.norm(m - m_bar)) * math.sqrt(r) / q_l1
    return IsotropyReport(r, m, m_bar, eps, q_l1, sigma_min)


def isotropy_epsilon(Z, rank_tol=matcore.RANK_TOL):
    """Tightest epsilon for which ``Z`` satisfies the diagonal-isotropy inequality."""
    svd = matcore.thin_svd(Z, rank_tol)
    return isotropy_from_factors(svd.U, svd.V, float(svd.singular_values[-1]))


def _spectral_stats(sigma):
    r = len(sigma)
    alpha = float(np.sum(sigma)) / r
    spread = float(np.linalg.norm(sigma - alpha))
    rho = spread / (alpha * math.sqrt(r))
    return alpha, spread, rho


def cancellation_audit(Z, rank_tol=matcore.RANK_TOL):
    """Both sides of the cancellation-aware bound plus the Cauchy-Schwarz bound.

    ``identity_residual`` compares the dense inner product <Z - alpha Q, S>
    with its diagonal form <sigma - alpha 1, m - m_bar 1>.
    """
    Z = matcore.as_matrix(Z)
    svd = matcore.thin_svd(Z, rank_tol)
    rep = isotropy_from_factors(svd.U, svd.V)
    sigma = svd.singular_values
    alpha, spread, _ = _spectral_stats(sigma)
    Q = svd.U @ svd.V.T
    S = np.sign(Q)
    E = Z - alpha * Q
    dense = float(np.sum(E * S))
    diag_form = float(np.dot(sigma - alpha, rep.m_vector - rep.m_bar))
    return {
        "lhs": abs(dense),
        "rhs": rep.epsilon * rep.q_l1 / math.sqrt(rep.r) * spread,
        "cs_rhs": float(np.linalg.norm(E)) * float(np.linalg.norm(S)),
        "identity_residual": abs(dense - diag_form),
        "epsilon": rep.epsilon,
        "r": rep.r,
    }


def stationarity_phi(Z, rank_tol=matcore.RANK_TOL):
    """alpha, rho and the stationarity measure ||Q||_1 alpha (1 - eps rho)."""
    svd = matcore.thin_svd(Z, rank_tol)
    rep = isotropy_from_factors(svd.U, svd.V, float(svd.singular_values[-1]))
    alpha, _, rho = _spectral_stats(svd.singular_values)
    phi = rep.q_l1 * alpha * (1.0 - rep.epsilon * rho)
    return {"alpha": alpha, "rho": rho, "phi": phi, "epsilon": rep.epsilon, "q_l1": rep.q_l1, "r": rep.r}


def descent_audit(f_before, f_after, eta, phi, L, d1, d2):
    """Slack in the per-step descent inequality; <= 0 certifies the step."""
    return f_after - (f_before - eta * phi + 0.5 * L * eta * eta * d1 * d2)


def summed_descent_bound(etas, phis, f0, f_inf, L, sizes):
    """Both sides of the telescoped bound sum eta*Phi <= f0 - f_inf + L/2 * d1d2 * sum eta^2.

    ``sizes`` is the total parameter count d1*d2 (summed over blocks).
    """
    etas = np.asarray(etas, dtype=float)
    lhs = float(np.sum(etas * np.asarray(phis, dtype=float)))
    rhs = f0 - f_inf + 0.5 * L * sizes * float(np.sum(etas**2))
    return lhs, rhs


@dataclass
class DiagnosticsRecord:
    step: int
    block: str
    eps: float
    alpha: float
    rho: float
    phi: float
    fro_X: float
    spec_X: float
    nuc_X: float
    l1_X: float
    linf_X: float
    rms_D: float
    descent_residual: float
    lr: float

    def row(self):
        return [str(self.step), self.block] + [fmt(getattr(self, c)) for c in DIAG_COLUMNS[2:]]


def block_record(step, name, X, artifacts, lr, descent_residual=float("nan")):
    """Diagnostics for one block: norms of X, RMS of D and isotropy of G_tilde."""
    norms = matcore.norm_suite(X)
    D = artifacts.D
    rms_D = math.sqrt(float(np.mean(D * D)))
    nan = float("nan")
    eps = alpha = rho = phi = nan
    G = artifacts.G_tilde
    if min(G.shape) > 1 and np.any(G):
        st = stationarity_phi(G)
        eps, alpha, rho, phi = st["epsilon"], st["alpha"], st["rho"], st["phi"]
    return DiagnosticsRecord(
        step, name, eps, alpha, rho, phi,
        norms["frobenius"], norms["spectral"], norms["nuclear"], norms["l1"], norms["linf"],
        rms_D, descent_residual, lr,
    )


class TrajectoryRecorder:
    """Append-only collector of per-block diagnostics at a fixed step interval."""

    def __init__(self, interval=10, blocks=None):
        if interval < 1:
            raise ValueError("interval must be >= 1")
        self.interval = interval
        self.blocks = None if blocks is None else set(blocks)
        self.records = []

    def due(self, step):
        return step % self.interval == 0

    def record_trajectory(self, step, params, step_artifacts, lr, descent_residual=float("nan")):
        if not self.due(step):
            return []
        new = []
        for name, art in step_artifacts.items():
            if self.blocks is not None and name not in self.blocks:
                continue
            new.append(block_record(step, name, params[name], art, lr, descent_residual))
        self.records.extend(new)
        return new

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(DIAG_COLUMNS)
            for rec in self.records:
                w.writerow(rec.row())
