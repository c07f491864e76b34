"""Maximizers of the linear score over the spectral and l-infinity sets.

``project_A`` maps onto column-orthonormal matrices (polar factor) and
``project_B`` onto the sign set scaled by 1/sqrt(d1).  Their composition,
without the 1/sqrt(d1) factor, is the OLion direction.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import matcore
from .errors import ZeroMatrix


class ConstraintSet(Enum):
    SPECTRAL = "A"
    LINF = "B"


def parse_mode(mode):
    """Normalize a polar mode spec to ``("exact", None)`` or ``("newton_schulz", K)``.

    Accepts ``"exact"``, ``"newton_schulz"`` (K=5), ``("newton_schulz", K)``
    or an int K.
    """
    if mode is None or mode == "exact":
        return "exact", None
    if mode == "newton_schulz":
        return "newton_schulz", 5
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        return "newton_schulz", int(mode)
    if isinstance(mode, (tuple, list)) and len(mode) == 2 and mode[0] == "newton_schulz":
        return "newton_schulz", int(mode[1])
    raise ValueError(f"unknown polar mode {mode!r}")


def project_A(Z, mode="exact"):
    kind, K = parse_mode(mode)
    if kind == "exact":
        return matcore.polar_factor_exact(Z)
    return matcore.newton_schulz(Z, K)


def project_B(Z, d1=None):
    Z = matcore.as_matrix(Z)
    if d1 is None:
        d1 = Z.shape[0]
    return matcore.sign_map(Z) / np.sqrt(d1)


def olion_direction(Z, mode="exact"):
    # 1/sqrt(d1) from project_B is left to the optimizer's RMS alignment
    return matcore.sign_map(project_A(Z, mode))


@dataclass(frozen=True)
class DirectionReport:
    direction: np.ndarray
    dist_to_A: float
    entry_uniformity: float


def hadamard_proximity(D):
    """How close ``D`` is to a scaled partial Hadamard matrix.

    ``dist_to_A`` is ||N^T N - I||_F for ``N`` = D (transposed if wide) with
    unit-norm columns; ``entry_uniformity`` is the coefficient of variation of
    the nonzero |entries|.
    """
    D = matcore.as_matrix(D)
    A = np.abs(D)
    nz = A[A > 0]
    if nz.size == 0:
        raise ZeroMatrix("direction is identically zero")
    N = D.T if D.shape[0] < D.shape[1] else D
    norms = np.linalg.norm(N, axis=0)
    norms[norms == 0] = 1.0
    N = N / norms
    dist = float(np.linalg.norm(N.T @ N - np.eye(N.shape[1])))
    uniformity = float(np.std(nz) / np.mean(nz))
    return DirectionReport(D, dist, uniformity)
