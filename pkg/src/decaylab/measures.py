"""Weighted Schur-type measures on finite lattice windows.

``sqw_measure`` is the Grochenig-Schur q-measure

    max( sup_i (sum_j |a_ij|^q w(i,j)^q)^(1/q),  sup_j (sum_i ...)^(1/q) )

with ``0^q = 0`` for every ``q > 0``.  For ``q < 1`` the q-th power is the
natural (q-subadditive) quantity, and is returned alongside the measure to
avoid amplifying rounding through the ``1/q`` exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, svds

from .weights import WeightFunction, distance_matrix

__all__ = [
    "MeasureReport",
    "QMeasureSpec",
    "block_qnorm",
    "interior_sqw_measure",
    "interior_window",
    "l2_operator_norm",
    "measure_report",
    "q_limit_probe",
    "s01_measure",
    "sqw_measure",
    "sqw_measure_pow",
    "weighted_line_sums",
]

# dense SVD below this size, Lanczos bidiagonalisation above
_DENSE_NORM_LIMIT = 600


@dataclass(frozen=True)
class QMeasureSpec:
    q: float
    weight: WeightFunction = field(default_factory=WeightFunction.trivial)

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("q must be positive; use s01 for the ideal measure")

    def to_dict(self):
        return {"q": self.q, "weight": self.weight.to_dict()}


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    return A


def _log_weighted_abs(A, weight):
    """``log(|a_ij| w(i,j))`` with ``-inf`` on exact zeros."""
    absA = np.abs(A)
    n, m = absA.shape
    if n != m:
        raise ValueError("measures are defined for square lattice matrices")
    logw = weight.log_of_distance(distance_matrix(n))
    with np.errstate(divide="ignore"):
        out = np.log(absA) + logw
    return out


def weighted_line_sums(A, spec: QMeasureSpec):
    """Row and column sums of ``(|a_ij| w(i,j))^q`` (``q < inf``)."""
    A = _as_matrix(A)
    if math.isinf(spec.q):
        raise ValueError("line sums are not defined for q = inf")
    logv = _log_weighted_abs(A, spec.weight)
    with np.errstate(over="ignore"):
        powered = np.exp(spec.q * logv)
    # identical reduction order for rows and columns keeps the measure of A^H
    # bit-identical to that of A
    return powered.sum(axis=1), np.ascontiguousarray(powered.T).sum(axis=1)


def sqw_measure_pow(A, spec: QMeasureSpec, window=None) -> float:
    """q-th power of the S_{q,w} measure.

    ``window`` optionally restricts the supremum to the rows/columns with
    positions in the given index array (sums still run over the full window).
    """
    A = _as_matrix(A)
    if math.isinf(spec.q):
        raise ValueError("the q-th power is undefined for q = inf")
    rows, cols = weighted_line_sums(A, spec)
    if window is not None:
        rows, cols = rows[window], cols[window]
    if rows.size == 0:
        return 0.0
    return float(max(rows.max(), cols.max()))


def sqw_measure(A, spec: QMeasureSpec, window=None) -> float:
    """S_{q,w} measure of ``A``; ``q = inf`` gives ``sup |a_ij| w(i,j)``."""
    A = _as_matrix(A)
    if math.isinf(spec.q):
        logv = _log_weighted_abs(A, spec.weight)
        if logv.size == 0:
            return 0.0
        if window is not None:
            return float(np.exp(max(logv[window, :].max(), logv[:, window].max())))
        return float(np.exp(logv.max()))
    return sqw_measure_pow(A, spec, window) ** (1.0 / spec.q)


def interior_window(n: int, fraction: float = 0.5) -> np.ndarray:
    """Positions of sites ``|i| <= fraction * N`` in a window of ``n = 2N+1``."""
    N = (n - 1) // 2
    half = int(math.floor(fraction * N))
    return np.arange(N - half, N + half + 1)


def interior_sqw_measure(A, spec: QMeasureSpec, fraction: float = 0.5) -> float:
    """S_{q,w} measure with the supremum restricted to interior rows/columns."""
    A = _as_matrix(A)
    return sqw_measure(A, spec, window=interior_window(A.shape[0], fraction))


def s01_measure(A) -> int:
    """Largest number of nonzero entries in any row or column (exact zeros)."""
    A = _as_matrix(A)
    if A.size == 0:
        return 0
    nz = A != 0
    return int(max(nz.sum(axis=1).max(), nz.sum(axis=0).max()))


def q_limit_probe(A, weight: WeightFunction, q_list):
    """``[(q, ||A||_{S_{q,w}}^q) for q in q_list]``; tends to ``s01_measure(A)``."""
    A = _as_matrix(A)
    return [(float(q), sqw_measure_pow(A, QMeasureSpec(float(q), weight))) for q in q_list]


def l2_operator_norm(A, rtol: float = 1e-10, maxiter: int | None = None) -> float:
    """Largest singular value.

    Hermitian matrices use their eigenvalues, other small matrices a dense SVD.  Larger ones use ARPACK's Lanczos
    iteration with relative tolerance ``rtol``; failure to converge raises
    ``RuntimeError`` carrying the best estimate.
    """
    A = _as_matrix(A)
    if A.size == 0:
        return 0.0
    if not np.any(A):
        return 0.0
    if A.shape[0] == A.shape[1] and np.array_equal(A, A.conj().T):
        return float(np.abs(np.linalg.eigvalsh(A)).max())
    if min(A.shape) <= _DENSE_NORM_LIMIT:
        return float(np.linalg.norm(A, 2))
    try:
        s = svds(A, k=1, tol=rtol, maxiter=maxiter, return_singular_vectors=False,
                 random_state=0)
    except ArpackNoConvergence as exc:
        raise RuntimeError(
            f"l2 norm iteration did not converge; partial values {exc.eigenvalues}") from exc
    return float(s[0])


def block_qnorm(blocks, spec: QMeasureSpec) -> float:
    """``(sum_ij ||a_ij||_{S_{q,w}}^q)^(1/q)`` over an ``n x n`` array of blocks."""
    shapes = {np.shape(b) for row in blocks for b in row}
    if len(shapes) != 1:
        raise ValueError(f"mismatched block sizes: {sorted(shapes)}")
    total = 0.0
    for row in blocks:
        for b in row:
            total += sqw_measure_pow(b, spec)
    return total ** (1.0 / spec.q)


@dataclass(frozen=True)
class MeasureReport:
    sqw: float
    sqw_pow_q: float
    s01: int
    l2_norm: float
    spec: QMeasureSpec
    N: int

    def to_dict(self):
        return {
            "q": self.spec.q,
            "weight": self.spec.weight.to_dict(),
            "sqw": self.sqw,
            "sqw_pow_q": self.sqw_pow_q,
            "s01": self.s01,
            "l2_norm": self.l2_norm,
            "N": self.N,
        }


def measure_report(A, spec: QMeasureSpec) -> MeasureReport:
    A = _as_matrix(A)
    if math.isinf(spec.q):
        sqw = sqw_measure(A, spec)
        pow_q = sqw
    else:
        pow_q = sqw_measure_pow(A, spec)
        sqw = pow_q ** (1.0 / spec.q)
    return MeasureReport(sqw=sqw, sqw_pow_q=pow_q, s01=s01_measure(A),
                         l2_norm=l2_operator_norm(A), spec=spec,
                         N=(A.shape[0] - 1) // 2)
