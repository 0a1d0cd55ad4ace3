"""Lyapunov equation ``A P + P A* + Q = 0``: direct and iterative solvers and
the q-norm bound on its solution.

The iterative solver builds ``P`` block by block from the integral
representation ``P = int_0^inf e^{tA} Q e^{tA*} dt``.  With
``h = 1/||A||_2`` and ``F = e^{hA}``,

    P0  = int_0^h e^{tA} Q e^{tA*} dt
        = h sum_{m,n>=0} (hA)^m Q (hA*)^n / ((m+n+1) m! n!),
    P_m = F P_{m-1} F* + P0,

so that ``P_m`` is the integral over ``[0, (m+1)h]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_continuous_lyapunov

from .errors import BoundVacuousError, NumericalError, ValidationError
from .measures import QMeasureSpec, l2_operator_norm, sqw_measure_pow
from .stability import (StabilityCertificate, matrix_exponential,
                        semigroup_bound_params, spectral_abscissa)

__all__ = [
    "LyapunovBound",
    "LyapunovSolution",
    "initial_block",
    "initial_block_quadrature",
    "log_pi0",
    "lyapunov_qnorm_bound",
    "lyapunov_residual",
    "omega_k",
    "solve_lyapunov_direct",
    "solve_lyapunov_iterative",
]

SERIES_RTOL = 1e-16
# above this many terms the Pi0 sum is replaced by an integral upper bound
_DIRECT_SUM_LIMIT = 2 * 10 ** 7
_CHUNK = 10 ** 6


@dataclass
class LyapunovSolution:
    P: np.ndarray
    method: str
    iterations: int
    residual: float

    def to_dict(self):
        return {"method": self.method, "iterations": self.iterations,
                "residual": self.residual, "size": int(self.P.shape[0]),
                "min_eigenvalue": float(np.linalg.eigvalsh(self.P).min()) if self.P.size else 0.0}


def _check(A, Q):
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("A must be square")
    if Q.shape != A.shape:
        raise ValidationError(f"Q has shape {Q.shape}, expected {A.shape}")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValidationError("Q must be symmetric")
    a = spectral_abscissa(A)
    if not a < 0:
        raise ValidationError(f"A is not stable (spectral abscissa {a:.6g})")
    return A, Q, a


def lyapunov_residual(A, P, Q) -> float:
    """``||A P + P A* + Q||_F / ||Q||_F`` (absolute when ``Q = 0``)."""
    r = np.linalg.norm(A @ P + P @ A.T + Q)
    nq = np.linalg.norm(Q)
    return float(r / nq) if nq > 0 else float(r)


def _sym(P):
    return 0.5 * (P + P.T)


def solve_lyapunov_direct(A, Q) -> LyapunovSolution:
    """Dense solve: eigendecomposition for symmetric ``A``, Bartels-Stewart
    (``scipy.linalg.solve_continuous_lyapunov``) otherwise."""
    A, Q, _ = _check(A, Q)
    if np.array_equal(A, A.T):
        lam, V = np.linalg.eigh(A)
        P = _sym(V @ ((V.T @ Q @ V) / -(lam[:, None] + lam[None, :])) @ V.T)
    else:
        P = _sym(solve_continuous_lyapunov(A, -Q))
    if not np.all(np.isfinite(P)):
        raise NumericalError("Lyapunov solve produced non-finite values")
    res = lyapunov_residual(A, P, Q)
    if res > 1e-8:
        raise NumericalError(f"Lyapunov residual {res:.3g} exceeds 1e-8")
    return LyapunovSolution(P=P, method="direct", iterations=0, residual=res)


def initial_block(A, Q, norm_A: float | None = None) -> np.ndarray:
    """``P0 = int_0^{1/||A||} e^{tA} Q e^{tA*} dt`` by its double power series.

    Terms are grouped by total degree ``s = m + n``; since the normalised
    matrix has unit norm the degree-``s`` group is bounded by ``2^s / s!``
    times ``||Q||``, and the series stops once that drops below 1e-16.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if norm_A is None:
        norm_A = l2_operator_norm(A)
    if norm_A == 0:
        return Q.copy()
    h = 1.0 / norm_A
    At = h * A
    S = 0
    while 2.0 ** S / math.factorial(S) >= SERIES_RTOL:
        S += 1
    # right factors R_m = sum_n (A~*)^n / (n! (m+n+1)) for m + n <= S
    n_dim = A.shape[0]
    powers = [np.eye(n_dim)]
    for _ in range(S):
        powers.append(powers[-1] @ At.T)
    P0 = np.zeros_like(Q)
    left = Q.copy()  # A~^m Q / m!
    for m in range(S + 1):
        R = np.zeros_like(Q)
        for n in range(S - m + 1):
            R += powers[n] / (math.factorial(n) * (m + n + 1))
        P0 += left @ R
        left = At @ left / (m + 1)
    return _sym(h * P0)


def initial_block_quadrature(A, Q, norm_A: float | None = None, nodes: int = 64) -> np.ndarray:
    """Gauss-Legendre evaluation of the same integral (independent check)."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if norm_A is None:
        norm_A = l2_operator_norm(A)
    h = 1.0 / norm_A
    x, wts = np.polynomial.legendre.leggauss(nodes)
    out = np.zeros_like(Q)
    for xi, wi in zip(x, wts):
        F = matrix_exponential(A, 0.5 * h * (xi + 1.0))
        out += wi * (F @ Q @ F.T)
    return _sym(0.5 * h * out)


def solve_lyapunov_iterative(A, Q, tol: float = 1e-12, max_iter: int = 10 ** 6) -> LyapunovSolution:
    """Fixed-point iteration ``P_m = F P_{m-1} F* + P0`` with ``F = e^{A/||A||}``.

    Stops when the Frobenius norm of the increment ``F^m P0 F*^m`` falls
    below ``tol``.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    A, Q, _ = _check(A, Q)
    norm_A = l2_operator_norm(A)
    P0 = initial_block(A, Q, norm_A)
    F = matrix_exponential(A, 1.0 / norm_A)
    P = P0.copy()
    inc = P0
    it = 0
    while np.linalg.norm(inc) >= tol:
        if it >= max_iter:
            raise NumericalError(f"iteration did not reach tol={tol:g} in {max_iter} steps")
        inc = F @ inc @ F.T
        P += inc
        it += 1
    P = _sym(P)
    return LyapunovSolution(P=P, method="iterative", iterations=it,
                            residual=lyapunov_residual(A, P, Q))


def omega_k(k, theta: float):
    """Exponent ``omega_k`` of the Lyapunov bound (vectorised in ``k``)."""
    if not 0 < theta <= 1:
        raise ValidationError("theta must lie in (0, 1]")
    k = np.asarray(k, dtype=float)
    if theta == 1:
        out = np.log2(1.0 + 2.0 * k)
    else:
        out = (2.0 * k) ** math.log2(2.0 - theta) / (1.0 - theta)
    return float(out) if np.ndim(out) == 0 else out


def _log_series(theta: float, L: float, c: float):
    """``log sum_{k>=1} exp(2 omega_k L - c k)`` and how it was obtained.

    The summand is log-concave in ``k``.  When its peak lies within reach it
    is summed term by term until the geometric tail bound drops below
    1e-16 relative; otherwise the sum is bounded above by
    ``int_0^inf + max``, which holds for unimodal summands.
    """
    def g(k):
        return 2.0 * omega_k(k, theta) * L - c * k

    if theta == 1:
        k_peak = max(0.0, (4.0 * L / (c * math.log(2.0)) - 1.0) / 2.0)
    else:
        p = math.log2(2.0 - theta)
        k_peak = (2.0 * L * p * 2.0 ** p / ((1.0 - theta) * c)) ** (1.0 / (1.0 - p))
    if k_peak < _DIRECT_SUM_LIMIT:
        total = -math.inf
        start = 1
        while True:
            k = np.arange(start, start + _CHUNK, dtype=float)
            terms = g(k)
            total = np.logaddexp(total, np.logaddexp.reduce(terms))
            last, prev = terms[-1], terms[-2]
            slope = last - prev
            if k[-1] > k_peak and slope < 0:
                # concavity: later terms shrink at least geometrically
                tail = last + slope - math.log1p(-math.exp(slope))
                if tail - total < math.log(SERIES_RTOL):
                    return float(total), "sum"
            start += _CHUNK
            if start > 50 * _DIRECT_SUM_LIMIT:
                raise BoundVacuousError("bound vacuous: Pi0 series did not settle")
    g_peak = g(k_peak)

    def scaled(x):
        return math.exp(g(x) - g_peak)

    width = max(1.0, k_peak)
    left, _ = quad(scaled, 0.0, k_peak, limit=200)
    right, _ = quad(scaled, k_peak, k_peak + 50 * width, limit=200)
    # the scaled tail beyond 50 peak-widths is negligible for a concave exponent
    return float(g_peak + math.log(left + right + 1.0)), "integral-bound"


def log_pi0(M: float, log_Xi0: float, q: float, E: float, D: float, theta: float,
            alpha: float, norm_A: float, K0: float = 1.0):
    """``log Pi0`` and the evaluation mode (``"sum"`` or ``"integral-bound"``)."""
    L = math.log(2.0 * D) + q * theta * math.log(E)
    c = 2.0 * alpha * q / norm_A
    log_series, mode = _log_series(theta, L, c)
    log_front = 2 * q * math.log(K0) + 2 * q * math.log(M) + 2 * log_Xi0 + 2 * q * E
    return float(np.logaddexp(0.0, log_front + log_series)), mode


@dataclass(frozen=True)
class LyapunovBound:
    log_value: float
    log_Xi0: float
    log_Pi0: float
    mode: str

    @property
    def value(self) -> float:
        if self.log_value > 709.0:
            raise BoundVacuousError(
                f"bound vacuous: log of the bound is {self.log_value:.6g}, beyond double range")
        return math.exp(self.log_value)

    def to_dict(self):
        return {"log_bound": self.log_value, "log_Xi0": self.log_Xi0,
                "log_Pi0": self.log_Pi0, "pi0_mode": self.mode,
                "bound": self.value if self.log_value <= 709.0 else None}


def lyapunov_qnorm_bound(A, Q, spec: QMeasureSpec, cert: StabilityCertificate,
                         as_log: bool = False):
    """Upper bound on ``||P||_{S_{q,w}}^q`` for the Lyapunov solution.

    ``Xi0^2 Pi0 ||Q||^q / ||A||_2^q``.  Returns the float value, raising
    ``BoundVacuousError`` when it exceeds the double range, or the full
    :class:`LyapunovBound` record when ``as_log`` is set.
    """
    A = np.asarray(A, dtype=float)
    p = semigroup_bound_params(A, spec)
    log_Pi0, mode = log_pi0(p.M, p.log_Xi0, p.q, cert.E, p.D, p.theta, cert.alpha, p.norm_A, p.K0)
    qpow = sqw_measure_pow(Q, spec)
    if qpow == 0:
        bound = LyapunovBound(-math.inf, p.log_Xi0, log_Pi0, mode)
    else:
        log_value = 2 * p.log_Xi0 + log_Pi0 + math.log(qpow) - p.q * math.log(p.norm_A)
        if not math.isfinite(log_value):
            raise BoundVacuousError("bound vacuous: non-finite log bound")
        bound = LyapunovBound(log_value, p.log_Xi0, log_Pi0, mode)
    return bound if as_log else bound.value
