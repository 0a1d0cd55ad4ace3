"""Exponential stability certificates and q-norm bounds for ``e^{tA}``.

The semigroup bound is

    ||e^{tA}||^q <= C(t) e^{-alpha q t},
    C(t) = M^q Xi0 e^{qE} (2 D E^{q theta})^{omega(t)},

with ``Xi0 = sum_n K0^{nq} / (n!)^q (||A||_q / ||A||_2)^{nq}`` and

    omega(t) = (1 - theta)^{-1} (2 t ||A||_2)^{log2(2 - theta)}   (theta < 1)
    omega(t) = log2(1 + 2 t ||A||_2)                             (theta = 1).

Every factor is evaluated in log space; the bound overflows doubles long
before it stops being meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq, minimize_scalar

from .errors import NumericalError, ValidationError
from .measures import QMeasureSpec, l2_operator_norm, sqw_measure_pow
from .weights import admissibility_constants

__all__ = [
    "EnvelopeProfile",
    "SemigroupBoundParams",
    "StabilityCertificate",
    "envelope_profile",
    "fit_semigroup_bound",
    "log_semigroup_qnorm_bound",
    "log_xi0",
    "matrix_exponential",
    "omega",
    "semigroup_bound_params",
    "semigroup_qnorm_bound",
    "spectral_abscissa",
]

# relative size below which series terms are dropped
SERIES_RTOL = 1e-16


def _square(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("expected a square matrix")
    return A


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of ``A``."""
    A = _square(A)
    try:
        ev = np.linalg.eigvalsh(A) if np.array_equal(A, A.conj().T) else np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from None
    return float(ev.real.max())


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """``e^{tA}`` by scaling and squaring with a Pade core (``scipy.linalg.expm``)."""
    A = _square(A)
    if t < 0:
        raise ValidationError("t must be non-negative")
    if t == 0:
        return np.eye(A.shape[0], dtype=np.result_type(A, float))
    with np.errstate(over="ignore", invalid="ignore"):
        out = expm(t * A)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"matrix exponential overflowed at t={t:g}")
    return out


@dataclass(frozen=True)
class StabilityCertificate:
    """``||e^{tA}||_2 <= E e^{-alpha t}`` on every time in ``t_grid``."""

    abscissa: float
    E: float
    alpha: float
    t_grid: tuple

    def __post_init__(self):
        if not self.E >= 1:
            raise ValidationError("E must be >= 1")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")

    def to_dict(self):
        return {"abscissa": self.abscissa, "E": self.E, "alpha": self.alpha,
                "t_grid": list(self.t_grid)}


def fit_semigroup_bound(A, t_grid=None, margin: float = 1e-6) -> StabilityCertificate:
    """Empirical ``(E, alpha)`` pair for a stable matrix.

    ``alpha`` is the negated spectral abscissa shrunk by the relative
    ``margin``; ``E`` is the largest ``||e^{tA}||_2 e^{alpha t}`` over the grid
    (at least one).  The default grid has 61 points on ``[0, 30/alpha]``.
    """
    A = _square(A)
    a = spectral_abscissa(A)
    if not a < 0:
        raise ValidationError(f"A is not stable (spectral abscissa {a:.6g})")
    alpha = -a * (1.0 - margin)
    if t_grid is None:
        t_grid = np.linspace(0.0, 30.0 / alpha, 61)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise ValidationError("t_grid must be non-negative")
    E = 1.0
    for t in t_grid:
        E = max(E, l2_operator_norm(matrix_exponential(A, t)) * math.exp(alpha * t))
    return StabilityCertificate(abscissa=a, E=float(E), alpha=float(alpha),
                                t_grid=tuple(float(t) for t in t_grid))


def log_xi0(ratio: float, q: float, K0: float = 1.0) -> float:
    """``log Xi0`` for ``Xi0 = sum_{n>=0} (K0 ratio)^{nq} / (n!)^q``."""
    if ratio < 0 or q <= 0 or K0 <= 0:
        raise ValidationError("ratio >= 0, q > 0 and K0 > 0 required")
    if ratio == 0:
        return 0.0
    x = q * math.log(K0 * ratio)
    # log terms are concave in n; sum past the peak until negligible
    total = 0.0  # n = 0 term, in log space
    n = 0
    while True:
        n += 1
        term = n * x - q * math.lgamma(n + 1)
        total = np.logaddexp(total, term)
        peaked = term < (n - 1) * x - q * math.lgamma(n)
        if peaked and term - total < math.log(SERIES_RTOL):
            return float(total)
        if n > 10 ** 7:
            raise NumericalError("Xi0 series did not converge")


def omega(t, theta: float, norm_A: float):
    """Exponent ``omega(t)`` of the semigroup bound (vectorised in ``t``)."""
    if not 0 < theta <= 1:
        raise ValidationError("theta must lie in (0, 1]")
    x = 2.0 * np.asarray(t, dtype=float) * norm_A
    if theta == 1:
        out = np.log2(1.0 + x)
    else:
        out = x ** math.log2(2.0 - theta) / (1.0 - theta)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SemigroupBoundParams:
    M: float
    K0: float
    D: float
    theta: float
    log_Xi0: float
    q: float
    norm_A: float

    @property
    def Xi0(self) -> float:
        return math.exp(self.log_Xi0)

    def to_dict(self):
        return {"M": self.M, "K0": self.K0, "D": self.D, "theta": self.theta,
                "Xi0": self.Xi0 if self.log_Xi0 < 700 else math.inf,
                "log_Xi0": self.log_Xi0, "q": self.q, "norm_A": self.norm_A}


def semigroup_bound_params(A, spec: QMeasureSpec) -> SemigroupBoundParams:
    """Constants entering the semigroup bound for ``A`` in ``S_{q,w}``."""
    A = _square(A)
    w = spec.weight
    if w.family not in ("subexp", "poly"):
        raise ValidationError(f"no differential-norm constants for a {w.family} weight")
    const = admissibility_constants(w, spec.q)
    norm_A = l2_operator_norm(A)
    if norm_A == 0:
        raise ValidationError("A must be nonzero")
    measure = sqw_measure_pow(A, spec) ** (1.0 / spec.q)
    if not math.isfinite(measure):
        raise ValidationError("A has infinite S_{q,w} measure on this window")
    return SemigroupBoundParams(M=w.diagonal, K0=1.0, D=const.D, theta=const.theta,
                                log_Xi0=log_xi0(measure / norm_A, spec.q),
                                q=spec.q, norm_A=norm_A)


def log_semigroup_qnorm_bound(A, spec: QMeasureSpec, cert: StabilityCertificate, t,
                              params: SemigroupBoundParams | None = None):
    """``log(C(t) e^{-alpha q t})``; vectorised in ``t``."""
    p = params if params is not None else semigroup_bound_params(A, spec)
    q = p.q
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be non-negative")
    log_base = math.log(2.0 * p.D) + q * p.theta * math.log(cert.E)
    out = (q * math.log(p.M) + p.log_Xi0 + q * cert.E
           + omega(t, p.theta, p.norm_A) * log_base - cert.alpha * q * t)
    return float(out) if np.ndim(out) == 0 else out


def semigroup_qnorm_bound(A, spec: QMeasureSpec, cert: StabilityCertificate, t,
                          params: SemigroupBoundParams | None = None):
    """``C(t) e^{-alpha q t}``; ``inf`` where the value exceeds double range."""
    with np.errstate(over="ignore"):
        out = np.exp(log_semigroup_qnorm_bound(A, spec, cert, t, params))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EnvelopeProfile:
    """Shape of ``t -> log(C(t) e^{-alpha q t})``.

    The log-envelope is concave in ``t``: it rises to ``t_peak`` and then
    falls without bound.  ``t_return`` is the first time after the peak at
    which it is back at its ``t = 0`` value and ``t_unit`` the first time it
    drops below ``log 1 = 0``.
    """

    log_at_zero: float
    t_peak: float
    log_at_peak: float
    t_return: float
    t_unit: float


def envelope_profile(params: SemigroupBoundParams, cert: StabilityCertificate) -> EnvelopeProfile:
    p = params
    log_base = math.log(2.0 * p.D) + p.q * p.theta * math.log(cert.E)

    def f(t):
        return (p.q * math.log(p.M) + p.log_Xi0 + p.q * cert.E
                + omega(t, p.theta, p.norm_A) * log_base - cert.alpha * p.q * t)

    f0 = f(0.0)
    # search in s = log t; the envelope is unimodal
    res = minimize_scalar(lambda s: -f(math.exp(s)), bounds=(-40.0, 200.0), method="bounded",
                          options={"xatol": 1e-10})
    t_peak = math.exp(res.x)
    f_peak = f(t_peak)
    if f_peak <= f0:
        t_peak, f_peak = 0.0, f0

    def crossing(level):
        if f_peak <= level:
            # already below the level at the peak; find the first crossing before it
            return 0.0 if f0 <= level else brentq(lambda s: f(math.exp(s)) - level, -40.0,
                                                  math.log(max(t_peak, 1e-300)))
        lo = math.log(max(t_peak, 1e-300))
        hi = lo + 1.0
        while f(math.exp(hi)) > level:
            hi += 1.0
            if hi > 700:
                return math.inf
        return math.exp(brentq(lambda s: f(math.exp(s)) - level, lo, hi, xtol=1e-12))

    return EnvelopeProfile(log_at_zero=f0, t_peak=t_peak, log_at_peak=f_peak,
                           t_return=crossing(f0), t_unit=crossing(0.0))
