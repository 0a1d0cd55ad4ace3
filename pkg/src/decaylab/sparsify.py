"""Spatial truncation of feedback gains and the sparsity indicator.

Truncation keeps the band ``|i - j| <= T`` of a gain.  For a weight that
grows with distance the discarded part obeys

    ||K - K^T||_2 <= ||K||_{S_{q,w}} / w(T + 1),

which combined with the peak of the closed-loop resolvent gives a
small-gain truncation length beyond which every truncation stabilizes.

The sparsity indicator of a matrix ``K`` from the random ensemble is

    Psi(q, eps) = ||K||_{S_{q,1}}^q / (2 floor(sigma ln(1/eps)^{1/delta}) + 1),

and tends to ``gamma = beta^{-1/delta} Gamma(1/delta + 1)`` with
``beta = q ln(1/eps)`` held fixed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import minimize_scalar
from scipy.special import gamma as gamma_fn

from .errors import NumericalError, ValidationError
from .lyapunov import solve_lyapunov_direct
from .measures import QMeasureSpec, l2_operator_norm, sqw_measure, sqw_measure_pow
from .riccati import CareSolution
from .stability import spectral_abscissa
from .systems import DecayEnvelope, LatticeSystem, lattice_uniform
from .weights import WeightFunction, distance_matrix

__all__ = [
    "DestabilizingGainError",
    "IndicatorSample",
    "NearOptimalResult",
    "SparsificationReport",
    "SweepRow",
    "ensemble_indicator",
    "gamma_limit",
    "gamma_prime",
    "hinf_resolvent_peak",
    "indicator_denominator",
    "near_optimal_q",
    "performance_loss",
    "sparsity_indicator",
    "stabilizing_truncation_length",
    "threshold_matrix",
    "truncate_gain",
    "truncation_error_bound",
    "truncation_sweep",
]


class DestabilizingGainError(NumericalError):
    """The truncated gain does not stabilize the plant."""

    def __init__(self, abscissa: float):
        super().__init__(f"truncated gain is destabilizing (closed-loop abscissa {abscissa:.6g})")
        self.abscissa = abscissa


# -- truncation --------------------------------------------------------------

def truncate_gain(K, T: int) -> np.ndarray:
    """Keep entries with ``|i - j| <= T``."""
    K = np.asarray(K)
    if T < 0 or int(T) != T:
        raise ValidationError("truncation length must be a non-negative integer")
    return np.where(distance_matrix(K.shape[0]) <= T, K, 0.0)


def truncation_error_bound(K, spec: QMeasureSpec, T: int) -> float:
    """``||K||_{S_{q,w}} / w(T + 1)``.

    The infimum of a distance-monotone weight over ``|i - j| > T`` is attained
    at ``T + 1``.  A trivial weight gives the valid but vacuous bound
    ``||K||_{S_{q,1}}``.
    """
    if T < 0:
        raise ValidationError("truncation length must be non-negative")
    C0 = sqw_measure(K, spec)
    return float(C0 * math.exp(-float(spec.weight.log_of_distance(T + 1.0))))


def hinf_resolvent_peak(A_cl, n_grid: int = 2000, return_frequency: bool = False):
    """``sup_{Re s > 0} ||(sI - A_cl)^{-1}||_2`` for a stable ``A_cl``.

    The supremum is attained on the imaginary axis.  It is located on
    ``{0} U logspace(1e-4, 10 ||A_cl||_2)`` and refined by golden-section
    search around the best grid point.  Normal matrices are evaluated
    through their eigenvalues, others through singular values.
    """
    A = np.asarray(A_cl, dtype=float)
    a = spectral_abscissa(A)
    if not a < 0:
        raise ValidationError(f"closed loop is not stable (spectral abscissa {a:.6g})")
    n = A.shape[0]
    nrm = l2_operator_norm(A)
    normal = np.linalg.norm(A @ A.T - A.T @ A) <= 1e-12 * max(nrm, 1.0) ** 2
    if normal:
        lam = np.linalg.eigvals(A)

        def gain(w):
            return 1.0 / np.abs(1j * w - lam).min()
    else:
        I = np.eye(n)

        def gain(w):
            return 1.0 / np.linalg.svd(1j * w * I - A, compute_uv=False)[-1]

    top = max(10.0 * nrm, 1e-3)
    grid = np.concatenate(([0.0], np.logspace(-4, math.log10(top), n_grid)))
    vals = np.array([gain(w) for w in grid])
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    best_w, best = grid[k], vals[k]
    if hi > lo:
        res = minimize_scalar(lambda w: -gain(w), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10 * max(hi, 1.0)})
        if -res.fun > best:
            best_w, best = float(res.x), float(-res.fun)
    return (float(best), float(best_w)) if return_frequency else float(best)


def stabilizing_truncation_length(system: LatticeSystem, care: CareSolution,
                                  envelope: DecayEnvelope, spec: QMeasureSpec | None = None,
                                  peak: float | None = None) -> float:
    """Small-gain truncation length ``T_s``.

    Sub-exponential: ``sigma (ln(C ||B|| peak))^{1/delta}``, zero when the
    log argument is at most one.  Polynomial: ``sigma (C ||B|| peak)^{1/alpha}``.
    ``C`` is the ``S_{q,w}`` measure of the gain for the envelope weight
    (``q = 1`` unless ``spec`` is given) and ``peak`` the resolvent peak of
    the optimal closed loop.
    """
    w = envelope.weight
    if spec is None:
        spec = QMeasureSpec(1.0, w)
    if w.family not in ("subexp", "poly"):
        raise ValidationError("envelope must be sub-exponential or polynomial")
    if spec.weight != w:
        raise ValidationError("measure weight must match the envelope weight")
    if peak is None:
        peak = hinf_resolvent_peak(system.A - system.B @ care.K)
    C = sqw_measure(care.K, spec)
    arg = C * l2_operator_norm(system.B) * peak
    if w.family == "subexp":
        if arg <= 1.0:
            return 0.0
        return float(w.sigma * math.log(arg) ** (1.0 / w.delta))
    return float(w.sigma * arg ** (1.0 / w.alpha))


def _closed_loop_cost(system: LatticeSystem, K) -> np.ndarray:
    """``X(K)`` solving ``A_K* X + X A_K + Q + K* R K = 0``, ``A_K = A - B K``."""
    A_K = system.A - system.B @ K
    a = spectral_abscissa(A_K)
    if not a < 0:
        raise DestabilizingGainError(a)
    forcing = system.Q + K.T @ system.R @ K
    return solve_lyapunov_direct(A_K.T, 0.5 * (forcing + forcing.T)).P


def performance_loss(system: LatticeSystem, K, K_T, x0) -> float:
    """``x0* (X(K_T) - X(K)) x0``; raises ``DestabilizingGainError``."""
    x0 = np.asarray(x0, dtype=float)
    K = np.asarray(K, dtype=float)
    K_T = np.asarray(K_T, dtype=float)
    X = _closed_loop_cost(system, K)
    if np.array_equal(K, K_T):
        # identical gains; two solves could differ by BLAS rounding
        return 0.0
    XT = _closed_loop_cost(system, K_T)
    return float(x0 @ (XT - X) @ x0)


@dataclass(frozen=True)
class SweepRow:
    T: int
    bound: float
    actual_error: float
    abscissa: float
    perf_loss: float  # nan when the truncated loop is unstable


@dataclass
class SparsificationReport:
    rows: list
    T_s: float
    T_near_ideal: int | None = None
    T_near_optimal: int | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"T_s": self.T_s, "T_near_ideal": self.T_near_ideal,
                "T_near_optimal": self.T_near_optimal, "params": self.params,
                "rows": [r.__dict__ for r in self.rows]}

    def table(self):
        header = ("T", "bound", "actual", "abscissa", "loss")
        return header, [(r.T, r.bound, r.actual_error, r.abscissa, r.perf_loss) for r in self.rows]


def truncation_sweep(system: LatticeSystem, care: CareSolution, spec: QMeasureSpec,
                     T_values=None, x0=None, envelope: DecayEnvelope | None = None,
                     compute_loss: bool = True) -> SparsificationReport:
    """Error, bound, closed-loop abscissa and performance loss for each ``T``.

    ``T_values`` defaults to ``0 .. 2N``; ``x0`` to the normalised all-ones
    vector.  ``T_s`` is computed when an ``envelope`` is supplied.
    """
    K = care.K
    n = K.shape[0]
    if T_values is None:
        T_values = range(0, n)
    if x0 is None:
        x0 = np.ones(n) / math.sqrt(n)
    x0 = np.asarray(x0, dtype=float)
    X = _closed_loop_cost(system, K) if compute_loss else None
    C0 = sqw_measure(K, spec)
    rows = []
    for T in T_values:
        KT = truncate_gain(K, int(T))
        bound = float(C0 * math.exp(-float(spec.weight.log_of_distance(T + 1.0))))
        err = l2_operator_norm(K - KT)
        a = spectral_abscissa(system.A - system.B @ KT)
        loss = math.nan
        if compute_loss and a < 0:
            loss = 0.0 if np.array_equal(KT, K) else float(
                x0 @ (_closed_loop_cost(system, KT) - X) @ x0)
        rows.append(SweepRow(int(T), bound, err, a, loss))
    T_s = math.nan
    if envelope is not None:
        T_s = stabilizing_truncation_length(system, care, envelope)
    return SparsificationReport(rows=rows, T_s=T_s, params={
        "q": spec.q, "weight": spec.weight.to_dict(), "x0_norm": float(np.linalg.norm(x0))})


# -- sparsity indicator ----------------------------------------------------

def threshold_matrix(K, epsilon: float) -> np.ndarray:
    """Zero the entries with ``|K_ij| < epsilon``."""
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    K = np.asarray(K)
    return np.where(np.abs(K) < epsilon, 0.0, K)


def _snap_floor(x: float) -> int:
    # values within rounding of an integer are taken as that integer
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.floor(x))


def indicator_denominator(sigma: float, delta: float, log_inv_eps: float) -> int:
    """``2 floor(sigma ln(1/eps)^{1/delta}) + 1``."""
    return 2 * _snap_floor(sigma * log_inv_eps ** (1.0 / delta)) + 1


def gamma_limit(beta: float, delta: float) -> float:
    """``beta^{-1/delta} Gamma(1/delta + 1)``."""
    if not beta > 0:
        raise ValidationError("beta must be positive")
    if not 0 < delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    return float(beta ** (-1.0 / delta) * gamma_fn(1.0 / delta + 1.0))


def gamma_prime(beta: float, delta: float, eta: float, form: str = "printed") -> float:
    """Limit of the indicator with weight ``e_{sigma/eta, delta}``.

    ``form="printed"`` returns ``(1-eta^delta)^{1/delta} beta^{1/delta}
    Gamma((1+delta)/delta)``.  ``form="derived"`` returns the value obtained by
    redoing the limit with the weighted sum,
    ``(1-eta^delta)^{-1/delta} beta^{-1/delta} Gamma(1 + 1/delta)``.
    """
    if not beta > 0:
        raise ValidationError("beta must be positive")
    if not 0 < delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    if not 0 < eta < 1:
        raise ValidationError("eta must lie in (0, 1)")
    c = 1.0 - eta ** delta
    if form == "printed":
        return float(c ** (1.0 / delta) * beta ** (1.0 / delta) * gamma_fn((1.0 + delta) / delta))
    if form == "derived":
        return float(c ** (-1.0 / delta) * beta ** (-1.0 / delta) * gamma_fn(1.0 + 1.0 / delta))
    raise ValidationError(f"unknown form {form!r}")


@dataclass(frozen=True)
class IndicatorSample:
    q: float
    epsilon: float
    beta: float
    psi: float
    gamma_target: float

    def to_dict(self):
        return dict(self.__dict__)


def sparsity_indicator(K, q: float, epsilon: float, sigma: float, delta: float,
                       weight: WeightFunction | None = None,
                       log_inv_eps: float | None = None) -> IndicatorSample:
    """Indicator ``Psi`` of ``K`` with the trivial weight unless ``weight`` is given.

    ``log_inv_eps`` may be passed to avoid recomputing ``ln(1/eps)`` from a
    rounded ``epsilon``.  ``gamma_target`` is ``gamma_limit`` for the trivial
    weight and the printed ``gamma_prime`` otherwise (``nan`` if the weight is
    not of the form ``e_{sigma/eta, delta}``).
    """
    if not 0 < epsilon < 1:
        raise ValidationError("epsilon must lie in (0, 1)")
    if not q > 0:
        raise ValidationError("q must be positive")
    if log_inv_eps is None:
        log_inv_eps = -math.log(epsilon)
    w = weight if weight is not None else WeightFunction.trivial()
    num = sqw_measure_pow(K, QMeasureSpec(q, w))
    psi = num / indicator_denominator(sigma, delta, log_inv_eps)
    beta = q * log_inv_eps
    if w.family == "trivial":
        target = gamma_limit(beta, delta)
    elif w.family == "subexp" and w.delta == delta and w.sigma > sigma:
        target = gamma_prime(beta, delta, sigma / w.sigma)
    else:
        target = math.nan
    return IndicatorSample(q=q, epsilon=epsilon, beta=beta, psi=psi, gamma_target=target)


_BLOCK_ROWS = 256


def _ensemble_numerators(sigma, delta, N, seed, q_values, weight=None):
    """``||K||_{S_{q,w}}^q`` of one ensemble member for several ``q``.

    Streams row blocks of the generator so the full matrix is never stored;
    the log-magnitude of each block is formed once and reused for every
    ``q``.
    """
    n = 2 * N + 1
    d = np.abs(np.arange(-(n - 1), n)).astype(float)
    logmag = -(d / sigma) ** delta
    if weight is not None:
        logmag = logmag + weight.log_of_distance(d)
    # row p of the distance profile is logmag[n-1-p : 2n-1-p]
    profile = sliding_window_view(logmag, n)[::-1]
    sites = np.arange(-N, N + 1)
    q_values = np.asarray(q_values, dtype=float)
    row_max = np.full(q_values.size, -np.inf)
    col_sum = np.zeros((q_values.size, n))
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n)
        r = lattice_uniform(seed, sites[start:stop], sites)
        L = np.log(np.abs(r)) + profile[start:stop]
        for k, q in enumerate(q_values):
            P = np.exp(q * L)
            row_max[k] = max(row_max[k], P.sum(axis=1).max())
            col_sum[k] += P.sum(axis=0)
    return np.maximum(row_max, col_sum.max(axis=1))


def _deterministic_numerators(sigma, delta, N, q_values, weight=None):
    # r = 1: Toeplitz, so the centre row carries the largest sum
    d = np.abs(np.arange(-N, N + 1)).astype(float)
    logmag = -(d / sigma) ** delta
    if weight is not None:
        logmag = logmag + weight.log_of_distance(d)
    return np.array([np.exp(q * logmag).sum() for q in np.asarray(q_values, dtype=float)])


def ensemble_indicator(sigma: float, delta: float, N: int, seeds, epsilon: float | None = None,
                       beta: float | None = None, q: float | None = None,
                       log_inv_eps: float | None = None, deterministic: bool = False,
                       weight: WeightFunction | None = None) -> list:
    """Indicator samples over ensemble members (one per seed).

    Exactly two of ``epsilon`` (or ``log_inv_eps``), ``beta`` and ``q`` fix
    the operating point.  ``deterministic`` replaces ``r_ij`` by one, which
    yields a single sample.
    """
    if log_inv_eps is None and epsilon is not None:
        if not 0 < epsilon < 1:
            raise ValidationError("epsilon must lie in (0, 1)")
        log_inv_eps = -math.log(epsilon)
    if log_inv_eps is None:
        if q is None or beta is None:
            raise ValidationError("two of epsilon, beta, q are required")
        log_inv_eps = beta / q
    if q is None:
        if beta is None:
            raise ValidationError("two of epsilon, beta, q are required")
        q = beta / log_inv_eps
    eps = math.exp(-log_inv_eps)
    denom = indicator_denominator(sigma, delta, log_inv_eps)
    b = q * log_inv_eps
    if weight is None or weight.family == "trivial":
        target = gamma_limit(b, delta)
    else:
        target = gamma_prime(b, delta, sigma / weight.sigma)
    if deterministic:
        nums = _deterministic_numerators(sigma, delta, N, [q], weight)
    else:
        nums = [_ensemble_numerators(sigma, delta, N, s, [q], weight)[0] for s in seeds]
    return [IndicatorSample(q=q, epsilon=eps, beta=b, psi=float(v) / denom, gamma_target=target)
            for v in nums]


@dataclass
class NearOptimalResult:
    converged: bool
    T_near_ideal: int | None
    T_near_optimal: int | None
    q_near_ideal: float | None
    gamma: float
    table: list
    message: str = ""

    def to_dict(self):
        return {"converged": self.converged, "T_near_ideal": self.T_near_ideal,
                "T_near_optimal": self.T_near_optimal, "q_near_ideal": self.q_near_ideal,
                "gamma": self.gamma, "message": self.message, "table": self.table}


def near_optimal_q(sigma: float, delta: float, beta: float, N: int, seeds=(0,),
                   rel_tol: float = 0.05, T_values=None, T_s: float | None = None,
                   deterministic: bool = False) -> NearOptimalResult:
    """Scan truncation lengths ``T`` for a near-optimal exponent ``q``.

    For each ``T``: ``ln(1/eps) = (T/sigma)^delta`` and ``q = beta / ln(1/eps)``.
    The ensemble-median indicator is compared with ``gamma_limit(beta, delta)``;
    ``T_near_ideal`` is the smallest tested ``T`` from which every later value
    stays within ``rel_tol``.  ``T_near_optimal = max(ceil(T_s), T_near_ideal)``
    when ``T_s`` is given.  ``T_values`` defaults to ``1 .. N // 2``.
    """
    if not beta > 0 or not sigma > 0 or not 0 < delta <= 1:
        raise ValidationError("need beta > 0, sigma > 0 and delta in (0, 1]")
    if T_values is None:
        T_values = range(1, N // 2 + 1)
    T_values = [int(T) for T in T_values]
    if not T_values or min(T_values) < 1:
        raise ValidationError("truncation lengths must be >= 1")
    seeds = list(seeds)
    gamma = gamma_limit(beta, delta)
    log_inv = [(T / sigma) ** delta for T in T_values]
    qs = [beta / li for li in log_inv]
    if deterministic:
        per_seed = [_deterministic_numerators(sigma, delta, N, qs)]
    else:
        per_seed = [_ensemble_numerators(sigma, delta, N, s, qs) for s in seeds]
    nums = np.array(per_seed)  # seeds x T
    table = []
    within = []
    for k, (T, li, q) in enumerate(zip(T_values, log_inv, qs)):
        psi = np.sort(nums[:, k] / indicator_denominator(sigma, delta, li))
        med = float(np.median(psi))
        table.append({"T": T, "epsilon": math.exp(-li), "q": q, "psi_median": med,
                      "psi_p05": float(np.quantile(psi, 0.05)),
                      "psi_p95": float(np.quantile(psi, 0.95)), "gamma": gamma})
        within.append(abs(med - gamma) <= rel_tol * gamma)
    T_ideal = None
    for k in range(len(T_values)):
        if all(within[k:]):
            T_ideal = T_values[k]
            break
    if T_ideal is None:
        return NearOptimalResult(False, None, None, None, gamma, table,
                                 "no convergence at this scale")
    T_opt = T_ideal if T_s is None else max(int(math.ceil(T_s)), T_ideal)
    q_ideal = qs[T_values.index(T_ideal)]
    return NearOptimalResult(True, T_ideal, T_opt, q_ideal, gamma, table)
