"""Continuous algebraic Riccati equations and the Hamiltonian spectral projector.

The control Riccati equation is

    A* X + X A - X G X + Q = 0,        G = B R^{-1} B*,

with stabilizing solution ``X`` read off the stable invariant subspace of

    H = [[ A, -G ],
         [-Q, -A*]].

The LQR gain is ``K = R^{-1} B* X`` with control ``u = -K x``, so the closed
loop is ``A_X = A - B K = A - G X``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, schur, solve, solve_sylvester

from .errors import NumericalError, ValidationError
from .measures import l2_operator_norm
from .stability import StabilityCertificate, fit_semigroup_bound, spectral_abscissa

__all__ = [
    "CareSolution",
    "HamiltonianProjector",
    "ResolventProbe",
    "care_residual",
    "dual_care_residual",
    "dual_route_X",
    "hamiltonian",
    "hamiltonian_projector",
    "is_detectable",
    "is_stabilizable",
    "lqr_gain",
    "resolvent_probe",
    "solve_care",
    "solve_dual_care",
]

# eigenvalues of H this close to the imaginary axis make the split ill-posed
IMAG_AXIS_BAND = 1e-10
PBH_RTOL = 1e-8


def _checked(A, B, Q, R):
    A, B, Q, R = (np.array(M, dtype=float, ndmin=2) for M in (A, B, Q, R))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise ValidationError("A and Q must be square of equal size")
    if B.shape[0] != n:
        raise ValidationError(f"B has {B.shape[0]} rows, expected {n}")
    m = B.shape[1]
    if R.shape != (m, m):
        raise ValidationError(f"R has shape {R.shape}, expected {(m, m)}")
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 1e-12:
        raise ValidationError("R must be strictly positive")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12:
        raise ValidationError("Q must be positive semidefinite")
    return A, B, Q, R


def _psd_sqrt(M):
    vals, vecs = eigh(0.5 * (M + M.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _pbh(A, C, side: str) -> bool:
    """Rank test of ``[A - lam I, C]`` (side="right") or its transpose
    (side="left") at every eigenvalue with non-negative real part."""
    n = A.shape[0]
    scale = max(l2_operator_norm(A), l2_operator_norm(C), 1.0)
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        pencil = A - lam * np.eye(n)
        M = np.hstack((pencil, C)) if side == "right" else np.vstack((pencil, C))
        smin = np.linalg.svd(M, compute_uv=False)[-1]
        if smin <= PBH_RTOL * scale:
            return False
    return True


def is_stabilizable(A, B) -> bool:
    """PBH test: ``rank [A - lam I, B] = n`` for every ``Re lam >= 0``."""
    return _pbh(np.asarray(A, dtype=float), np.asarray(B, dtype=float), "right")


def is_detectable(A, C) -> bool:
    """PBH test: ``rank [A - lam I; C] = n`` for every ``Re lam >= 0``."""
    return _pbh(np.asarray(A, dtype=float), np.asarray(C, dtype=float), "left")


def hamiltonian(A, G, Q) -> np.ndarray:
    return np.block([[A, -G], [-Q, -A.T]])


def _stable_schur(A, G, Q):
    """Ordered real Schur form of the Hamiltonian, stable block first."""
    n = A.shape[0]
    H = hamiltonian(A, G, Q)
    ev = np.linalg.eigvals(H)
    if np.any(np.abs(ev.real) <= IMAG_AXIS_BAND * max(1.0, np.abs(ev).max())):
        raise NumericalError("Hamiltonian has eigenvalues on the imaginary axis")
    T, U, sdim = schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NumericalError(f"stable subspace has dimension {sdim}, expected {n}")
    return H, T, U


def _riccati_from_schur(U, n):
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NumericalError("stable subspace is not a graph; no stabilizing solution")
    X = solve(U11.T, U21.T).T
    return 0.5 * (X + X.T)


def care_residual(A, G, Q, X) -> float:
    r = np.linalg.norm(A.T @ X + X @ A - X @ G @ X + Q)
    nq = np.linalg.norm(Q)
    return float(r / nq) if nq > 0 else float(r)


def dual_care_residual(A, G, Q, Y) -> float:
    r = np.linalg.norm(A @ Y + Y @ A.T - Y @ Q @ Y + G)
    ng = np.linalg.norm(G)
    return float(r / ng) if ng > 0 else float(r)


def lqr_gain(X, B, R) -> np.ndarray:
    """``K = R^{-1} B* X``; the control law is ``u = -K x``."""
    X = np.array(X, dtype=float, ndmin=2)
    B = np.array(B, dtype=float, ndmin=2)
    R = np.array(R, dtype=float, ndmin=2)
    try:
        return solve(R, B.T @ X, assume_a="pos")
    except np.linalg.LinAlgError:
        raise ValidationError("R is singular") from None


@dataclass
class CareSolution:
    X: np.ndarray
    K: np.ndarray
    closed_loop_abscissa: float
    residual: float

    def to_dict(self):
        return {"closed_loop_abscissa": self.closed_loop_abscissa,
                "residual": self.residual,
                "min_eigenvalue_X": float(np.linalg.eigvalsh(self.X).min()),
                "size": int(self.X.shape[0])}


def solve_care(A, B, Q, R, check: bool = True) -> CareSolution:
    """Stabilizing solution of the control Riccati equation and LQR gain."""
    A, B, Q, R = _checked(A, B, Q, R)
    if check:
        if not is_stabilizable(A, B):
            raise ValidationError("stabilizability check failed")
        if not is_detectable(A, _psd_sqrt(Q)):
            raise ValidationError("detectability check failed")
    G = B @ solve(R, B.T, assume_a="pos")
    G = 0.5 * (G + G.T)
    _, _, U = _stable_schur(A, G, Q)
    X = _riccati_from_schur(U, A.shape[0])
    res = care_residual(A, G, Q, X)
    if res > 1e-8:
        raise NumericalError(f"Riccati residual {res:.3g} exceeds 1e-8")
    K = lqr_gain(X, B, R)
    a = spectral_abscissa(A - B @ K)
    if not a < 0:
        raise NumericalError(f"closed loop not stable (abscissa {a:.6g})")
    return CareSolution(X=X, K=K, closed_loop_abscissa=a, residual=res)


def solve_dual_care(A, B, Q, R, check: bool = True) -> np.ndarray:
    """Stabilizing ``Y`` of ``A Y + Y A* - Y Q Y + B R^{-1} B* = 0``."""
    A, B, Q, R = _checked(A, B, Q, R)
    G = B @ solve(R, B.T, assume_a="pos")
    G = 0.5 * (G + G.T)
    C = _psd_sqrt(Q)
    if check:
        if not is_stabilizable(A.T, C.T):
            raise ValidationError("dual stabilizability check failed")
        if not is_detectable(A.T, _psd_sqrt(G)):
            raise ValidationError("dual detectability check failed")
    # same equation with (A, G, Q) -> (A*, Q, G)
    _, _, U = _stable_schur(A.T, Q, G)
    Y = _riccati_from_schur(U, A.shape[0])
    res = dual_care_residual(A, G, Q, Y)
    if res > 1e-8:
        raise NumericalError(f"dual Riccati residual {res:.3g} exceeds 1e-8")
    return Y


@dataclass
class HamiltonianProjector:
    """Spectral projector ``E`` of ``H`` onto its stable invariant subspace.

    In terms of the Riccati data ``E = [[I - Z X, Z], [X (I - Z X), X Z]]``.
    """

    E11: np.ndarray
    E12: np.ndarray
    E21: np.ndarray
    E22: np.ndarray
    checks: dict = field(default_factory=dict)

    @property
    def E(self) -> np.ndarray:
        return np.block([[self.E11, self.E12], [self.E21, self.E22]])

    @property
    def Z(self) -> np.ndarray:
        return self.E12

    @property
    def X(self) -> np.ndarray:
        """``E21 E11^{-1}``."""
        X = solve(self.E11.T, self.E21.T).T
        return 0.5 * (X + X.T)


def hamiltonian_projector(A, B, Q, R) -> HamiltonianProjector:
    """Projector onto the stable subspace, along the anti-stable one.

    With ordered Schur form ``H = U [[T11, T12], [0, T22]] U*`` the projector is
    ``U [[I, S], [0, 0]] U*`` where ``T11 S - S T22 = T12``.  ``checks``
    records idempotence, commutation and the Z-equation residuals.
    """
    A, B, Q, R = _checked(A, B, Q, R)
    n = A.shape[0]
    G = B @ solve(R, B.T, assume_a="pos")
    G = 0.5 * (G + G.T)
    H, T, U = _stable_schur(A, G, Q)
    S = solve_sylvester(T[:n, :n], -T[n:, n:], T[:n, n:])
    core = np.zeros_like(T)
    core[:n, :n] = np.eye(n)
    core[:n, n:] = S
    E = U @ core @ U.T
    E11, E12, E21, E22 = E[:n, :n], E[:n, n:], E[n:, :n], E[n:, n:]
    if np.linalg.cond(E11) > 1e12:
        raise NumericalError("I-ZX not invertible")
    proj = HamiltonianProjector(E11, E12, E21, E22)
    X = proj.X
    AX = A - G @ X
    Z = proj.Z
    scale = max(1.0, np.linalg.norm(E))
    proj.checks = {
        "idempotence": float(np.linalg.norm(E @ E - E) / scale),
        "commutation": float(np.linalg.norm(H @ E - E @ H) / (scale * np.linalg.norm(H))),
        "z_equation": float(np.linalg.norm(AX @ Z + Z @ AX.T + G) / max(1.0, np.linalg.norm(G))),
        "e11_identity": float(np.linalg.norm(E11 - (np.eye(n) - Z @ X)) / scale),
        "e22_identity": float(np.linalg.norm(E22 - X @ Z) / scale),
    }
    return proj


def dual_route_X(Y, Z) -> np.ndarray:
    """Recover ``X`` from ``Z = Y (I + X Y)^{-1}``, i.e. ``X = Z^{-1} - Y^{-1}``."""
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    for name, M in (("Y", Y), ("Z", Z)):
        if np.linalg.cond(M) > 1e12:
            raise NumericalError(f"{name} is numerically singular; dual route unavailable")
    n = Y.shape[0]
    X = np.linalg.solve(Z, np.eye(n)) - np.linalg.solve(Y, np.eye(n))
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class ResolventProbe:
    points: np.ndarray
    norm_minus: np.ndarray  # ||(zI - A_X)^{-1}||_2
    norm_plus: np.ndarray   # ||(zI + A_X*)^{-1}||_2
    bound_minus: float
    bound_plus: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.norm_minus <= self.bound_minus)
                    and np.all(self.norm_plus <= self.bound_plus))


def _rectangle_boundary(left: float, right: float, height: float, count: int) -> np.ndarray:
    corners = [complex(right, -height), complex(right, height),
               complex(left, height), complex(left, -height)]
    sides = [abs(corners[(k + 1) % 4] - corners[k]) for k in range(4)]
    s = np.linspace(0.0, sum(sides), count, endpoint=False)
    out = np.empty(count, dtype=complex)
    for idx, pos in enumerate(s):
        k = 0
        while pos > sides[k]:
            pos -= sides[k]
            k += 1
        a, b = corners[k], corners[(k + 1) % 4]
        out[idx] = a + (b - a) * (pos / sides[k])
    return out


def resolvent_probe(A_X, cert: StabilityCertificate | None = None, count: int = 32) -> ResolventProbe:
    """Resolvent norms on the boundary of the rectangle with vertices
    ``-alpha/2 +- 2||A_X|| i`` and ``-2||A_X|| +- 2||A_X|| i``."""
    A_X = np.asarray(A_X, dtype=float)
    if cert is None:
        cert = fit_semigroup_bound(A_X)
    nrm = l2_operator_norm(A_X)
    pts = _rectangle_boundary(-2.0 * nrm, -cert.alpha / 2.0, 2.0 * nrm, count)
    n = A_X.shape[0]
    I = np.eye(n)
    minus = np.array([1.0 / np.linalg.svd(z * I - A_X, compute_uv=False)[-1] for z in pts])
    plus = np.array([1.0 / np.linalg.svd(z * I + A_X.T, compute_uv=False)[-1] for z in pts])
    return ResolventProbe(pts, minus, plus, 2.0 * cert.E / cert.alpha, cert.E / cert.alpha)
