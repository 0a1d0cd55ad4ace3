"""Coupling weight functions on the one-dimensional lattice.

A weight ``w(i, j)`` depends on the lattice sites only through the
quasi-distance ``|i - j|``.  Three families are supported:

* ``subexp``   -- ``exp((|i-j| / sigma) ** delta)``
* ``poly``     -- ``((1 + |i-j|) / sigma) ** alpha``
* ``trivial``  -- identically one

plus ``constant``, the degenerate family used as the companion of a
polynomial weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "AdmissibilityConstants",
    "AdmissibilityReport",
    "WeightFunction",
    "admissibility_constants",
    "companion_weight",
    "distance",
    "distance_matrix",
    "eval_weight",
    "verify_admissibility",
]

FAMILIES = ("subexp", "poly", "trivial", "constant")


def distance(i, j):
    """Quasi-distance ``|i - j|`` on the integer lattice (vectorised)."""
    return np.abs(np.asarray(i) - np.asarray(j))


@lru_cache(maxsize=32)
def _distance_matrix(n: int) -> np.ndarray:
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :]).astype(float)
    d.setflags(write=False)
    return d


def distance_matrix(n: int) -> np.ndarray:
    """Read-only ``n x n`` array of site distances for a contiguous window."""
    return _distance_matrix(int(n))


@dataclass(frozen=True)
class WeightFunction:
    """Immutable coupling weight.

    Parameters are validated on construction.  ``delta = 1`` is accepted for
    the sub-exponential family (pure exponential weight); such a weight is
    submultiplicative but not admissible.
    """

    family: str
    sigma: float = 1.0
    delta: float = 0.5
    alpha: float = 1.0
    value: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown weight family {self.family!r}")
        if self.dimension != 1:
            raise ValueError("only dimension 1 is supported")
        if self.family in ("subexp", "poly") and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.family == "subexp" and not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.family == "poly" and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.family == "constant" and not self.value >= 1:
            raise ValueError("constant weight value must be >= 1")

    @classmethod
    def subexp(cls, sigma: float, delta: float) -> "WeightFunction":
        return cls("subexp", sigma=float(sigma), delta=float(delta))

    @classmethod
    def poly(cls, alpha: float, sigma: float) -> "WeightFunction":
        return cls("poly", sigma=float(sigma), alpha=float(alpha))

    @classmethod
    def trivial(cls) -> "WeightFunction":
        return cls("trivial")

    @classmethod
    def constant(cls, value: float) -> "WeightFunction":
        return cls("constant", value=float(value))

    def of_distance(self, d):
        """Weight as a function of the distance ``d = |i - j|``."""
        d = np.asarray(d, dtype=float)
        if self.family == "subexp":
            return np.exp((d / self.sigma) ** self.delta)
        if self.family == "poly":
            return ((1.0 + d) / self.sigma) ** self.alpha
        if self.family == "constant":
            return np.full_like(d, self.value)
        return np.ones_like(d)

    def log_of_distance(self, d):
        """``log w`` at distance ``d``; avoids overflow for long ranges."""
        d = np.asarray(d, dtype=float)
        if self.family == "subexp":
            return (d / self.sigma) ** self.delta
        if self.family == "poly":
            return self.alpha * np.log((1.0 + d) / self.sigma)
        if self.family == "constant":
            return np.full_like(d, math.log(self.value))
        return np.zeros_like(d)

    def matrix(self, n: int) -> np.ndarray:
        """Weight matrix on a window of ``n`` consecutive sites."""
        return self.of_distance(distance_matrix(n))

    @property
    def diagonal(self) -> float:
        """``w(i, i)``; the q-norm of the identity in the weighted class."""
        return float(self.of_distance(0.0))

    def to_dict(self) -> dict:
        if self.family == "subexp":
            return {"family": "subexp", "sigma": self.sigma, "delta": self.delta}
        if self.family == "poly":
            return {"family": "poly", "alpha": self.alpha, "sigma": self.sigma}
        if self.family == "constant":
            return {"family": "constant", "value": self.value}
        return {"family": "trivial"}

    @classmethod
    def from_dict(cls, data: dict) -> "WeightFunction":
        try:
            family = data["family"]
            if family == "subexp":
                return cls.subexp(data["sigma"], data["delta"])
            if family == "poly":
                return cls.poly(data["alpha"], data["sigma"])
            if family == "constant":
                return cls.constant(data["value"])
            if family == "trivial":
                return cls.trivial()
        except KeyError as exc:
            raise ValueError(f"weight spec missing field {exc.args[0]!r}") from None
        raise ValueError(f"unknown weight family {family!r}")

    @classmethod
    def parse(cls, text: str) -> "WeightFunction":
        """Parse the CLI shorthand ``subexp:SIGMA:DELTA``, ``poly:ALPHA:SIGMA``
        or ``trivial``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "subexp" and len(parts) == 3:
                return cls.subexp(float(parts[1]), float(parts[2]))
            if parts[0] == "poly" and len(parts) == 3:
                return cls.poly(float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise ValueError(f"bad weight spec {text!r}: {exc}") from None
        if parts == ["trivial"]:
            return cls.trivial()
        raise ValueError(
            f"bad weight spec {text!r}; expected subexp:SIGMA:DELTA, "
            "poly:ALPHA:SIGMA or trivial")

    def __str__(self):
        if self.family == "subexp":
            return f"subexp:{self.sigma:g}:{self.delta:g}"
        if self.family == "poly":
            return f"poly:{self.alpha:g}:{self.sigma:g}"
        if self.family == "constant":
            return f"constant:{self.value:g}"
        return "trivial"


def eval_weight(w: WeightFunction, i, j):
    """Evaluate ``w(i, j)``; accepts scalars or broadcastable arrays."""
    out = w.of_distance(distance(i, j))
    return float(out) if np.ndim(out) == 0 else out


def companion_weight(w: WeightFunction) -> WeightFunction:
    """Companion weight ``u`` with ``w(i,j) <= w(i,k) u(k,j) + u(i,k) w(k,j)``.

    The sub-exponential weight ``e_{sigma,delta}`` uses ``e_{sigma',delta}``
    with ``sigma' = sigma / (2**delta - 1) ** (1/delta)``; the polynomial
    weight uses the constant ``2**alpha``.
    """
    if w.family == "subexp":
        if w.delta >= 1:
            raise ValueError("no companion defined for delta = 1")
        sigma_c = w.sigma / (2.0 ** w.delta - 1.0) ** (1.0 / w.delta)
        return WeightFunction.subexp(sigma_c, w.delta)
    if w.family == "poly":
        return WeightFunction.constant(2.0 ** w.alpha)
    raise ValueError(f"no companion defined for {w.family} weight")


@dataclass(frozen=True)
class AdmissibilityConstants:
    D: float
    theta: float
    q: float

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("D must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")


def admissibility_constants(w: WeightFunction, q: float, d: int = 1) -> AdmissibilityConstants:
    """Constants ``(D, theta)`` of the growth condition for ``0 < q <= 1``."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    # shared factor d(1 - q/2)
    dq = d * (1.0 - q / 2.0)
    if w.family == "subexp":
        if w.delta >= 1:
            raise ValueError("not admissible: delta = 1 gives theta = 0")
        D = 2.0 ** (d + 1 - d * q / 2.0)
        theta = q * w.delta * (2.0 - 2.0 ** w.delta) / (q * w.delta + dq * w.sigma ** w.delta)
        return AdmissibilityConstants(D, theta, q)
    if w.family == "poly":
        D = 2.0 ** (q * w.alpha + 1) * max(1.0, (2.0 * w.sigma) ** dq)
        theta = q * w.alpha / (q * w.alpha + dq)
        return AdmissibilityConstants(D, theta, q)
    raise ValueError(f"not admissible: {w.family} weight")


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    worst_margin: float
    lhs: tuple
    rhs: tuple


def _growth_lhs(w: WeightFunction, u: WeightFunction, q: float, radius: int, t: float) -> float:
    # sup over sites i of inf over integer tau of
    # (sum_{|i-j|<tau} u^{2q/(2-q)})^{1-q/2} + t * sup_{|i-j|>=tau} (u/w)^q
    n = 2 * radius + 1
    p = 2 * q / (2 - q)
    taus = np.arange(0, 2 * radius + 1)
    best = -np.inf
    for i in range(n):
        dist = np.abs(np.arange(n) - i).astype(float)
        order = np.argsort(dist, kind="stable")
        dsorted = dist[order]
        upow = u.of_distance(dsorted) ** p
        ratio = (u.of_distance(dsorted) / w.of_distance(dsorted)) ** q
        # entries with distance < tau form a prefix of the sorted list
        cut = np.searchsorted(dsorted, taus, side="left")
        csum = np.concatenate(([0.0], np.cumsum(upow)))
        head = csum[cut] ** (1 - q / 2)
        tail_sup = np.concatenate((np.maximum.accumulate(ratio[::-1])[::-1], [0.0]))
        val = np.min(head + t * tail_sup[cut])
        best = max(best, val)
    return float(best)


def verify_admissibility(w: WeightFunction, q: float, radius: int, t_grid,
                         constants: AdmissibilityConstants | None = None) -> AdmissibilityReport:
    """Check the admissibility growth inequality on a finite window.

    The left-hand side is evaluated with the companion weight, the infimum
    over ``tau`` taken on ``{0, ..., 2N}`` and the supremum over sites in
    ``[-N, N]``.  ``worst_margin`` is the largest ratio ``lhs / (D t^(1-theta))``;
    the check passes when it does not exceed one.

    A trivial weight has no companion or constants of its own; it is checked
    with ``u = w = 1`` against ``D = 2^(2 - q/2)`` and ``theta = q / (q + 1 - q/2)``
    unless ``constants`` are supplied.
    """
    if w.family == "trivial":
        u = w
        if constants is None:
            constants = AdmissibilityConstants(2.0 ** (2 - q / 2.0), q / (q + 1 - q / 2.0), q)
    else:
        u = companion_weight(w)
        if constants is None:
            constants = admissibility_constants(w, q)
    lhs, rhs = [], []
    worst = -np.inf
    for t in t_grid:
        if t < 1:
            raise ValueError("t_grid values must be >= 1")
        left = _growth_lhs(w, u, q, radius, float(t))
        right = constants.D * float(t) ** (1 - constants.theta)
        lhs.append(left)
        rhs.append(right)
        worst = max(worst, left / right)
    return AdmissibilityReport(bool(worst <= 1.0), float(worst), tuple(lhs), tuple(rhs))
