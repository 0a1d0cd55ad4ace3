"""Lattice systems, the random sub-exponential ensemble, and decay envelopes.

All matrices are dense and indexed by the window ``[-N, N]``; array position
``p`` corresponds to lattice site ``p - N``.
"""

from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import SystemFormatError, ValidationError
from .weights import WeightFunction, distance_matrix

__all__ = [
    "DecayEnvelope",
    "LatticeDomain",
    "LatticeSystem",
    "FORMAT_VERSION",
    "build_named_system",
    "fit_decay_envelope",
    "generate_random_subexp",
    "lattice_uniform",
    "load_system",
    "save_system",
]

FORMAT_VERSION = "decaylab-system/1"
NAMED_SYSTEMS = ("diffusion", "random-subexp-A", "scalar-embed")

# lattice sites are shifted by this offset to obtain non-negative counters
_SITE_OFFSET = 1 << 40


@dataclass(frozen=True)
class LatticeDomain:
    N: int

    def __post_init__(self):
        if self.N < 0:
            raise ValidationError("radius N must be non-negative")

    @property
    def size(self) -> int:
        return 2 * self.N + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)


def lattice_uniform(seed: int, rows, cols) -> np.ndarray:
    """Uniform(-1, 1) draws ``r_ij`` that depend only on ``(seed, i, j)``.

    Each row ``i`` owns an independent Philox counter stream keyed by
    ``seed``; column ``j`` reads word ``j + offset`` of that stream.  The value
    at a given site pair is therefore independent of the window size and of
    generation order, so a window of radius ``N`` is an exact sub-block of any
    larger window drawn with the same seed.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if cols.size and np.any(np.diff(cols) != 1):
        raise ValueError("columns must be consecutive lattice sites")
    out = np.empty((rows.size, cols.size))
    if cols.size == 0:
        return out
    start = int(cols[0]) + _SITE_OFFSET
    skip = start % 4
    for k, i in enumerate(rows):
        bitgen = np.random.Philox(key=int(seed), counter=[0, 0, int(i) + _SITE_OFFSET, 0])
        bitgen.advance(start // 4)
        raw = bitgen.random_raw(skip + cols.size)[skip:]
        # 53-bit mantissa, strictly inside (0, 1)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
        out[k] = 2.0 * u - 1.0
    return out


def generate_random_subexp(sigma: float, delta: float, N: int, seed: int) -> np.ndarray:
    """Member of the ensemble ``K_ij = r_ij exp(-(|i-j|/sigma)^delta)``."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    if N < 1:
        raise ValidationError("N must be >= 1")
    sites = np.arange(-N, N + 1)
    r = lattice_uniform(seed, sites, sites)
    return r * np.exp(-(distance_matrix(2 * N + 1) / sigma) ** delta)


@dataclass(frozen=True)
class DecayEnvelope:
    """Hard envelope ``|a_ij| <= C0 / w(i, j)``."""

    C0: float
    weight: WeightFunction
    rms_residual: float = 0.0

    def bound(self, d):
        return self.C0 / self.weight.of_distance(d)

    def holds_for(self, A, max_distance: float | None = None) -> bool:
        A = np.asarray(A)
        dist = distance_matrix(A.shape[0])
        with np.errstate(divide="ignore"):
            lhs = np.log(np.abs(A)) + self.weight.log_of_distance(dist)
        if max_distance is not None:
            lhs = lhs[dist <= max_distance]
        return bool(np.all(lhs <= math.log(self.C0)))

    def to_dict(self):
        return {"C0": self.C0, "weight": self.weight.to_dict(),
                "rms_residual": self.rms_residual}


_FIT_FLOOR = 1e-14


def fit_decay_envelope(A, family: str = "subexp", max_distance: float | None = None) -> DecayEnvelope:
    """Fit a decay envelope to the entries of ``A``.

    ``log|a_ij|`` is regressed on the family's log-weight over entries above
    1e-14 in magnitude; ``C0`` is then set to ``max |a_ij| w(i,j)`` so the
    envelope holds entrywise.  Sub-exponential fits search ``delta`` in
    ``(0, 1]`` and solve for ``sigma`` in closed form; polynomial fits fix
    ``sigma = 1`` (it is not identifiable separately from ``C0``).
    ``max_distance`` restricts both the regression and ``C0`` to entries with
    ``|i - j| <= max_distance``, which makes fits on windows of different
    size comparable.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("envelope fit needs a square matrix")
    absA = np.abs(A)
    dist = distance_matrix(A.shape[0])
    in_range = np.ones(A.shape, dtype=bool) if max_distance is None else dist <= max_distance
    mask = (absA > _FIT_FLOOR) & in_range
    if not mask.any():
        raise ValidationError("cannot fit a decay envelope to an all-zero matrix")
    d = dist[mask]
    y = np.log(absA[mask])
    if np.unique(d).size < 2:
        raise ValidationError("envelope fit needs entries at two or more distances")

    if family == "subexp":
        def inner(delta):
            x = d ** delta
            X = np.column_stack((np.ones_like(x), -x))
            coef, *_ = np.linalg.lstsq(X, y, rcond=None)
            res = y - X @ coef
            return float(res @ res), coef

        opt = minimize_scalar(lambda t: inner(t)[0], bounds=(0.02, 1.0),
                              method="bounded", options={"xatol": 1e-10})
        delta = float(opt.x)
        # the bounded search never evaluates the end point exactly
        if inner(1.0)[0] <= opt.fun:
            delta = 1.0
        sse, coef = inner(delta)
        slope = coef[1]
        if not slope > 0:
            raise ValidationError("entries do not decay with distance")
        sigma = slope ** (-1.0 / delta)
        weight = WeightFunction.subexp(sigma, delta)
    elif family == "poly":
        x = np.log1p(d)
        X = np.column_stack((np.ones_like(x), -x))
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        res = y - X @ coef
        sse = float(res @ res)
        if not coef[1] > 0:
            raise ValidationError("entries do not decay with distance")
        weight = WeightFunction.poly(float(coef[1]), 1.0)
    else:
        raise ValidationError(f"cannot fit family {family!r}")

    logw = weight.log_of_distance(dist)
    with np.errstate(divide="ignore"):
        log_c0 = float(np.max((np.log(absA) + logw)[in_range]))
    # a relative 1e-12 margin absorbs rounding in exp/log
    C0 = math.exp(log_c0) * (1.0 + 1e-12)
    return DecayEnvelope(C0=C0, weight=weight, rms_residual=math.sqrt(sse / y.size))


@dataclass
class LatticeSystem:
    """State-space data ``(A, B, Q, R)`` on the window ``[-N, N]``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int | None = None
    provenance: dict = field(default_factory=dict)
    weight_hint: WeightFunction | None = None

    def __post_init__(self):
        self.A = np.array(self.A, dtype=float, ndmin=2)
        self.B = np.array(self.B, dtype=float, ndmin=2)
        self.Q = np.array(self.Q, dtype=float, ndmin=2)
        self.R = np.array(self.R, dtype=float, ndmin=2)
        if self.N is None:
            self.N = (self.A.shape[0] - 1) // 2
        self.validate()

    @property
    def domain(self) -> LatticeDomain:
        return LatticeDomain(self.N)

    def validate(self):
        n = self.A.shape[0]
        for name in ("A", "B", "Q", "R"):
            M = getattr(self, name)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValidationError(f"{name} must be square")
            if M.shape[0] != n:
                raise ValidationError(f"{name} has size {M.shape[0]}, expected {n}")
            if not np.all(np.isfinite(M)):
                raise ValidationError(f"{name} has non-finite entries")
        for name in ("Q", "R"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValidationError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValidationError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 1e-12:
            raise ValidationError("R must be strictly positive")


def _laplacian(n: int) -> np.ndarray:
    L = -2.0 * np.eye(n)
    idx = np.arange(n - 1)
    L[idx, idx + 1] = 1.0
    L[idx + 1, idx] = 1.0
    return L


def build_named_system(name: str, N: int = 50, **params) -> LatticeSystem:
    """Deterministic fixtures.

    ``diffusion``
        ``A = L - mu I`` with ``L`` the ``[1, -2, 1]`` Laplacian (``mu=0.1``).
    ``random-subexp-A``
        ``A = S - c I`` with ``S`` from :func:`generate_random_subexp`
        (``sigma=1, delta=0.5, seed=0``) and ``c`` chosen so the spectral
        abscissa equals ``-margin`` (default 0.1).  The shift is recorded.
    ``scalar-embed``
        The 1x1 system ``a, b, q, r`` (defaults ``-1, 1, 1, 1``).

    ``B``, ``Q`` and ``R`` default to identities unless passed explicitly.
    """
    if name not in NAMED_SYSTEMS:
        raise ValidationError(f"unknown system {name!r}; choose from {', '.join(NAMED_SYSTEMS)}")
    prov = {"generator": name, "N": N}
    hint = None
    if name == "scalar-embed":
        a = float(params.pop("a", -1.0))
        b = float(params.pop("b", 1.0))
        q = float(params.pop("q", 1.0))
        r = float(params.pop("r", 1.0))
        prov.update({"a": a, "b": b, "q": q, "r": r, "N": 0})
        _reject_extra(params)
        return LatticeSystem([[a]], [[b]], [[q]], [[r]], N=0, provenance=prov)

    if N < 1:
        raise ValidationError("N must be >= 1")
    n = 2 * N + 1
    if name == "diffusion":
        mu = float(params.pop("mu", 0.1))
        A = _laplacian(n) - mu * np.eye(n)
        prov["mu"] = mu
    else:
        sigma = float(params.pop("sigma", 1.0))
        delta = float(params.pop("delta", 0.5))
        seed = int(params.pop("seed", 0))
        margin = float(params.pop("margin", 0.1))
        S = generate_random_subexp(sigma, delta, N, seed)
        shift = float(np.linalg.eigvals(S).real.max()) + margin
        A = S - shift * np.eye(n)
        prov.update({"sigma": sigma, "delta": delta, "seed": seed,
                     "margin": margin, "shift": shift})
        hint = WeightFunction.subexp(sigma, delta)
    B = np.asarray(params.pop("B", np.eye(n)), dtype=float)
    Q = np.asarray(params.pop("Q", np.eye(n)), dtype=float)
    R = np.asarray(params.pop("R", np.eye(n)), dtype=float)
    _reject_extra(params)
    return LatticeSystem(A, B, Q, R, N=N, provenance=prov, weight_hint=hint)


def _reject_extra(params):
    if params:
        raise ValidationError(f"unexpected parameters: {', '.join(sorted(params))}")


# -- file format -----------------------------------------------------------

def _encode(M: np.ndarray, encoding: str) -> dict:
    M = np.ascontiguousarray(M, dtype="<f8")
    if encoding == "base64":
        data = base64.b64encode(M.tobytes()).decode("ascii")
        return {"shape": list(M.shape), "encoding": "base64-f8le", "data": data}
    if encoding == "csv":
        buf = io.StringIO()
        np.savetxt(buf, M, delimiter=",", fmt="%.17g")
        return {"shape": list(M.shape), "encoding": "csv", "data": buf.getvalue()}
    raise ValueError(f"unknown encoding {encoding!r}")


def _decode(entry, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        encoding = entry["encoding"]
        data = entry["data"]
    except (KeyError, TypeError) as exc:
        raise SystemFormatError(f"matrix {name}: missing field {exc}") from None
    if encoding == "base64-f8le":
        raw = base64.b64decode(data.encode("ascii"), validate=True)
        if len(raw) != 8 * math.prod(shape):
            raise SystemFormatError(f"matrix {name}: expected {math.prod(shape)} values")
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
    if encoding == "csv":
        try:
            M = np.loadtxt(io.StringIO(data), delimiter=",", ndmin=2)
        except ValueError as exc:
            raise SystemFormatError(f"matrix {name}: {exc}") from None
        if M.shape != shape:
            raise SystemFormatError(f"matrix {name}: shape {M.shape} != {shape}")
        return M
    raise SystemFormatError(f"matrix {name}: unknown encoding {encoding!r}")


def save_system(system: LatticeSystem, path, encoding: str = "base64"):
    """Write ``system`` as a versioned JSON document."""
    doc = {
        "format": FORMAT_VERSION,
        "domain": {"N": system.N, "distance": "abs-diff"},
        "weight_hints": system.weight_hint.to_dict() if system.weight_hint else None,
        "provenance": system.provenance,
        "matrices": {name: _encode(getattr(system, name), encoding)
                     for name in ("A", "B", "Q", "R")},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_system(path) -> LatticeSystem:
    """Read a system file; raises ``SystemFormatError`` or ``ValidationError``."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemFormatError(f"{path}: not valid JSON ({exc.msg} at char {exc.pos})") from None
    if not isinstance(doc, dict):
        raise SystemFormatError(f"{path}: top level must be an object")
    for key in ("format", "domain", "provenance", "matrices"):
        if key not in doc:
            raise SystemFormatError(f"{path}: missing field {key!r}")
    if doc["format"] != FORMAT_VERSION:
        raise SystemFormatError(
            f"{path}: unsupported format {doc['format']!r} (expected {FORMAT_VERSION})")
    if "N" not in doc["domain"]:
        raise SystemFormatError(f"{path}: missing field 'domain.N'")
    mats = {}
    for name in ("A", "B", "Q", "R"):
        if name not in doc["matrices"]:
            raise SystemFormatError(f"{path}: missing field 'matrices.{name}'")
        mats[name] = _decode(doc["matrices"][name], name)
    hint = doc.get("weight_hints")
    return LatticeSystem(
        mats["A"], mats["B"], mats["Q"], mats["R"], N=int(doc["domain"]["N"]),
        provenance=doc["provenance"],
        weight_hint=WeightFunction.from_dict(hint) if hint else None)
