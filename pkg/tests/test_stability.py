import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from decaylab.errors import ValidationError
from decaylab.measures import QMeasureSpec, sqw_measure_pow
from decaylab.stability import (envelope_profile, fit_semigroup_bound, log_semigroup_qnorm_bound,
                                log_xi0, matrix_exponential, omega, semigroup_bound_params,
                                semigroup_qnorm_bound, spectral_abscissa)
from decaylab.systems import build_named_system
from decaylab.weights import WeightFunction

SPEC = QMeasureSpec(0.5, WeightFunction.subexp(1, 0.5))


def test_abscissa_nonnormal():
    assert spectral_abscissa([[-1, 5], [0, -2]]) == -1


def test_expm_matches_scipy(rng):
    A = rng.standard_normal((6, 6))
    assert np.allclose(matrix_exponential(A, 0.3), expm(0.3 * A), rtol=1e-13)


def test_xi0_unit_ratio_is_e():
    assert math.exp(log_xi0(1.0, 1.0)) == pytest.approx(math.e, rel=1e-15)


def test_xi0_zero_ratio():
    assert log_xi0(0.0, 0.5) == 0.0


@given(st.floats(0.01, 50), st.floats(0.1, 1))
def test_xi0_against_direct_series(r, q):
    n = np.arange(400)
    from scipy.special import gammaln
    direct = np.logaddexp.reduce(q * (n * math.log(r) - gammaln(n + 1)))
    assert log_xi0(r, q) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_omega_theta_one():
    assert omega(1.0, 1.0, 1.0) == pytest.approx(math.log2(3))


def test_omega_zero():
    assert omega(0.0, 0.5, 2.0) == 0.0


def test_certificate_holds_on_grid():
    A = np.array([[-1.0, 10.0], [0.0, -1.5]])
    cert = fit_semigroup_bound(A)
    assert cert.E > 1
    for t in cert.t_grid:
        assert np.linalg.norm(expm(t * A), 2) <= cert.E * math.exp(-cert.alpha * t) * (1 + 1e-12)


def test_certificate_normal_has_unit_E():
    cert = fit_semigroup_bound(build_named_system("diffusion", N=10).A)
    assert cert.E == pytest.approx(1.0, abs=1e-12)


def test_unstable_rejected():
    with pytest.raises(ValidationError):
        fit_semigroup_bound(np.eye(2))


def test_trivial_weight_rejected():
    with pytest.raises(ValidationError):
        semigroup_bound_params(-np.eye(3), QMeasureSpec(0.5))


def test_bound_at_zero_dominates_identity():
    A = build_named_system("diffusion", N=10).A
    cert = fit_semigroup_bound(A)
    assert semigroup_qnorm_bound(A, SPEC, cert, 0.0) >= 1.0


@pytest.mark.parametrize("name,kw", [("diffusion", {}), ("random-subexp-A", {"seed": 1})])
def test_bound_holds(name, kw):
    A = build_named_system(name, N=12, **kw).A
    cert = fit_semigroup_bound(A)
    p = semigroup_bound_params(A, SPEC)
    for t in np.linspace(0, 20 / cert.alpha, 11):
        actual = sqw_measure_pow(expm(t * A), SPEC)
        assert math.log(actual) <= log_semigroup_qnorm_bound(A, SPEC, cert, t, params=p) + 1e-12


def test_profile_consistency():
    A = build_named_system("scalar-embed").A
    spec = QMeasureSpec(1.0, WeightFunction.subexp(1, 0.5))
    cert = fit_semigroup_bound(A)
    p = semigroup_bound_params(A, spec)
    prof = envelope_profile(p, cert)
    assert prof.log_at_peak >= prof.log_at_zero
    assert log_semigroup_qnorm_bound(A, spec, cert, prof.t_return, params=p) == pytest.approx(
        prof.log_at_zero, abs=1e-6)
    assert prof.t_unit >= prof.t_return
