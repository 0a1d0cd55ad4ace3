import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from decaylab.errors import SystemFormatError, ValidationError
from decaylab.stability import spectral_abscissa
from decaylab.systems import (LatticeSystem, build_named_system, fit_decay_envelope,
                              generate_random_subexp, lattice_uniform, load_system, save_system)
from decaylab.weights import distance_matrix


def test_uniform_deterministic_and_bounded():
    a = lattice_uniform(3, np.arange(-4, 5), np.arange(-4, 5))
    b = lattice_uniform(3, np.arange(-4, 5), np.arange(-4, 5))
    assert np.array_equal(a, b)
    assert np.all((a >= -1) & (a < 1))


def test_uniform_seed_changes_stream():
    r = np.arange(-3, 4)
    assert not np.array_equal(lattice_uniform(0, r, r), lattice_uniform(1, r, r))


@given(st.integers(0, 2 ** 31), st.integers(1, 12), st.integers(1, 12))
def test_windows_are_nested(seed, small, extra):
    big = generate_random_subexp(1.0, 0.5, small + extra, seed)
    sub = generate_random_subexp(1.0, 0.5, small, seed)
    assert np.array_equal(big[extra:-extra, extra:-extra], sub)


def test_random_entries_within_envelope():
    S = generate_random_subexp(2.0, 0.5, 30, 7)
    env = np.exp(-(distance_matrix(61) / 2.0) ** 0.5)
    assert np.all(np.abs(S) <= env)


def test_diffusion_abscissa_n100():
    # -mu - 4 sin^2(pi / (2 (2N+2)))
    A = build_named_system("diffusion", N=100).A
    expected = -0.1 - 4 * math.sin(math.pi / (2 * 202)) ** 2
    assert spectral_abscissa(A) == pytest.approx(expected, abs=1e-12)
    assert spectral_abscissa(A) == pytest.approx(-0.100242, abs=1e-6)


def test_random_fixture_margin():
    s = build_named_system("random-subexp-A", N=20, seed=4, margin=0.2)
    assert spectral_abscissa(s.A) == pytest.approx(-0.2, abs=1e-10)
    assert "shift" in s.provenance and s.weight_hint is not None


def test_scalar_fixture():
    s = build_named_system("scalar-embed", a=0.5)
    assert s.A.shape == (1, 1) and s.A[0, 0] == 0.5


def test_unknown_name_and_param():
    with pytest.raises(ValidationError):
        build_named_system("nope")
    with pytest.raises(ValidationError):
        build_named_system("diffusion", N=3, sigma=2)


def test_validation_messages():
    with pytest.raises(ValidationError, match="R must be strictly positive"):
        LatticeSystem([[-1]], [[1]], [[1]], [[0]])
    with pytest.raises(ValidationError, match="Q must be positive semidefinite"):
        LatticeSystem([[-1]], [[1]], [[-1]], [[1]])
    with pytest.raises(ValidationError, match="Q must be symmetric"):
        LatticeSystem(np.eye(2), np.eye(2), [[1, 1], [0, 1]], np.eye(2))


@pytest.mark.parametrize("encoding", ["base64", "csv"])
def test_save_load_roundtrip_bitwise(tmp_path, encoding):
    s = build_named_system("random-subexp-A", N=6, seed=2)
    path = tmp_path / "s.json"
    save_system(s, path, encoding=encoding)
    t = load_system(path)
    for name in "ABQR":
        assert np.array_equal(getattr(s, name), getattr(t, name))
    assert t.N == 6 and t.provenance == s.provenance


def test_missing_field_named(tmp_path):
    s = build_named_system("diffusion", N=2)
    path = tmp_path / "s.json"
    save_system(s, path)
    doc = json.loads(path.read_text())
    del doc["matrices"]["A"]
    path.write_text(json.dumps(doc))
    with pytest.raises(SystemFormatError, match="matrices.A"):
        load_system(path)


def test_envelope_recovers_exponential():
    A = np.exp(-distance_matrix(61).astype(float))
    env = fit_decay_envelope(A)
    assert env.C0 == pytest.approx(1.0, rel=1e-6)
    assert env.weight.delta == pytest.approx(1.0, abs=1e-3)
    assert env.holds_for(A)


def test_envelope_recovers_subexp():
    A = 3.0 * np.exp(-(distance_matrix(81) / 2.0) ** 0.5)
    env = fit_decay_envelope(A)
    assert env.weight.sigma == pytest.approx(2.0, rel=1e-3)
    assert env.weight.delta == pytest.approx(0.5, rel=1e-3)
    assert env.C0 == pytest.approx(3.0, rel=1e-6)


def test_envelope_always_holds(rng):
    for seed in range(5):
        S = generate_random_subexp(1.0, 0.5, 25, seed)
        for family in ("subexp", "poly"):
            env = fit_decay_envelope(S, family=family)
            assert env.holds_for(S)
