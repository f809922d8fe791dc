import numpy as np
import pytest
import scipy.linalg

from splitkit.core import SEQUENTIAL, STRANG, EvolveSpec, Generator, Scheme, split_evolve, stability_scan
from splitkit.problems import (
    PROBLEMS,
    CertificationError,
    ProblemSpec,
    _certify,
    _check_residual,
    build_advection_diffusion,
    build_delay_diffusion,
    build_matrix_problem,
    build_scalar_delay,
    get_problem,
)
from splitkit.spatial import split_evolve_approx


def test_commuting_problem_is_exact():
    spec = build_matrix_problem("commuting", dim=3)
    assert spec.A.is_diagonal and spec.B.is_diagonal
    ref = spec.reference(1.0)
    for scheme in (SEQUENTIAL, STRANG, Scheme.weighted(0.3)):
        got = split_evolve(scheme, spec.T, spec.S, EvolveSpec(1.0, 3), spec.x0)
        assert np.linalg.norm(got - ref) <= 1e-14 * np.linalg.norm(ref)


def test_nilpotent_pair_algebra():
    spec = build_matrix_problem("nilpotent-pair", dim=2)
    a, b = spec.A.matrix, spec.B.matrix
    assert np.array_equal(a, [[0, 1], [0, 0]]) and np.array_equal(b, [[0, 0], [1, 0]])
    assert np.array_equal(a @ b - b @ a, np.diag([1.0, -1.0]))
    assert np.allclose(spec.reference(1.0), [np.cosh(1.0), np.sinh(1.0)], rtol=1e-14)


def test_random_stable_reproducible_and_stable():
    s1 = build_matrix_problem("random-stable", dim=8, seed=42)
    s2 = build_matrix_problem("random-stable", dim=8, seed=42)
    assert np.array_equal(s1.A.matrix, s2.A.matrix) and np.array_equal(s1.x0, s2.x0)
    assert not np.array_equal(s1.A.matrix, build_matrix_problem("random-stable", dim=8, seed=43).A.matrix)
    est = stability_scan(SEQUENTIAL, s1.T, s1.S, 1.0, 8)
    assert est.is_finite and est.dominates()
    for g in (s1.A, s1.B):
        assert np.linalg.eigvalsh(0.5 * (g.matrix + g.matrix.T)).max() <= -0.1 + 1e-12


def test_matrix_problem_errors():
    with pytest.raises(ValueError):
        build_matrix_problem("wobbly")
    with pytest.raises(ValueError):
        build_matrix_problem("commuting", dim=1)


def test_certification_is_rechecked():
    nil = build_matrix_problem("nilpotent-pair")
    fake = ProblemSpec("fake", {}, nil.A, nil.B, nil.x0, certified_properties=("commuting",))
    with pytest.raises(CertificationError):
        _certify(fake)
    grow = ProblemSpec("grow", {}, Generator(np.eye(2)), Generator(np.zeros((2, 2))), nil.x0, certified_properties=("contraction",))
    with pytest.raises(CertificationError):
        _certify(grow)


def test_residual_check_rejects_wrong_reference():
    xs = np.arange(64) / 64
    good = lambda t: np.exp(-t) * np.sin(2 * np.pi * xs)  # noqa: E731
    _check_residual(good, lambda v: -v)
    with pytest.raises(CertificationError):
        _check_residual(lambda t: np.exp(-2 * t) * np.sin(2 * np.pi * xs), lambda v: -v)


def test_advection_diffusion_identity_flow():
    spec = build_advection_diffusion(m_values=(16, 32), nu=0.0, a=0.0, n_ref=256)
    assert np.allclose(spec.reference(0.7), spec.x0, atol=1e-15)
    assert np.allclose(spec.T(0.7, spec.x0), spec.x0, atol=1e-14)


def test_advection_diffusion_pure_decay_against_expm():
    nu, n_ref = 0.02, 64
    spec = build_advection_diffusion(m_values=(16, 32), nu=nu, a=0.0, n_ref=n_ref)
    t = 0.6
    assert np.allclose(spec.reference(t), np.exp(-4 * np.pi**2 * nu * t) * spec.x0, atol=1e-15)
    # spectral closed form against expm of the dense spectral-derivative matrix
    eye = np.eye(n_ref)
    k = np.fft.fftfreq(n_ref, d=1.0 / n_ref)
    d2 = np.real(np.fft.ifft((2j * np.pi * k)[:, None] ** 2 * np.fft.fft(eye, axis=0), axis=0))
    dense = scipy.linalg.expm(t * nu * d2)
    assert np.allclose(spec.T.matrix(t), dense, atol=1e-12)


def test_advection_diffusion_strang_point():
    spec = build_advection_diffusion()
    t = 0.5
    got = split_evolve_approx(STRANG, spec.family, 128, EvolveSpec(t, 64), spec.x0)
    err = np.abs(got - spec.reference(t)).max()
    # second-order stencils: about 1.1e-3 at m = 128 for this problem
    assert err <= 2e-3


def test_advection_levels_are_2norm_contractions():
    spec = build_advection_diffusion(m_values=(16, 32), n_ref=256)
    for lv in spec.family.levels:
        assert np.linalg.norm(lv.T.matrix(0.3), 2) <= 1 + 1e-12
        assert np.linalg.norm(lv.S.matrix(0.3), 2) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        build_advection_diffusion(m_values=(4, 8), n_ref=64)


def test_delay_builders():
    s = build_scalar_delay(q=16)
    assert s.d == 1 and s.C.matrix[0, 0] == -1.0 and np.allclose(s.kernel_samples, 0.3)
    dd = build_delay_diffusion(d=32, q=64)
    assert dd.contraction_defect((0.01, 0.5, 2.0)) <= 1e-12
    assert dd.phi_weighted_norm_sum() <= dd.phi_norm_bound * (1 + 1e-12)
    with pytest.raises(ValueError):
        build_scalar_delay(c=0.5)


def test_builds_are_bit_reproducible():
    for name in ("random-stable", "commuting", "b-zero", "a-zero"):
        a, b = get_problem(name, dim=5, seed=3), get_problem(name, dim=5, seed=3)
        assert np.array_equal(a.A.matrix, b.A.matrix) and np.array_equal(a.B.matrix, b.B.matrix)


def test_registry():
    assert {"nilpotent-pair", "advection-diffusion", "scalar-delay", "delay-diffusion"} <= set(PROBLEMS)
    with pytest.raises(KeyError):
        get_problem("nope")
