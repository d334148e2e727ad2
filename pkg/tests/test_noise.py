import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thinfilm.noise import (
    KeyedNoise,
    ModeFields,
    NoiseKey,
    NoiseMode,
    NoiseModeSet,
    PairedNoise,
    apply_A,
    apply_B,
    apply_correction,
    build_mode_set,
    coercivity_kernel,
    coercivity_probe,
    correction_flux,
    eval_xi,
    sample_increment,
)
from thinfilm.torus import TorusGrid, VectorField

from conftest import band_limited

TWO_PI = 2 * math.pi


def single_wavevector(k, lam):
    return NoiseModeSet((NoiseMode(k, "x", lam), NoiseMode(k, "y", lam)), max(map(abs, k)), lam, 0.0)


# -- mode sets ----------------------------------------------------------------
def test_mode_set_counts_and_coefficients():
    m0 = build_mode_set(0, 0.7, 1.0)
    assert m0.mode_count == 2
    assert [m.lam for m in m0.modes] == [0.7, 0.7]
    m1 = build_mode_set(1, 1.0, 0.0)
    assert m1.mode_count == 18
    assert all(m.lam == 1.0 for m in m1.modes)
    m2 = build_mode_set(2, 2.0, 0.5)
    assert m2.mode_count == 2 * 25
    lam = {(m.k, m.component): m.lam for m in m2.modes}
    assert lam[((1, -2), "y")] == pytest.approx(2.0 / math.sqrt(6.0))
    assert all(m.lam == 0.0 for m in build_mode_set(2, 0.0, 0.0).modes)


@given(st.integers(0, 3), st.floats(0, 5), st.floats(0, 3))
def test_mode_sets_are_symmetric(kmax, sigma, r):
    ms = build_mode_set(kmax, sigma, r)
    assert ms.is_symmetric()
    assert ms.mode_count == 2 * (2 * kmax + 1) ** 2
    assert ms.spectrum_mass == pytest.approx(sum(m.lam**2 for m in ms.modes))


def test_asymmetric_set_detected():
    ms = NoiseModeSet((NoiseMode((1, 0), "x", 1.0), NoiseMode((1, 0), "y", 0.5)), 1, 1.0, 0.0)
    assert not ms.is_symmetric()


def test_mode_set_validation():
    with pytest.raises(ValueError):
        build_mode_set(-1, 1.0, 0.0)
    with pytest.raises(ValueError):
        build_mode_set(1, -1.0, 0.0)


def test_manifest_is_json():
    man = json.loads(json.dumps(build_mode_set(1, 0.5, 1.0).manifest()))
    assert set(man) == {"kmax", "sigma", "decay_r", "spectrum_mass", "mode_count"}
    assert man["mode_count"] == 18


def test_fields_reject_nyquist_modes():
    with pytest.raises(ValueError):
        ModeFields(build_mode_set(4, 1.0, 0.0), TorusGrid(8))


# -- basis --------------------------------------------------------------------
def test_xi_examples(grid32):
    g = grid32
    np.testing.assert_array_equal(eval_xi((0, 0), g), 1.0)
    norm = 1.0 / math.sqrt(1 + 4 * math.pi**2 + 16 * math.pi**4)
    np.testing.assert_allclose(eval_xi((1, 0), g), math.sqrt(2) * np.sin(TWO_PI * g.X) * norm, atol=1e-14)
    np.testing.assert_allclose(eval_xi((0, -1), g), math.sqrt(2) * np.cos(TWO_PI * g.Y) * norm, atol=1e-14)


@pytest.mark.parametrize("k", [(a, b) for a in range(-3, 4) for b in range(-3, 4)])
def test_xi_w22_normalization(k, grid32):
    g = grid32
    xi = eval_xi(k, g)
    gr = g.gradient(xi)
    total = g.inner(xi, xi) + g.inner_vec(gr, gr) + sum(g.inner(h, h) for h in g.hessian(xi))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_gram_matrix_is_identity():
    from thinfilm.verify import check_orthonormality

    assert check_orthonormality(False).measured < 1e-9


# -- operators ----------------------------------------------------------------
def test_apply_B_examples(grid32):
    g = grid32
    f = ModeFields(build_mode_set(0, 2.0, 0.0), g)
    assert np.abs(apply_B(np.full((32, 32), 3.0), 0, f)).max() < 1e-14
    np.testing.assert_allclose(apply_B(np.sin(TWO_PI * g.Y), 0, f), 0.0, atol=1e-12)
    np.testing.assert_allclose(apply_B(np.sin(TWO_PI * g.X), 0, f), 2 * TWO_PI * np.cos(TWO_PI * g.X), atol=1e-12)


@pytest.mark.parametrize("k", [(1, 0), (1, -1), (0, 2)])
def test_correction_of_constant(k, grid32):
    # x-mode gives (lam^2 c / 4) d_xx xi^2 and the y-mode the d_yy analogue
    g = grid32
    lam, c = 1.5, 0.8
    f = ModeFields(single_wavevector(k, lam), g)
    xi2 = eval_xi(k, g) ** 2
    expected = lam**2 * c / 4 * g.laplacian(xi2)
    np.testing.assert_allclose(apply_correction(np.full((32, 32), c), f), expected, atol=1e-10)


def test_correction_of_translation_noise_is_laplacian(grid32, rng):
    g = grid32
    sigma = 0.9
    f = ModeFields(build_mode_set(0, sigma, 0.0), g)
    u = band_limited(rng, g, 4)
    np.testing.assert_allclose(apply_correction(u, f), 0.5 * sigma**2 * g.laplacian(u), atol=1e-12 * 1e3)
    assert np.all(apply_correction(np.zeros((32, 32)), f) == 0.0)


def test_aggregated_flux_matches_mode_sum(grid32, rng):
    g = grid32
    f = ModeFields(build_mode_set(2, 1.3, 0.7), g)
    u = band_limited(rng, g, 3, 1.0)
    agg = g.divergence(correction_flux(u, g.gradient(u), f))
    np.testing.assert_allclose(agg, apply_correction(u, f), atol=1e-11)


def test_batched_correction_matches_per_mode_operators(grid32, rng):
    g = grid32
    f = ModeFields(build_mode_set(2, 1.3, 0.7), g)
    u = band_limited(rng, g, 3, 1.0)
    loop = np.zeros_like(u)
    for l in range(f.n_modes):
        psi = f.psi(l)
        d = apply_B(u, l, f)
        loop += 0.5 * f.lam[l] * g.divergence(VectorField(d * psi.x, d * psi.y))
    np.testing.assert_allclose(apply_correction(u, f), loop, atol=1e-11)
    probe = coercivity_probe(u, 0.0, f)
    assert probe.lhs0 == pytest.approx(2 * g.inner(loop, u) + sum(g.l2_norm(apply_B(u, l, f)) ** 2
                                                                 for l in range(f.n_modes)), rel=1e-12)


def test_apply_A_examples(grid32, rng):
    g = grid32
    quiet = ModeFields(build_mode_set(1, 0.0, 0.0), g)
    s = np.sin(TWO_PI * g.X)
    np.testing.assert_allclose(apply_A(s, 1.0, quiet), -4 * math.pi**2 * s, atol=1e-10)
    noisy = ModeFields(build_mode_set(1, 1.0, 0.0), g)
    u = band_limited(rng, g, 4)
    np.testing.assert_array_equal(apply_A(u, 0.0, noisy), apply_correction(u, noisy))
    for _ in range(5):
        u = rng.standard_normal((32, 32))
        assert abs(g.integrate(apply_A(u, 0.3, noisy))) <= 1e-12 * g.l2_norm(u)
        assert abs(g.fft(apply_A(u, 0.3, noisy))[0, 0]) < 1e-13
        assert abs(g.fft(apply_B(u, 5, noisy))[0, 0]) < 1e-13
    with pytest.raises(ValueError):
        apply_A(u, -1.0, noisy)


# -- coercivity ---------------------------------------------------------------
def test_coercivity_without_noise(grid32, rng):
    g = grid32
    f = ModeFields(build_mode_set(1, 0.0, 0.0), g)
    u = band_limited(rng, g, 4)
    p = coercivity_probe(u, 0.25, f)
    assert p.lhs0 == pytest.approx(-0.5 * p.grad_sq, rel=1e-12)
    assert p.lhs1 == pytest.approx(-0.5 * p.lap_sq, rel=1e-12)


def test_coercivity_of_constant(grid32):
    # with u = c the identity is c^2 sum lam^2 ||div psi||^2 (each B_l u = c lam div psi_l)
    g = grid32
    f = ModeFields(build_mode_set(1, 1.0, 0.5), g)
    c = 1.7
    p = coercivity_probe(np.full((32, 32), c), 0.0, f)
    oracle = c**2 * sum(f.lam[l] ** 2 * g.integrate(g.divergence(f.psi(l)) ** 2) for l in range(f.n_modes))
    assert p.lhs0 == pytest.approx(oracle, rel=1e-10)
    assert p.identity0 == pytest.approx(p.lhs0, rel=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(0, 0.1))
def test_coercivity_identity_random(seed, eps):
    g = TorusGrid(16)
    f = ModeFields(build_mode_set(2, 1.0, 0.5), g)
    u = band_limited(np.random.default_rng(seed), g, 3, 0.5)
    p = coercivity_probe(u, eps, f)
    assert p.lhs0 == pytest.approx(p.identity0, rel=1e-9, abs=1e-12)
    K = coercivity_kernel(f)
    assert p.lhs0 + 2 * eps * p.grad_sq <= max(K.max(), 0.0) * p.l2_sq * (1 + 1e-10) + 1e-14


def test_sign_flip_breaks_identity(grid32, rng):
    f = ModeFields(build_mode_set(1, 1.0, 0.0), grid32, correction_sign=-1.0)
    p = coercivity_probe(band_limited(rng, grid32, 3, 1.0), 0.0, f)
    assert abs(p.lhs0 - p.identity0) > 1e-3 * abs(p.identity0)


# -- increments ---------------------------------------------------------------
def test_increment_statistics():
    draws = np.array([sample_increment(1.0, NoiseKey(3, 0, 0, s), 1).dbeta[0] for s in range(100_000)])
    assert abs(draws.mean()) < 4 / math.sqrt(len(draws))
    assert abs(draws.var() - 1.0) < 0.05


def test_increments_are_keyed():
    a = sample_increment(0.01, NoiseKey(1, 2, 3, 4), 6)
    b = sample_increment(0.01, NoiseKey(1, 2, 3, 4), 6)
    c = sample_increment(0.01, NoiseKey(1, 2, 3, 5), 6)
    np.testing.assert_array_equal(a.dbeta, b.dbeta)
    assert not np.array_equal(a.dbeta, c.dbeta)
    assert a.dt == 0.01 and a.dbeta.shape == (6,)
    with pytest.raises(ValueError):
        sample_increment(0.0, NoiseKey(1, 2, 3, 4), 6)


def test_keyed_noise_is_order_independent():
    src = KeyedNoise(7, 1, 4)
    later = src.increments(5, 3, 1e-3)
    earlier = src.increments(0, 3, 1e-3)
    np.testing.assert_array_equal(KeyedNoise(7, 1, 4).increments(5, 3, 1e-3), later)
    assert not np.array_equal(later, earlier)
    assert not np.array_equal(KeyedNoise(7, 2, 4).increments(5, 3, 1e-3), later)


def test_paired_noise_aggregates_one_path():
    p = PairedNoise(11, 0, 2, horizon=1.0, fine_steps=16)
    coarse = np.concatenate([p.increments(j, 2, 1.0 / 8) for j in range(4)])  # 4 phases x 2 substeps
    fine = np.concatenate([p.increments(j, 4, 1.0 / 16) for j in range(4)])
    np.testing.assert_allclose(coarse, fine.reshape(8, 2, 2).sum(axis=1), atol=1e-15)
    np.testing.assert_allclose(coarse.sum(axis=0), p.fine.sum(axis=0), atol=1e-14)
    with pytest.raises(ValueError):
        p.increments(0, 3, 1.0 / 12)
