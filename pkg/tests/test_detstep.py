import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thinfilm.detstep import (
    DetControls,
    MobilityParams,
    advance,
    cell_flux,
    entropy_dissipation_check,
    mobility,
    rhs,
    weak_form_residual,
)
from thinfilm.errors import NumericalFailure
from thinfilm.torus import TorusGrid, VectorField

from conftest import band_limited

TWO_PI = 2 * math.pi


def test_mobility_examples():
    assert mobility(2.0) == 4.0
    assert mobility(0.0, MobilityParams(0.3, 0.2)) == 0.0
    assert mobility(1.0, MobilityParams(delta=1.0)) == pytest.approx(0.5)
    # regularized family: tau^s m_d / (eps m_d + tau^s)
    md = 1.5**2 / (1 + 0.1 * 1.5**2)
    assert mobility(1.5, MobilityParams(0.1, 0.2, 5.0)) == pytest.approx(1.5**5 * md / (0.2 * md + 1.5**5))
    with pytest.raises(ValueError, match="negative film height"):
        mobility(-0.1)


def test_mobility_params_validation():
    with pytest.raises(ValueError):
        MobilityParams(delta=-1.0)
    with pytest.raises(ValueError):
        MobilityParams(s=4.0)


def test_controls_validation():
    with pytest.raises(ValueError):
        DetControls(dt_init=1e-6, dt_min=1e-5)
    with pytest.raises(ValueError):
        DetControls(face_mean="max")
    with pytest.raises(ValueError):
        DetControls(stabilize="implicit")


def test_rhs_constant_is_steady(grid32):
    r = rhs(np.full((32, 32), 0.6), MobilityParams(), grid32)
    assert np.all(r.dv_dt == 0.0)
    assert np.all(r.J.x == 0.0) and np.all(r.J.y == 0.0)


@pytest.mark.parametrize("n", [32, 64])
def test_rhs_linearized_rate(n):
    g = TorusGrid(n)
    a = 1e-4
    r = rhs(1 + a * np.sin(TWO_PI * g.X), MobilityParams(), g)
    mode = 2 * g.fft(r.dv_dt)[0, 1].imag * -1  # coefficient of sin(2 pi x)
    assert mode == pytest.approx(-(TWO_PI**4) * a, rel=1e-2)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["arithmetic", "harmonic"]))
def test_rhs_conserves_mass(seed, face_mean):
    g = TorusGrid(16)
    v = 0.2 + np.random.default_rng(seed).random((16, 16))
    r = rhs(v, MobilityParams(), g, face_mean)
    assert abs(g.integrate(r.dv_dt)) <= 1e-13 * g.l2_norm(v) * np.abs(r.dv_dt).max()


def test_rhs_energy_dissipation_is_exact(grid32, rng):
    # d/dt ||grad v||^2 = -2 <Lap v, dv/dt> = -2 sum M |grad_h p|^2 <= 0
    g = grid32
    v = band_limited(rng, g, 2, 3.0)
    r = rhs(v, MobilityParams(), g)
    rate = -2 * g.inner(g.laplacian(v), r.dv_dt)
    assert rate <= 0
    assert rate == pytest.approx(-2 * g.inner_vec(r.J, g.face_gradient(g.laplacian(v))), rel=1e-10)


def test_cell_flux_matches_definition(grid32):
    g = grid32
    v = 2 + np.sin(TWO_PI * g.X)
    J = cell_flux(v, grid=g)
    np.testing.assert_allclose(J.x, -(v**2) * TWO_PI**3 * np.cos(TWO_PI * g.X), atol=1e-8)
    np.testing.assert_allclose(J.y, 0.0, atol=1e-10)


def test_advance_constant_is_fixed_point():
    v0 = np.full((16, 16), 0.7)
    rep = advance(v0, 0.1, controls=DetControls(dt_init=1e-3))
    assert np.all(rep.v_end == 0.7)
    assert rep.energy_end == 0.0 and rep.clipped_mass == 0.0


def test_advance_linear_decay():
    g = TorusGrid(32)
    v0 = 1 + 1e-4 * np.sin(TWO_PI * g.X)
    rep = advance(v0, 1e-3, controls=DetControls(dt_init=1e-6), grid=g)
    ratio = abs(g.fft(rep.v_end)[0, 1]) / abs(g.fft(v0)[0, 1])
    assert ratio == pytest.approx(math.exp(-(TWO_PI**4) * 1e-3), rel=1e-2)
    assert abs(g.integrate(rep.v_end) - 1.0) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_advance_monitors(seed):
    g = TorusGrid(16)
    v0 = band_limited(np.random.default_rng(seed), g, 2, 1.5)
    v0 = np.maximum(v0, 0.05)
    rep = advance(v0, 2e-4, alphas=(-0.5,), grid=g)
    assert rep.energy_violations == 0
    assert rep.energy_end <= rep.energy_start * (1 + 1e-8)
    assert abs(g.integrate(rep.v_end) - g.integrate(v0)) <= 1e-12 * (1 + g.integrate(v0))
    assert rep.min_height >= -1e-8
    assert rep.entropy_end[-0.5] <= rep.entropy_start[-0.5] + 1e-12


def test_advance_records_path(grid32):
    v0 = 1 + 0.1 * np.cos(TWO_PI * grid32.Y)
    rep = advance(v0, 1e-4, controls=DetControls(dt_init=1e-5), grid=grid32, record_every=3)
    times = [t for t, _ in rep.path]
    assert times[0] == 0.0 and times[-1] == pytest.approx(1e-4)
    assert np.all(np.diff(times) > 0)
    assert rep.j_sq_integral > 0


def test_advance_failures():
    g = TorusGrid(16)
    bad = np.ones((16, 16))
    bad[0, 0] = -1.0
    with pytest.raises(NumericalFailure, match="positivity"):
        advance(bad, 1e-4, grid=g)
    v0 = 1 + 0.3 * np.sin(TWO_PI * g.X)
    with pytest.raises(NumericalFailure, match="non-convergence"):
        advance(v0, 1e-3, controls=DetControls(dt_init=1e-5, max_substeps=10), grid=g)
    with pytest.raises(ValueError):
        advance(v0, 0.0, grid=g)


def test_droplet_keeps_dry_region():
    from thinfilm.config import droplet

    g = TorusGrid(32)
    u0 = droplet(g, 0.5, 0.5, 0.3, 0.1)
    ctl = DetControls(face_mean="harmonic", stabilize="explicit")
    rep = advance(u0, 5e-4, controls=ctl, grid=g)
    assert rep.min_height >= -1e-8
    assert rep.clipped_mass <= 1e-10 * 5e-4
    assert np.count_nonzero(rep.v_end <= 1e-7) > 0


# -- weak form ----------------------------------------------------------------
def _spectral_path(g, fn, times):
    vs, Js = [], []
    for t in times:
        v = fn(g, t)
        gp = g.gradient(g.laplacian(v))
        vs.append(v)
        Js.append(VectorField(v * v * gp.x, v * v * gp.y))
    return vs, Js


def test_weak_form_constant_field(grid32):
    g = grid32
    v = [np.full((32, 32), 1.3)] * 2
    J = [VectorField(np.zeros((32, 32)), np.zeros((32, 32)))] * 2
    eta = VectorField(np.sin(TWO_PI * g.Y), np.cos(TWO_PI * g.X))
    assert weak_form_residual(v, J, eta, grid=g) == 0.0


@pytest.mark.parametrize("n", [16, 32, 64])
def test_weak_form_band_limited_field_is_exact(n):
    g = TorusGrid(n)
    vs, Js = _spectral_path(g, lambda g, t: 2 + np.sin(TWO_PI * g.X) * np.cos(TWO_PI * g.Y), [0.0])
    eta = VectorField(np.sin(TWO_PI * g.Y), np.zeros((n, n)))
    assert weak_form_residual(vs, Js, eta, grid=g) < 1e-12


def test_weak_form_constant_test_field(grid32):
    g = grid32
    vs, Js = _spectral_path(g, lambda g, t: 2 + np.sin(TWO_PI * (g.X + t)) * np.cos(TWO_PI * g.Y), [0.0, 0.3])
    eta = VectorField(np.full((32, 32), 0.4), np.full((32, 32), -1.1))
    lhs = rhs_ = 0.0
    for v, J in zip(vs, Js):
        gv = g.gradient(v)
        lhs += 0.5 * g.inner_vec(J, eta)
        rhs_ += 0.5 * g.integrate((gv.x**2 + gv.y**2) * (gv.x * eta.x + gv.y * eta.y))
    assert weak_form_residual(vs, Js, eta, grid=g) == pytest.approx(abs(lhs - rhs_) / (1 + abs(lhs)), abs=1e-14)


def test_weak_form_detects_wrong_flux(grid32):
    g = grid32
    vs, Js = _spectral_path(g, lambda g, t: 2 + np.sin(TWO_PI * g.X) * np.cos(TWO_PI * g.Y), [0.0])
    eta = VectorField(np.cos(TWO_PI * g.X) * np.cos(TWO_PI * g.Y), np.zeros((32, 32)))
    wrong = [VectorField(2 * J.x, 2 * J.y) for J in Js]
    assert weak_form_residual(vs, wrong, eta, grid=g) > 0.1


def test_weak_form_refines_for_non_band_limited_field():
    from thinfilm.verify import weak_form_ladder

    ladder = weak_form_ladder((8, 16, 32))
    for i in range(3):
        assert ladder[8][i] > 1e-6
        assert ladder[16][i] < ladder[8][i] / 100


# -- entropy dissipation ------------------------------------------------------
def test_entropy_dissipation_constant_path():
    v = np.full((16, 16), 4.0)
    res = entropy_dissipation_check([(0.0, v), (1.0, v)], -0.5)
    assert res == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("n", [32, 64])
def test_entropy_dissipation_positive(n):
    g = TorusGrid(n)
    v0 = 1 + 0.1 * np.sin(TWO_PI * g.X)
    rep = advance(v0, 1e-3, controls=DetControls(dt_init=1e-5), grid=g, record_every=5)
    res = entropy_dissipation_check(rep.path, -0.5)
    assert res.lhs > 0 and res.rhs > 0 and res.ratio > 0
