import math
from dataclasses import replace

import numpy as np
import pytest

from thinfilm import detstep
from thinfilm.splitting import (
    NoiseParams,
    SplittingConfig,
    entropy_production_audit,
    ensemble_stoch_gain_slope,
    fit_loglog_slope,
    observable_columns,
    run_trajectory,
    self_convergence_study,
)
from thinfilm.torus import TorusGrid

TWO_PI = 2 * math.pi


def smooth(n=16):
    g = TorusGrid(n)
    return 1.0 + 0.2 * np.sin(TWO_PI * g.X) * np.cos(TWO_PI * g.Y) + 0.1 * np.cos(TWO_PI * (g.X - g.Y))


NOISY = NoiseParams(kmax=1, sigma=1.0)


def test_config_validation():
    with pytest.raises(ValueError, match=r"alpha must lie in \(-1,0\)"):
        SplittingConfig(T=1.0, N=1, alpha_list=(0.5,))
    with pytest.raises(ValueError, match="q must exceed 2"):
        SplittingConfig(T=1.0, N=1, q=2.0)
    with pytest.raises(ValueError):
        SplittingConfig(T=0.0, N=1)
    with pytest.raises(ValueError):
        SplittingConfig(T=1.0, N=-1)
    cfg = SplittingConfig(T=1.0, N=3, q=3.0)
    assert cfg.delta == 0.25 and cfg.qprime == 1.5


def test_columns_and_times():
    cfg = SplittingConfig(T=1e-3, N=3, n=16, noise=NOISY, alpha_list=(-0.5, -0.2), hs_list=(1.0, 0.5),
                          snapshot_cadence=2)
    rec = run_trajectory(smooth(), cfg)
    assert list(rec.columns) == observable_columns(cfg)
    assert "entropy_alpha_-0.2" in rec.columns and "homog_hs_0.5" in rec.columns
    t = rec.times
    assert t[0] == 0.0 and t[-1] == cfg.T
    assert np.all(np.diff(t) > 0)
    # every macro boundary and every phase midpoint is on the clock
    for j in range(cfg.N + 1):
        assert np.any(np.isclose(t, (j + 0.5) * cfg.delta, rtol=0, atol=1e-15))
        assert np.any(np.isclose(t, (j + 1) * cfg.delta, rtol=0, atol=1e-15))


def test_mass_is_conserved_with_noise():
    cfg = SplittingConfig(T=2e-3, N=7, n=16, noise=NOISY, epsilon=0.05)
    rec = run_trajectory(smooth(), cfg)
    m = rec.columns["mass"]
    assert np.max(np.abs(m - m[0])) < 1e-11


def test_noiseless_splitting_matches_single_flow():
    u0 = smooth()
    cfg = SplittingConfig(T=1e-3, N=3, n=16, keep_boundary_fields=True)
    rec = run_trajectory(u0, cfg)
    ref = detstep.advance(u0, cfg.T, grid=TorusGrid(16)).v_end
    assert np.max(np.abs(rec.boundary_fields[-1][2] - ref)) < 1e-8
    assert all(g == 0.0 for g in rec.macro["stoch_entropy_gain"][-0.5])


def test_constant_data_without_noise_stays_constant():
    u0 = np.full((16, 16), 0.5)
    rec = run_trajectory(u0, SplittingConfig(T=1e-2, N=4, n=16, keep_boundary_fields=True))
    assert np.array_equal(rec.boundary_fields[-1][2], u0)
    assert np.all(rec.columns["energy"] == 0.0)


def test_same_seed_reproduces_and_seeds_differ():
    cfg = SplittingConfig(T=1e-3, N=3, n=16, noise=NOISY, seed=5)
    a = run_trajectory(smooth(), cfg)
    b = run_trajectory(smooth(), cfg)
    c = run_trajectory(smooth(), replace(cfg, trajectory=1))
    for k in a.columns:
        assert np.array_equal(a.columns[k], b.columns[k])
    assert not np.array_equal(a.columns["energy"], c.columns["energy"])


def test_cadence_does_not_change_the_path():
    cfg = SplittingConfig(T=1e-3, N=3, n=16, noise=NOISY, seed=2, keep_boundary_fields=True)
    a = run_trajectory(smooth(), cfg)
    b = run_trajectory(smooth(), replace(cfg, snapshot_cadence=3, keep_snapshots=True))
    assert np.array_equal(a.boundary_fields[-1][2], b.boundary_fields[-1][2])
    assert len(b.times) > len(a.times)
    assert len(b.snapshots) == len(b.times)


def test_csv_round_trip(tmp_path):
    rec = run_trajectory(smooth(), SplittingConfig(T=1e-3, N=2, n=16, noise=NOISY))
    path = tmp_path / "obs.csv"
    rec.write_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    np.testing.assert_array_equal(data["t"], rec.times)
    np.testing.assert_array_equal(data["energy"], rec.columns["energy"])


def test_fit_loglog_slope():
    x = np.array([0.1, 0.05, 0.025])
    assert fit_loglog_slope(x, 3 * x**1.5) == pytest.approx(1.5)


def test_lie_splitting_is_first_order_without_noise():
    # the heat part does not commute with the thin-film part, so the splitting error is O(delta)
    # a fine det step keeps the first-order IMEX error below the splitting error
    cfg = SplittingConfig(T=2e-4, N=0, n=16, epsilon=5.0, det_controls=detstep.DetControls(dt_init=1e-7),
                          stoch_controls=replace(SplittingConfig(T=1, N=0).stoch_controls, tau_max=2e-4 / 1024))
    table = self_convergence_study(smooth(), cfg, [1, 3, 7])
    assert table.flag == ""
    assert all(d1 > d2 for d1, d2 in zip(table.differences, table.differences[1:]))
    assert table.order >= 1.0 - 0.1


def test_convergence_study_with_trivial_noise_reports_order_or_none():
    cfg = SplittingConfig(T=1e-3, N=0, n=16, epsilon=0.1)
    table = self_convergence_study(smooth(), cfg, [1, 3])
    assert table.order is None or math.isfinite(table.order)
    assert len(table.differences) == 1


def test_unpaired_study_is_flagged():
    cfg = SplittingConfig(T=1e-3, N=0, n=16, noise=NOISY)
    table = self_convergence_study(smooth(), cfg, [1, 3], paired_noise=False)
    assert table.order is None and table.flag == "unpaired noise"


def test_convergence_study_rejects_bad_lists():
    cfg = SplittingConfig(T=1e-3, N=0, n=16)
    with pytest.raises(ValueError):
        self_convergence_study(smooth(), cfg, [3, 1])
    with pytest.raises(ValueError):
        self_convergence_study(smooth(), cfg, [2, 3])  # 3 phases do not divide 40 substeps


def test_entropy_audit_constant_field():
    u0 = np.full((16, 16), 4.0)
    cfg = SplittingConfig(T=1e-3, N=1, n=16, kappa=1.0, keep_boundary_fields=True)
    rec = run_trajectory(u0, cfg)
    audit = entropy_production_audit(rec, -0.5)
    assert audit.per_step_det == [0.0, 0.0]
    assert audit.per_step_stoch == [0.0, 0.0]
    assert rec.columns["entropy_alpha_-0.5"][0] == pytest.approx(2.0, abs=1e-12)


def test_entropy_audit_matches_run_values():
    cfg = SplittingConfig(T=1e-3, N=3, n=16, noise=NOISY, keep_boundary_fields=True)
    rec = run_trajectory(smooth(), cfg)
    from_fields = entropy_production_audit(rec, -0.5)
    stored = entropy_production_audit(replace(rec, boundary_fields=[]), -0.5)
    np.testing.assert_allclose(from_fields.per_step_stoch, stored.per_step_stoch, rtol=0, atol=1e-15)
    np.testing.assert_allclose(from_fields.per_step_det, stored.per_step_det, rtol=0, atol=1e-15)
    assert all(d >= -1e-14 for d in from_fields.per_step_det)
    with pytest.raises(ValueError):
        entropy_production_audit(replace(rec, boundary_fields=[]), -0.5, kappa=0.5)


def test_ensemble_gain_slope_needs_positive_means():
    recs = {N: [run_trajectory(np.full((16, 16), 1.0), SplittingConfig(T=1e-3, N=N, n=16))] for N in (1, 3)}
    slope, means = ensemble_stoch_gain_slope(recs, -0.5)
    assert math.isnan(slope) and set(means) == {1, 3}


def test_negative_initial_data_rejected():
    u0 = smooth()
    u0[0, 0] = -1e-3
    with pytest.raises(ValueError):
        run_trajectory(u0, SplittingConfig(T=1e-3, N=1, n=16))
