"""Invariant checks run by ``thinfilm verify``.

Each check returns a :class:`CheckResult`; the report is the list of their
dicts.  The ``fast`` suite fits in well under a minute on one core; ``full``
adds the refinement ladders and the larger samples.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from . import detstep
from .diagnostics import G_alpha
from .noise import ModeFields, PairedNoise, build_mode_set, coercivity_kernel, coercivity_probe, eval_xi
from .splitting import NoiseParams, SplittingConfig, run_trajectory
from .stochstep import StochControls, advance_with_increments, shift_field
from .torus import TorusGrid, VectorField

__all__ = [
    "CheckResult",
    "FAULTS",
    "coercivity_samples",
    "linear_decay_ratio",
    "random_band_limited",
    "run_suite",
    "translation_study",
    "weak_form_ladder",
]

FAULTS = ("correction_sign",)


@dataclass
class CheckResult:
    check_name: str
    status: str  # "pass" | "fail"
    measured: float
    tolerance: float
    samples: int
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        d = {
            "check_name": self.check_name,
            "status": self.status,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "samples": self.samples,
        }
        if self.detail:
            d["detail"] = self.detail
        return d


def _result(name, ok, measured, tol, samples, detail="") -> CheckResult:
    return CheckResult(name, "pass" if ok else "fail", float(measured), float(tol), int(samples), detail)


def _mode_fields(kmax, sigma, decay_r, grid, fault=None) -> ModeFields:
    sign = -1.0 if fault == "correction_sign" else 1.0
    return ModeFields(build_mode_set(kmax, sigma, decay_r), grid, correction_sign=sign)


# -- shared numerical experiments -------------------------------------------
def random_band_limited(rng: np.random.Generator, grid: TorusGrid, kband: int, mean: float = 0.0) -> np.ndarray:
    """Random real trigonometric polynomial with ``|k|_inf <= kband``."""
    k = np.arange(-kband, kband + 1)
    c = rng.standard_normal((2, k.size, k.size))
    ph = 2 * math.pi * (k[:, None, None, None] * grid.X + k[None, :, None, None] * grid.Y)
    f = np.tensordot(c[0], np.cos(ph), axes=2) + np.tensordot(c[1], np.sin(ph), axes=2)
    return mean + f / k.size


def linear_decay_ratio(n: int = 32, t: float = 1e-3, amp: float = 1e-4, dt_init: float = 1e-6) -> float:
    """Amplitude ratio of a small ``sin(2 pi x)`` perturbation on a unit film after time ``t``."""
    g = TorusGrid(n)
    v0 = 1.0 + amp * np.sin(2 * math.pi * g.X)
    rep = detstep.advance(v0, t, controls=detstep.DetControls(dt_init=dt_init), grid=g)
    return abs(g.fft(rep.v_end)[0, 1]) / abs(g.fft(v0)[0, 1])


def _weak_fields(grid: TorusGrid, times) -> tuple[list, list]:
    v_path, J_path = [], []
    for t in times:
        v = np.exp(0.5 * np.sin(2 * math.pi * grid.X + t) * np.cos(2 * math.pi * grid.Y)
                   + 0.4 * np.cos(2 * math.pi * (grid.X - grid.Y) + 0.6))
        gp = grid.gradient(grid.laplacian(v))
        v_path.append(v)
        J_path.append(VectorField(v * v * gp.x, v * v * gp.y))
    return v_path, J_path


def _test_fields(grid: TorusGrid) -> list[VectorField]:
    X, Y = grid.X, grid.Y
    tp = 2 * math.pi
    return [
        VectorField(np.sin(tp * X) * np.cos(tp * Y), np.zeros_like(X)),
        VectorField(np.sin(2 * tp * X + 0.3), np.sin(tp * X) * np.cos(tp * Y + 0.7)),
        VectorField(np.cos(2 * tp * X + 0.2), np.cos(tp * (X + 2 * Y) + 0.5)),
    ]


def weak_form_ladder(ns=(16, 64)) -> dict[int, list[float]]:
    """Weak-form residual of a smooth positive non-band-limited path, per grid size and test field."""
    out = {}
    times = (0.0, 0.5, 1.0)
    for n in ns:
        g = TorusGrid(n)
        v_path, J_path = _weak_fields(g, times)
        out[n] = [detstep.weak_form_residual(v_path, J_path, eta, grid=g) for eta in _test_fields(g)]
    return out


@dataclass
class TranslationStudy:
    nsubs: tuple
    rms_error: list  # RMS over paths of ||w - exact||_{L^2}
    max_rel_error: list  # max over paths of ||w - exact|| / ||exact||
    order: float
    max_l2_dev: float  # relative deviation of ||w||_{L^2} from ||w0||, all checkpoints and paths
    max_h1_dev: float
    paths: int
    order_stderr: float = float("nan")  # bootstrap over paths


def translation_w0(grid: TorusGrid) -> np.ndarray:
    tp = 2 * math.pi
    return 1.0 + 0.3 * np.sin(tp * grid.X) + 0.2 * np.cos(tp * grid.Y) + 0.1 * np.sin(tp * (grid.X + grid.Y))


def translation_study(
    seed: int = 1,
    paths: int = 128,
    n: int = 16,
    sigma: float = 1.0,
    T: float = 5e-4,
    nsubs=(512, 1024, 2048, 4096),
    checkpoints: int = 16,
    fault: str | None = None,
) -> TranslationStudy:
    """Constant-coefficient transport noise: the exact solution is ``w0(x + sigma beta(t))``.

    All resolutions sum the same fine Brownian path per trajectory.
    """
    g = TorusGrid(n)
    fields = _mode_fields(0, sigma, 0.0, g, fault)
    w0 = translation_w0(g)
    fine_steps = max(nsubs)
    fine = np.stack([PairedNoise(seed, p, 2, T, fine_steps).fine for p in range(paths)], axis=1)
    beta = fine.sum(axis=0)
    exact = np.stack([shift_field(w0, sigma * beta[p]) for p in range(paths)])
    l2_0 = g.l2_norm(w0)
    h1_0 = g.bessel_norm(w0, 1.0)
    controls = StochControls(store_increments=False)
    rms, rel, per_path = [], [], []
    l2_dev = h1_dev = 0.0
    for nsub in nsubs:
        r = fine_steps // nsub
        db = fine.reshape(nsub, r, paths, 2).sum(axis=1)
        w = np.broadcast_to(w0, (paths, n, n)).copy()
        chunk = nsub // checkpoints
        for c in range(checkpoints):
            rep = advance_with_increments(w, T / checkpoints, 0.0, fields, db[c * chunk:(c + 1) * chunk], controls)
            w = rep.w_end
            if nsub == max(nsubs):
                for p in range(paths):
                    l2_dev = max(l2_dev, abs(g.l2_norm(w[p]) - l2_0) / l2_0)
                    h1_dev = max(h1_dev, abs(g.bessel_norm(w[p], 1.0) - h1_0) / h1_0)
        errs = np.array([g.l2_norm(w[p] - exact[p]) for p in range(paths)])
        per_path.append(errs)
        rms.append(float(np.sqrt(np.mean(errs**2))))
        rel.append(float(max(errs[p] / g.l2_norm(exact[p]) for p in range(paths))))
    taus = [T / s for s in nsubs]
    if len(nsubs) < 2:
        return TranslationStudy(tuple(nsubs), rms, rel, float("nan"), l2_dev, h1_dev, paths)
    order = float(np.polyfit(np.log(taus), np.log(rms), 1)[0])
    sq = np.array(per_path) ** 2
    idx = np.random.default_rng(0).integers(0, paths, size=(400, paths))
    boot = [np.polyfit(np.log(taus), 0.5 * np.log(sq[:, i].mean(axis=1)), 1)[0] for i in idx]
    return TranslationStudy(tuple(nsubs), rms, rel, order, l2_dev, h1_dev, paths, float(np.std(boot, ddof=1)))


# -- checks -----------------------------------------------------------------
def check_orthonormality(full: bool, fault=None) -> CheckResult:
    g = TorusGrid(32)
    ks = [(a, b) for a in range(-3, 4) for b in range(-3, 4)]
    xis = [eval_xi(k, g) for k in ks]
    parts = []
    for xi in xis:
        gr = g.gradient(xi)
        parts.append((xi, gr, g.hessian(xi)))
    gram = np.empty((len(ks), len(ks)))
    for i, (a, ga, ha) in enumerate(parts):
        for j, (b, gb, hb) in enumerate(parts[: i + 1]):
            val = g.inner(a, b) + g.inner_vec(ga, gb) + sum(g.inner(p, q) for p, q in zip(ha, hb))
            gram[i, j] = gram[j, i] = val
    err = float(np.abs(gram - np.eye(len(ks))).max())
    return _result("orthonormality", err <= 1e-9, err, 1e-9, len(ks))


def coercivity_samples(count: int, fault=None, epsilon: float = 1e-2, seed: int = 0):
    """Coercivity probes of random fields with ``|k|_inf <= 4`` and random means, under a kmax=2 noise set."""
    g = TorusGrid(32)
    fields = _mode_fields(2, 1.0, 0.5, g, fault)
    rng = np.random.default_rng(seed)
    probes = [coercivity_probe(random_band_limited(rng, g, 4, rng.uniform(-1, 2)), epsilon, fields) for _ in range(count)]
    return g, fields, probes


def check_identity(full: bool, fault=None) -> CheckResult:
    count = 1000 if full else 200
    _, _, probes = coercivity_samples(count, fault)
    worst = max(abs(p.lhs0 - p.identity0) / max(abs(p.lhs0), abs(p.identity0), 1e-300) for p in probes)
    return _result("L0=I0", worst <= 1e-9, worst, 1e-9, count)


def check_coercivity_bound(full: bool, fault=None) -> CheckResult:
    """``L0 + 2 eps ||grad u||^2 <= C ||u||^2`` with ``C = max K^+`` from the identity kernel."""
    count = 1000 if full else 200
    eps = 1e-2
    _, fields, probes = coercivity_samples(count, fault, eps)
    C = max(float(coercivity_kernel(fields).max()), 0.0)
    ratios = [(p.lhs0 + 2 * eps * p.grad_sq) / p.l2_sq for p in probes]
    fitted = max(ratios)
    violations = sum(r > C * (1 + 1e-10) + 1e-12 for r in ratios)
    return _result("coercivity_bound", violations == 0, fitted, C, count, f"violations={violations}")


def check_mass(full: bool, fault=None) -> CheckResult:
    g = TorusGrid(32)
    u0 = 1.0 + 0.2 * np.sin(2 * math.pi * g.X) * np.cos(4 * math.pi * g.Y)
    cfg = SplittingConfig(T=1e-3, N=15, n=32, noise=NoiseParams(1, 0.5, 0.0), seed=5)
    fields = _mode_fields(1, 0.5, 0.0, g, fault)
    rec = run_trajectory(u0, cfg, mode_fields=fields)
    m = rec.columns["mass"]
    drift = float(np.abs(m - m[0]).max() / m[0])
    return _result("mass_conservation", drift <= 1e-11, drift, 1e-11, len(m))


def check_energy(full: bool, fault=None) -> CheckResult:
    g = TorusGrid(32)
    u0 = 1.0 + 0.4 * np.sin(2 * math.pi * g.X) * np.cos(2 * math.pi * g.Y) + 0.2 * np.cos(6 * math.pi * g.X)
    rep = detstep.advance(u0, 2e-3, grid=g)
    return _result("energy_monotone", rep.energy_violations == 0, rep.max_energy_rel_increase, 1e-8, rep.substeps_taken)


def check_entropy_closed_form(full: bool, fault=None) -> CheckResult:
    worst = 0.0
    count = 0
    for a in (-0.9, -0.5, -0.1):
        for t in (0.25, 1.0, 4.0):
            inner = lambda s: integrate.quad(lambda r: r ** (a - 1.0), 1.0, s, epsabs=1e-14, epsrel=1e-13)[0]
            num = integrate.quad(inner, 1.0, t, epsabs=1e-14, epsrel=1e-13)[0]
            worst = max(worst, abs(num - float(G_alpha(t, a))))
            count += 1
    worst = max(worst, abs(float(G_alpha(4.0, -0.5)) - 2.0))
    return _result("entropy_closed_form", worst <= 1e-8, worst, 1e-8, count + 1)


def check_linear_decay(full: bool, fault=None) -> CheckResult:
    expected = math.exp(-(2 * math.pi) ** 4 * 1e-3)
    ns = (32, 64) if full else (32,)
    worst = max(abs(linear_decay_ratio(n) / expected - 1.0) for n in ns)
    return _result("linear_decay", worst <= 1e-2, worst, 1e-2, len(ns))


def check_weak_form(full: bool, fault=None) -> CheckResult:
    ns = (16, 32, 64) if full else (16, 64)
    ladder = weak_form_ladder(ns)
    # residuals reach roundoff; floor the fine-grid value there
    gains = [ladder[ns[0]][i] / max(ladder[ns[-1]][i], 1e-16) for i in range(3)]
    ok = min(gains) >= 10.0
    if full:
        ok = ok and all(ladder[a][i] + 1e-14 >= ladder[b][i] for a, b in zip(ns[:-1], ns[1:]) for i in range(3))
    return _result("weak_form_refinement", ok, min(gains), 10.0, 3 * len(ns))


def check_translation(full: bool, fault=None) -> CheckResult:
    if full:
        st = translation_study(paths=128, fault=fault)
    else:
        st = translation_study(paths=8, nsubs=(4096,), fault=fault)
    worst = max(st.max_rel_error[-1], st.max_l2_dev, st.max_h1_dev)
    detail = f"rel_err={st.max_rel_error[-1]:.3g} l2_dev={st.max_l2_dev:.3g} h1_dev={st.max_h1_dev:.3g}"
    ok = worst <= 1e-3
    if full:
        detail += f" order={st.order:.3f}"
        ok = ok and 0.5 <= st.order <= 1.0
    return _result("translation_oracle", ok, worst, 1e-3, st.paths, detail)


CHECKS: list[Callable[[bool, str | None], CheckResult]] = [
    check_orthonormality,
    check_identity,
    check_coercivity_bound,
    check_mass,
    check_energy,
    check_entropy_closed_form,
    check_linear_decay,
    check_weak_form,
    check_translation,
]


def run_suite(suite: str = "fast", fault: str | None = None) -> list[CheckResult]:
    if suite not in ("fast", "full"):
        raise ValueError("suite must be 'fast' or 'full'")
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    results = []
    for check in CHECKS:
        t0 = time.perf_counter()
        res = check(suite == "full", fault)
        res.detail = (res.detail + " " if res.detail else "") + f"wall={time.perf_counter() - t0:.2f}s"
        results.append(res)
    return results
