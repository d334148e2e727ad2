"""Deterministic thin-film substep ``dv/dt = -div(m(v) grad Lap v)``.

The pressure ``p = Lap v`` is spectral; the flux lives on cell faces with a
face-averaged mobility and a one-sided pressure difference, and the update
is the conservative difference of that flux.  Because the face difference
is the negative adjoint of the face divergence, the semi-discrete energy
``||grad v||^2`` decays like ``-2 sum M |grad_h p|^2`` exactly.

Time stepping is a stabilized IMEX Euler scheme: the explicit increment is
filtered through ``(I + dt Mbar Lap^2)^-1`` with ``Mbar`` the largest
pointwise mobility.  The filter is nonlocal and smears increments into dry
regions, so runs with contact lines can switch it off (``stabilize =
"explicit"``); with harmonic face mobilities the explicit step then leaves
dry cells untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .diagnostics import EntropySpec, G_alpha, dissipation_functionals, entropy, j_norm
from .errors import NumericalFailure
from .torus import TorusGrid, VectorField, clip_negative_conservative

__all__ = [
    "DetControls",
    "DetStepReport",
    "MobilityParams",
    "Rhs",
    "advance",
    "cell_flux",
    "entropy_dissipation_check",
    "mobility",
    "rhs",
    "weak_form_residual",
]


@dataclass(frozen=True)
class MobilityParams:
    """Regularized mobility ``m_{delta,eps}``; all zeros gives ``tau^2``."""

    delta: float = 0.0
    eps_m: float = 0.0
    s: float = 5.0

    def __post_init__(self):
        if self.delta < 0 or self.eps_m < 0:
            raise ValueError("mobility regularization parameters must be non-negative")
        if self.s <= 4:
            raise ValueError("mobility power s must exceed 4")


@dataclass(frozen=True)
class DetControls:
    dt_init: float = 1e-5
    dt_min: float = 1e-14
    max_substeps: int = 1_000_000
    positivity_tol: float = 1e-8
    mass_clip_budget: float = 1e-10  # per unit time
    face_mean: str = "arithmetic"
    dealias: bool = False
    energy_rtol: float = 1e-10
    grow_after: int = 4
    stabilize: str = "imex"  # or "explicit" for runs with dry regions

    def __post_init__(self):
        if self.dt_init <= 0 or self.dt_min <= 0 or self.dt_min > self.dt_init:
            raise ValueError("need 0 < dt_min <= dt_init")
        if self.face_mean not in ("arithmetic", "harmonic"):
            raise ValueError("face_mean must be 'arithmetic' or 'harmonic'")
        if self.stabilize not in ("imex", "explicit"):
            raise ValueError("stabilize must be 'imex' or 'explicit'")
        if self.max_substeps < 1:
            raise ValueError("max_substeps must be positive")


def mobility(tau, params: MobilityParams = MobilityParams()):
    """``m(tau) = tau^s m_delta / (eps_m m_delta + tau^s)`` with ``m_delta = tau^2/(1+delta tau^2)``."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise ValueError("negative film height")
    md = t * t / (1.0 + params.delta * t * t)
    if params.eps_m == 0.0:
        return md if md.ndim else float(md)
    ts = t**params.s
    den = params.eps_m * md + ts
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, ts * md / np.where(den > 0, den, 1.0), 0.0)
    return out if out.ndim else float(out)


class Rhs(NamedTuple):
    dv_dt: np.ndarray
    J: VectorField


def _grid(v: np.ndarray, grid: TorusGrid | None) -> TorusGrid:
    return grid if grid is not None else TorusGrid(v.shape[0])


def rhs(
    v: np.ndarray,
    params: MobilityParams = MobilityParams(),
    grid: TorusGrid | None = None,
    face_mean: str = "arithmetic",
    tol_neg: float = 1e-8,
) -> Rhs:
    """Time derivative and face flux ``J = m(v) grad Lap v``; ``dv/dt = -div J``."""
    g = _grid(v, grid)
    if v.min() < -tol_neg:
        raise ValueError("negative film height")
    m = mobility(np.maximum(v, 0.0), params)
    M = g.face_average(m, face_mean)
    gp = g.face_gradient(g.laplacian(v))
    J = VectorField(M.x * gp.x, M.y * gp.y)
    return Rhs(-g.face_divergence(J), J)


def cell_flux(v: np.ndarray, params: MobilityParams = MobilityParams(), grid: TorusGrid | None = None) -> VectorField:
    """Cell-centred ``m(v) grad Lap v`` with spectral derivatives."""
    g = _grid(v, grid)
    m = mobility(np.maximum(v, 0.0), params)
    gp = g.gradient(g.laplacian(v))
    return VectorField(m * gp.x, m * gp.y)


@dataclass
class DetStepReport:
    v_end: np.ndarray
    J_time_avg: VectorField
    substeps_taken: int
    energy_start: float
    energy_end: float
    entropy_start: dict
    entropy_end: dict
    min_height: float
    clipped_mass: float = 0.0
    halvings: int = 0
    max_energy_rel_increase: float = 0.0
    energy_violations: int = 0
    j_sq_integral: float = 0.0
    path: list = field(default_factory=list)


def _energy_floor(v: np.ndarray) -> float:
    # rounding noise of spectral derivatives; only matters for near-constant fields
    return 1e-24 * max(1.0, float(np.max(np.abs(v))) ** 2)


def advance(
    v0: np.ndarray,
    duration: float,
    params: MobilityParams = MobilityParams(),
    controls: DetControls = DetControls(),
    alphas: Sequence[float] = (),
    qprime: float = 1.5,
    grid: TorusGrid | None = None,
    record_every: int = 0,
) -> DetStepReport:
    """Integrate the thin-film equation over ``duration``.

    A substep is rejected and halved when the energy grows beyond
    ``energy_rtol``, when the height drops below ``-positivity_tol``, or when
    clipping would exceed the clipped-mass budget.  Accepted undershoots in
    ``(-positivity_tol, 0)`` are removed by mass-preserving clipping.
    With ``record_every = k > 0`` the state after every ``k``-th accepted
    substep is kept in ``path`` as ``(t, v)`` pairs, endpoints included.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    g = grid if grid is not None else TorusGrid(v0.shape[0], controls.dealias)
    tol = controls.positivity_tol
    if not np.all(np.isfinite(v0)):
        raise NumericalFailure("non-finite initial height")
    if v0.min() < -tol:
        raise NumericalFailure("positivity failure: initial height below tolerance")
    v, clipped = clip_negative_conservative(g, v0.astype(float, copy=True))
    budget = controls.mass_clip_budget * duration
    bih = g.ksq**2

    E = g.dirichlet_energy(v)
    report = DetStepReport(
        v_end=v,
        J_time_avg=VectorField(np.zeros_like(v), np.zeros_like(v)),
        substeps_taken=0,
        energy_start=E,
        energy_end=E,
        entropy_start={a: entropy(v, EntropySpec(a)) for a in alphas},
        entropy_end={},
        min_height=float(v.min()),
        clipped_mass=clipped,
    )
    if record_every:
        report.path.append((0.0, v.copy()))
    Jx_acc = np.zeros_like(v)
    Jy_acc = np.zeros_like(v)

    t = 0.0
    dt_nom = duration / max(1, math.ceil(duration / controls.dt_init - 1e-9))
    dt = dt_nom
    streak = 0
    attempts = 0
    while duration - t > 1e-12 * duration:
        step = min(dt, duration - t)
        if duration - t - step < 1e-9 * step:
            step = duration - t
        attempts += 1
        if attempts > controls.max_substeps:
            raise NumericalFailure("non-convergence: substep limit reached")
        F, J = rhs(v, params, g, controls.face_mean, tol_neg=tol)
        inc = g.fft(step * F)
        if controls.stabilize == "imex":
            mbar = float(mobility(max(float(v.max()), 0.0), params))
            inc /= 1.0 + step * mbar * bih
        inc[0, 0] = 0.0  # the conservative divergence has zero mean
        trial = v + g.ifft(inc)
        reason = None
        if not np.all(np.isfinite(trial)):
            reason = "non-finite state"
        elif trial.min() < -tol:
            reason = "positivity failure"
        else:
            trial, clip = clip_negative_conservative(g, trial)
            E_new = g.dirichlet_energy(trial)
            if clipped + clip > budget:
                reason = "positivity failure: clipped-mass budget exceeded"
            elif E_new > E * (1.0 + controls.energy_rtol) + _energy_floor(trial):
                reason = "non-convergence: energy increase"
        if reason is not None:
            dt = step / 2.0
            streak = 0
            report.halvings += 1
            if dt < controls.dt_min:
                raise NumericalFailure(reason)
            continue
        # accepted
        if E > 0:
            rel = (E_new - E) / E
            report.max_energy_rel_increase = max(report.max_energy_rel_increase, rel)
            if rel > 1e-8:
                report.energy_violations += 1
        Jx_acc += step * J.x
        Jy_acc += step * J.y
        report.j_sq_integral += step * j_norm(J, qprime) ** 2
        clipped += clip
        v, E = trial, E_new
        t += step
        report.substeps_taken += 1
        report.min_height = min(report.min_height, float(v.min()))
        if record_every and (report.substeps_taken % record_every == 0 or duration - t <= 1e-12 * duration):
            report.path.append((t, v.copy()))
        streak += 1
        if dt < dt_nom and streak >= controls.grow_after:
            dt = min(2.0 * dt, dt_nom)
            streak = 0

    if record_every and report.path[-1][0] != t:
        report.path.append((t, v.copy()))
    report.v_end = v
    report.energy_end = E
    report.clipped_mass = clipped
    report.J_time_avg = VectorField(Jx_acc / duration, Jy_acc / duration)
    report.entropy_end = {a: entropy(v, EntropySpec(a)) for a in alphas}
    return report


def weak_form_residual(
    v_path: Sequence[np.ndarray],
    J_path: Sequence[VectorField],
    eta: VectorField,
    positivity_threshold: float = 1e-7,
    dt: float | None = None,
    grid: TorusGrid | None = None,
) -> float:
    """Relative mismatch between ``int int J . eta`` and its four-term weak form.

    Snapshots are weighted uniformly with spacing ``dt`` (default: the path
    covers a unit time window).
    """
    if len(v_path) != len(J_path) or not v_path:
        raise ValueError("v_path and J_path must be non-empty and of equal length")
    g = _grid(v_path[0], grid)
    w = dt if dt is not None else 1.0 / len(v_path)
    div_eta = g.divergence(eta)
    gde = g.gradient(div_eta)
    ex = g.gradient(eta.x)
    ey = g.gradient(eta.y)
    lhs = 0.0
    rhs_ = 0.0
    for v, J in zip(v_path, J_path):
        gv = g.gradient(v)
        mask = v > positivity_threshold
        gn = gv.x**2 + gv.y**2
        quad = gv.x * (ex.x * gv.x + ex.y * gv.y) + gv.y * (ey.x * gv.x + ey.y * gv.y)
        lhs += w * g.inner_vec(J, eta)
        rhs_ += w * (
            g.integrate(np.where(mask, gn * (gv.x * eta.x + gv.y * eta.y), 0.0))
            + g.integrate(np.where(mask, v * gn * div_eta, 0.0))
            + 2.0 * g.integrate(np.where(mask, v * quad, 0.0))
            + g.integrate(v * v * (gv.x * gde.x + gv.y * gde.y))
        )
    return abs(lhs - rhs_) / (1.0 + abs(lhs))


class EntropyDissipation(NamedTuple):
    lhs: float  # dissipation D
    rhs: float  # entropy drop E
    ratio: float


def entropy_dissipation_check(v_path: Sequence[tuple[float, np.ndarray]], alpha: float) -> EntropyDissipation:
    """Space-time dissipation ``D`` (trapezoid in time), entropy drop ``E`` and ``D / E``.

    ``v_path`` holds ``(t, v)`` pairs as produced by :func:`advance`.
    """
    times = [t for t, _ in v_path]
    dens = [dissipation_functionals(v, alpha).total for _, v in v_path]
    D = 0.0
    for i in range(1, len(times)):
        D += 0.5 * (times[i] - times[i - 1]) * (dens[i] + dens[i - 1])
    E = float(np.mean(G_alpha(v_path[0][1], alpha))) - float(np.mean(G_alpha(v_path[-1][1], alpha)))
    ratio = D / E if E != 0 else 0.0
    return EntropyDissipation(D, E, ratio)
