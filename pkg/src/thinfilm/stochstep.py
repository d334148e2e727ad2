"""Stochastic substep: ``dw = eps Lap w dt + div(w o dW)`` in Ito form.

Semi-implicit Euler-Maruyama,

.. math::

    \\hat w_{n+1} = \\frac{\\hat w_n + \\widehat{\\mathrm{div}\\,F_n}}{1 + \\tau\\epsilon|2\\pi k|^2},
    \\qquad F_n = \\tau\\,\\Phi(w_n) + w_n \\sum_l \\lambda_l \\Delta\\beta_l \\psi_l ,

where ``div Phi`` is the Ito correction.  Everything except the mean passes
through a divergence, so the zero Fourier mode, and with it the mass, is
never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from .diagnostics import _grid
from .errors import NumericalFailure
from .noise import ModeFields, WienerIncrement, apply_A, apply_B, correction_flux
from .torus import VectorField, clip_negative_conservative

__all__ = [
    "EnergyAudit",
    "PhaseKey",
    "StochControls",
    "StochStepReport",
    "advance",
    "advance_with_increments",
    "ito_energy_audit",
    "shift_field",
]


class NoiseSource(Protocol):
    def increments(self, macro: int, nsub: int, tau: float) -> np.ndarray: ...


@dataclass(frozen=True)
class StochControls:
    nsub: int | None = None  # substeps per call; derived from tau_max when unset
    tau_max: float = 2.5e-5
    blowup_factor: float = 1e3
    positivity_tol: float = 1e-8
    mass_clip_budget: float = 1e-10  # per unit time
    store_increments: bool = True
    store_path: bool = False

    def __post_init__(self):
        if self.nsub is not None and self.nsub < 1:
            raise ValueError("nsub must be positive")
        if self.tau_max <= 0 or self.blowup_factor <= 1:
            raise ValueError("need tau_max > 0 and blowup_factor > 1")

    def substeps(self, duration: float) -> int:
        if self.nsub is not None:
            return self.nsub
        return max(1, math.ceil(duration / self.tau_max - 1e-9))


class PhaseKey(NamedTuple):
    """Where a stochastic phase draws its increments from."""

    source: NoiseSource
    macro: int


@dataclass
class StochStepReport:
    w_end: np.ndarray
    increments_used: list
    mass_drift: float
    min_height: float
    energy_end: float
    clipped_mass: float = 0.0
    exceedances: int = 0
    path: list = field(default_factory=list)


def advance(
    w0: np.ndarray,
    duration: float,
    epsilon: float,
    modes: ModeFields,
    rng_key: PhaseKey,
    controls: StochControls = StochControls(),
) -> StochStepReport:
    """Advance over ``duration`` with increments drawn from ``rng_key``."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    nsub = controls.substeps(duration)
    tau = duration / nsub
    dbeta = rng_key.source.increments(rng_key.macro, nsub, tau)
    return advance_with_increments(w0, duration, epsilon, modes, dbeta, controls)


def advance_with_increments(
    w0: np.ndarray,
    duration: float,
    epsilon: float,
    modes: ModeFields,
    dbeta: np.ndarray,
    controls: StochControls = StochControls(),
) -> StochStepReport:
    """Advance with an explicit ``(nsub, ..., n_modes)`` array of Brownian increments.

    ``w0`` may carry leading batch axes (independent paths advanced together);
    ``dbeta`` then has the same batch axes between the substep and mode axes,
    and the scalar monitors of the report become per-path arrays.

    Undershoots in ``(-positivity_tol, 0)`` are clipped conservatively and
    audited; deeper undershoots are counted as exceedances and left in place,
    since the discrete scheme only approximates the maximum principle.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    g = modes.grid
    w = np.array(w0, dtype=float, copy=True)
    batch = w.shape[:-2]
    nsub = dbeta.shape[0]
    tau = duration / nsub
    if dbeta.shape[1:] != batch + (modes.n_modes,):
        raise ValueError("increment array does not match the field batch and mode set")
    if not np.all(np.isfinite(w)):
        raise NumericalFailure("non-finite initial height")
    h2 = g.h * g.h
    axes = (-2, -1)
    norm0 = np.sqrt(np.sum(w * w, axis=axes) * h2)
    limit = controls.blowup_factor * np.maximum(norm0, 1e-300)
    mass0 = np.sum(w, axis=axes) * h2
    damp = 1.0 / (1.0 + tau * epsilon * g.ksq)
    noisy = bool(np.any(modes.lam))
    min_height = np.min(w, axis=axes)
    report = StochStepReport(w, [], 0.0, 0.0, 0.0)
    if controls.store_path:
        report.path.append(w.copy())
    clipped = np.zeros(batch)
    identity = not noisy and epsilon == 0.0  # skip the FFT round trip entirely
    for s in range(nsub):
        if identity:
            if controls.store_increments:
                report.increments_used.append(WienerIncrement(tau, dbeta[s].copy()))
            if controls.store_path:
                report.path.append(w.copy())
            continue
        what = g.fft(w)
        if noisy:
            grad = g.gradient_hat(what)
            Phi = correction_flux(w, grad, modes)
            V = modes.velocity(dbeta[s])
            F = VectorField(tau * Phi.x + w * V.x, tau * Phi.y + w * V.y)
            what = what + g.divergence_hat(F)
        w = g.ifft(what * damp)
        if controls.store_increments:
            report.increments_used.append(WienerIncrement(tau, dbeta[s].copy()))
        wmin = np.min(w, axis=axes)
        min_height = np.minimum(min_height, wmin)
        report.exceedances += int(np.count_nonzero(wmin < -controls.positivity_tol))
        if np.any(wmin < 0.0):
            w, c = _clip_paths(g, w, wmin, controls.positivity_tol)
            clipped += c
        if not np.all(np.isfinite(w)) or np.any(np.sqrt(np.sum(w * w, axis=axes) * h2) > limit):
            raise NumericalFailure("blowup")
        if controls.store_path:
            report.path.append(w.copy())
    report.w_end = w
    report.min_height = _scalar(min_height)
    report.mass_drift = _scalar(np.sum(w, axis=axes) * h2 - mass0)
    report.energy_end = _scalar(np.sum(g._half_weight * g.ksq * np.abs(g.fft(w)) ** 2, axis=axes))
    report.clipped_mass = _scalar(clipped)
    return report


def _scalar(a: np.ndarray):
    return float(a) if np.ndim(a) == 0 else a


def _clip_paths(g, w: np.ndarray, wmin: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip each path whose undershoot lies within tolerance."""
    clipped = np.zeros(wmin.shape)
    if w.ndim == 2:
        if -tol <= wmin < 0.0:
            w, c = clip_negative_conservative(g, w)
            clipped = np.array(c)
        return w, clipped
    flat = w.reshape(-1, g.n, g.n)
    cflat = clipped.reshape(-1)
    for i, m in enumerate(wmin.reshape(-1)):
        if -tol <= m < 0.0:
            flat[i], cflat[i] = clip_negative_conservative(g, flat[i])
    return flat.reshape(w.shape), cflat.reshape(wmin.shape)


def shift_field(f: np.ndarray, shift: tuple[float, float]) -> np.ndarray:
    """Spectral translation ``f(x + sx, y + sy)``."""
    g = _grid(f.shape[0])
    phase = np.exp(2j * math.pi * (g.kx * shift[0] + g.ky * shift[1]))
    return g.ifft(g.fft(f) * phase)


class EnergyAudit(NamedTuple):
    lhs: float  # ||grad w_end||^2 - ||grad w_0||^2
    drift: float  # sum of Ito drift contributions
    martingale: float  # realized martingale increments
    residual: float  # lhs - drift - martingale
    drift_scale: float  # sum of |drift components|, for relative comparisons
    rhs_bound: float  # fitted C times int ||w||_{H^1}^2 dt
    fitted_C: float


def ito_energy_audit(path: list, increments: list, epsilon: float, modes: ModeFields) -> EnergyAudit:
    """Discrete Ito expansion of ``||grad w||^2`` along a recorded substep path.

    Per substep the drift is ``tau (2 <grad w, grad A w> + sum lambda^2 ||grad div(w psi)||^2)``
    and the martingale increment ``2 sum lambda <grad div(w psi), grad w> dbeta``.
    The Gronwall-type check fits the smallest ``C`` with
    ``||grad w(t)||^2 - ||grad w_0||^2 - M(t) <= C int_0^t ||w||_{H^1}^2``.
    """
    g = modes.grid
    drift = 0.0
    mart = 0.0
    scale = 0.0
    E0 = g.dirichlet_energy(path[0])
    C = 0.0
    integral = 0.0
    for w, w_next, inc in zip(path[:-1], path[1:], increments):
        tau = inc.dt
        gw = g.gradient(w)
        d_A = 2.0 * tau * g.inner_vec(g.gradient(apply_A(w, epsilon, modes)), gw)
        d_B = 0.0
        m = 0.0
        for l in range(modes.n_modes):
            if modes.lam[l] == 0.0:
                continue
            gB = g.gradient(apply_B(w, l, modes))
            d_B += tau * g.inner_vec(gB, gB)
            m += 2.0 * g.inner_vec(gB, gw) * inc.dbeta[l]
        drift += d_A + d_B
        scale += abs(d_A) + abs(d_B)
        mart += m
        integral += tau * g.bessel_norm(w, 1.0) ** 2
        excess = g.dirichlet_energy(w_next) - E0 - mart
        if integral > 0:
            C = max(C, excess / integral)
    lhs = g.dirichlet_energy(path[-1]) - E0
    return EnergyAudit(lhs, drift, mart, lhs - drift - mart, scale, C * integral, C)
