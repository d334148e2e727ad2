"""Conservative gradient noise: basis, Wiener increments and the Ito operators.

The noise is ``W = sum_l lambda_l beta_l psi_l`` with ``psi_l`` either
``(xi_k, 0)`` or ``(0, xi_k)`` and ``xi_k`` the tensor-product Fourier mode
normalized in ``W^{2,2}``.  Every wavevector carries the same coefficient on
both components, which is what makes the Ito correction isotropic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .torus import TorusGrid, VectorField

__all__ = [
    "CoercivityProbe",
    "ModeFields",
    "NoiseKey",
    "NoiseMode",
    "NoiseModeSet",
    "KeyedNoise",
    "PairedNoise",
    "WienerIncrement",
    "apply_A",
    "apply_B",
    "apply_correction",
    "build_mode_set",
    "coercivity_probe",
    "eval_xi",
    "sample_increment",
    "xi_normalizer",
]


@dataclass(frozen=True)
class NoiseMode:
    k: tuple[int, int]
    component: str  # "x" or "y"
    lam: float


@dataclass(frozen=True)
class NoiseModeSet:
    modes: tuple[NoiseMode, ...]
    kmax: int
    sigma: float
    decay_r: float

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    @property
    def spectrum_mass(self) -> float:
        return math.fsum(m.lam**2 for m in self.modes)

    @property
    def wavevectors(self) -> list[tuple[int, int]]:
        """Distinct wavevectors, in the order their x-modes appear."""
        return [m.k for m in self.modes if m.component == "x"]

    def manifest(self) -> dict:
        return {
            "kmax": self.kmax,
            "sigma": self.sigma,
            "decay_r": self.decay_r,
            "spectrum_mass": self.spectrum_mass,
            "mode_count": self.mode_count,
        }

    def is_symmetric(self) -> bool:
        """Each wavevector has an x- and a y-mode with the same coefficient."""
        xs = sorted((m.k, m.lam) for m in self.modes if m.component == "x")
        ys = sorted((m.k, m.lam) for m in self.modes if m.component == "y")
        return xs == ys


def build_mode_set(kmax: int, sigma: float, decay_r: float) -> NoiseModeSet:
    """All modes with ``|k|_inf <= kmax`` and ``lambda = sigma (1+|k|^2)^(-decay_r)``."""
    if kmax < 0 or sigma < 0 or decay_r < 0:
        raise ValueError("kmax, sigma and decay_r must be non-negative")
    modes = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            lam = sigma * (1.0 + k1 * k1 + k2 * k2) ** (-decay_r)
            modes.append(NoiseMode((k1, k2), "x", lam))
            modes.append(NoiseMode((k1, k2), "y", lam))
    return NoiseModeSet(tuple(modes), int(kmax), float(sigma), float(decay_r))


def xi_normalizer(k: tuple[int, int]) -> float:
    kk = (2.0 * math.pi) ** 2 * (k[0] ** 2 + k[1] ** 2)
    return 1.0 / math.sqrt(1.0 + kk + kk * kk)


def _xi_1d(j: int, x: np.ndarray) -> np.ndarray:
    if j < 0:
        return math.sqrt(2.0) * np.cos(2.0 * math.pi * j * x)
    if j == 0:
        return np.ones_like(x)
    return math.sqrt(2.0) * np.sin(2.0 * math.pi * j * x)


def eval_xi(k: tuple[int, int], grid: TorusGrid) -> np.ndarray:
    """Basis function ``xi_k`` sampled on the grid."""
    return np.outer(_xi_1d(k[1], grid.x), _xi_1d(k[0], grid.x)) * xi_normalizer(k)


class ModeFields:
    """A mode set sampled on a grid, with the aggregates the steppers need.

    ``correction_sign`` exists only for mutation tests of the verification
    suite; it multiplies the Ito correction.
    """

    def __init__(self, modes: NoiseModeSet, grid: TorusGrid, correction_sign: float = 1.0):
        if modes.kmax >= grid.n // 2:
            raise ValueError(f"noise kmax={modes.kmax} reaches the grid Nyquist mode (n={grid.n})")
        self.modes = modes
        self.grid = grid
        self.correction_sign = float(correction_sign)
        self.wavevectors = modes.wavevectors
        self.xi = np.array([eval_xi(k, grid) for k in self.wavevectors])
        lam = {}
        for m in modes.modes:
            lam.setdefault(m.k, {})[m.component] = m.lam
        # per-wavevector coefficient (equal on both components by symmetry)
        self.mu = np.array([lam[k]["x"] for k in self.wavevectors])
        self.lam = np.array([m.lam for m in modes.modes])
        self.symmetric = modes.is_symmetric()
        self.S = np.tensordot(self.mu**2, self.xi**2, axes=1) if len(self.mu) else np.zeros((grid.n, grid.n))
        self.grad_S = grid.gradient(self.S)

    @property
    def n_modes(self) -> int:
        return len(self.lam)

    def psi(self, l: int) -> VectorField:
        """Vector basis field of mode ``l``."""
        m = self.modes.modes[l]
        xi = self.xi[l // 2]
        zero = np.zeros_like(xi)
        return VectorField(xi, zero) if m.component == "x" else VectorField(zero, xi)

    def velocity(self, dbeta: np.ndarray) -> VectorField:
        """``sum_l lambda_l dbeta_l psi_l`` as a vector field."""
        cx = self.mu * dbeta[..., 0::2]
        cy = self.mu * dbeta[..., 1::2]
        return VectorField(np.tensordot(cx, self.xi, axes=1), np.tensordot(cy, self.xi, axes=1))


def apply_B(u: np.ndarray, l: int, fields: ModeFields) -> np.ndarray:
    """``lambda_l div(u psi_l)``."""
    psi = fields.psi(l)
    g = fields.grid
    return fields.lam[l] * g.divergence(VectorField(u * psi.x, u * psi.y))


def _component_weights(fields: ModeFields) -> tuple[np.ndarray, np.ndarray]:
    """``lambda^2`` per wavevector for the x- and y-component modes."""
    wx = np.zeros(len(fields.wavevectors))
    wy = np.zeros(len(fields.wavevectors))
    for l, m in enumerate(fields.modes.modes):
        (wx if m.component == "x" else wy)[l // 2] = fields.lam[l] ** 2
    return wx, wy


def _mode_derivatives(u: np.ndarray, fields: ModeFields) -> tuple[np.ndarray, np.ndarray]:
    """Half-spectra of ``d_x(u xi_k)`` and ``d_y(u xi_k)``, stacked over wavevectors."""
    g = fields.grid
    c = g.fft(u * fields.xi)
    return g._dx * c, g._dy * c


def apply_correction(u: np.ndarray, fields: ModeFields) -> np.ndarray:
    """Ito correction ``1/2 sum_l lambda_l^2 div(div(u psi_l) psi_l)``, mode by mode."""
    g = fields.grid
    if fields.n_modes == 0:
        return np.zeros_like(u, dtype=float)
    wx, wy = _component_weights(fields)
    cx, cy = _mode_derivatives(u, fields)
    hx = g._dx * g.fft(g.ifft(cx) * fields.xi)
    hy = g._dy * g.fft(g.ifft(cy) * fields.xi)
    out = 0.5 * (np.tensordot(wx, hx, axes=1) + np.tensordot(wy, hy, axes=1))
    return fields.correction_sign * g.ifft(out)


def correction_flux(u: np.ndarray, grad_u: VectorField, fields: ModeFields) -> VectorField:
    """Flux whose divergence is the Ito correction, for symmetric mode sets.

    With ``S = sum_k mu_k^2 xi_k^2`` the correction collapses to
    ``1/2 div(S grad u + u grad S / 2)``, so one divergence replaces the
    per-mode sum.
    """
    if not fields.symmetric:
        raise ValueError("aggregated correction needs a symmetric mode set")
    c = 0.5 * fields.correction_sign
    S, gS = fields.S, fields.grad_S
    return VectorField(c * (S * grad_u.x + 0.5 * u * gS.x), c * (S * grad_u.y + 0.5 * u * gS.y))


def apply_A(u: np.ndarray, epsilon: float, fields: ModeFields) -> np.ndarray:
    """``epsilon Lap u`` plus the Ito correction."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return epsilon * fields.grid.laplacian(u) + apply_correction(u, fields)


class CoercivityProbe(NamedTuple):
    lhs0: float
    lhs1: float
    identity0: float
    l2_sq: float
    grad_sq: float
    lap_sq: float


def coercivity_probe(u: np.ndarray, epsilon: float, fields: ModeFields) -> CoercivityProbe:
    """Evaluate ``L0 = 2<A u, u> + sum ||B_l u||^2`` and its gradient analogue ``L1``.

    ``identity0`` is the closed form
    ``-2 eps ||grad u||^2 + 1/2 sum lambda^2 <u^2, (div psi)^2 - psi . grad div psi>``
    obtained by integrating ``L0`` by parts.
    """
    g = fields.grid
    Au = apply_A(u, epsilon, fields)
    grad_u = g.gradient(u)
    lhs0 = 2.0 * g.inner(Au, u)
    lhs1 = 2.0 * g.inner_vec(g.gradient(Au), grad_u)
    if fields.n_modes:
        # B_l u is lambda_l d_c(u xi_k) for the component c of mode l
        wx, wy = _component_weights(fields)
        for w, c in zip((wx, wy), _mode_derivatives(u, fields)):
            h2 = g.h * g.h
            B = g.ifft(c)
            lhs0 += float(np.dot(w, np.sum(B * B, axis=(-2, -1)))) * h2
            Bx, By = g.ifft(g._dx * c), g.ifft(g._dy * c)
            lhs1 += float(np.dot(w, np.sum(Bx * Bx + By * By, axis=(-2, -1)))) * h2
    grad_sq = g.inner_vec(grad_u, grad_u)
    identity0 = -2.0 * epsilon * grad_sq + g.inner(coercivity_kernel(fields), u * u)
    lap = g.laplacian(u)
    return CoercivityProbe(lhs0, lhs1, identity0, g.inner(u, u), grad_sq, g.inner(lap, lap))


def coercivity_kernel(fields: ModeFields) -> np.ndarray:
    """Pointwise weight ``K`` with ``L0 + 2 eps ||grad u||^2 = <K, u^2>``."""
    cached = getattr(fields, "_kernel", None)
    if cached is not None:
        return cached
    g = fields.grid
    kernel = np.zeros((g.n, g.n))
    for l in range(fields.n_modes):
        psi = fields.psi(l)
        dpsi = g.divergence(psi)
        gd = g.gradient(dpsi)
        kernel += 0.5 * fields.lam[l] ** 2 * (dpsi * dpsi - (psi.x * gd.x + psi.y * gd.y))
    fields._kernel = kernel
    return kernel


# -- Wiener increments -------------------------------------------------------
class NoiseKey(NamedTuple):
    seed: int
    trajectory: int
    macro: int
    substep: int


class WienerIncrement(NamedTuple):
    dt: float
    dbeta: np.ndarray


# Philox counter words: [draws, substep, macro, stream]
_STREAM_KEYED = 0
_STREAM_PATH = 1


@lru_cache(maxsize=4096)
def _philox_key(seed: int, trajectory: int) -> tuple[int, int]:
    state = np.random.SeedSequence([int(seed), int(trajectory)]).generate_state(2, dtype=np.uint64)
    return int(state[0]), int(state[1])


def _normals(seed: int, trajectory: int, macro: int, substep: int, stream: int, size: int) -> np.ndarray:
    key = np.array(_philox_key(seed, trajectory), dtype=np.uint64)
    counter = np.array([0, substep, macro, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter)).standard_normal(size)


def sample_increment(dt: float, key: NoiseKey, n_modes: int) -> WienerIncrement:
    """Independent ``N(0, dt)`` draws, one per mode, determined by ``key`` alone."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = _normals(key.seed, key.trajectory, key.macro, key.substep, _STREAM_KEYED, n_modes)
    return WienerIncrement(dt, math.sqrt(dt) * z)


class KeyedNoise:
    """Independent increments per ``(macro step, substep)``."""

    paired = False

    def __init__(self, seed: int, trajectory: int, n_modes: int):
        self.seed = int(seed)
        self.trajectory = int(trajectory)
        self.n_modes = n_modes

    def increments(self, macro: int, nsub: int, tau: float) -> np.ndarray:
        out = np.empty((nsub, self.n_modes))
        for s in range(nsub):
            out[s] = sample_increment(tau, NoiseKey(self.seed, self.trajectory, macro, s), self.n_modes).dbeta
        return out


class PairedNoise:
    """One Brownian path on a fine dyadic grid, shared by every splitting resolution.

    The stochastic clock runs over ``[0, horizon)``; a phase of macro step
    ``j`` split into ``nsub`` substeps sums the fine increments it covers, so
    runs with different ``N`` see the same path.
    """

    paired = True

    def __init__(self, seed: int, trajectory: int, n_modes: int, horizon: float, fine_steps: int):
        self.seed = int(seed)
        self.trajectory = int(trajectory)
        self.n_modes = n_modes
        self.horizon = float(horizon)
        self.fine_steps = int(fine_steps)
        dt = self.horizon / self.fine_steps
        z = np.empty((self.fine_steps, n_modes))
        for i in range(self.fine_steps):
            z[i] = _normals(self.seed, self.trajectory, 0, i, _STREAM_PATH, n_modes)
        self.fine = math.sqrt(dt) * z

    def increments(self, macro: int, nsub: int, tau: float) -> np.ndarray:
        phases = round(self.horizon / (tau * nsub))
        total = phases * nsub
        if self.fine_steps % total:
            raise ValueError(
                f"fine path of {self.fine_steps} steps cannot be split into {phases} phases of {nsub} substeps"
            )
        r = self.fine_steps // total
        block = self.fine[macro * nsub * r:(macro + 1) * nsub * r]
        return block.reshape(nsub, r, self.n_modes).sum(axis=1)
