"""Entropies, dissipation functionals, flux norms and ensemble moment checks.

The alpha-entropy is the double integral
``G_alpha(t) = int_1^t int_1^s r^(alpha-1) dr ds``, which has the closed form

.. math::

    G_\\alpha(t) = \\frac{t^{\\alpha+1}}{\\alpha(\\alpha+1)} - \\frac{t}{\\alpha}
        + \\frac{1}{\\alpha} - \\frac{1}{\\alpha(\\alpha+1)} .

The regularized version multiplies by a smooth ramp ``eta(x / kappa)`` that
vanishes below ``kappa`` and equals one above ``2 kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .torus import TorusGrid, VectorField

__all__ = [
    "DissipationTerms",
    "EntropySpec",
    "MomentCheckReport",
    "G_alpha",
    "G_alpha_kappa",
    "dissipation_functionals",
    "entropy",
    "eta",
    "fsum_mean",
    "hs_increment_surrogate",
    "j_norm",
    "linear_growth_constants",
    "moment_check",
    "theta_kappa",
    "zeta_kappa",
]


def _check_alpha(alpha: float) -> None:
    if not -1.0 < alpha < 0.0:
        raise ValueError("alpha must lie in (-1,0)")


@dataclass(frozen=True)
class EntropySpec:
    alpha: float
    kappa: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


@lru_cache(maxsize=16)
def _grid(n: int) -> TorusGrid:
    return TorusGrid(n)


def _grid_for(u: np.ndarray) -> TorusGrid:
    return _grid(u.shape[0])


# -- closed-form entropy ----------------------------------------------------
def G_alpha(t, alpha: float):
    """Closed-form alpha-entropy density; arguments below zero are floored at zero."""
    _check_alpha(alpha)
    t = np.maximum(np.asarray(t, dtype=float), 0.0)
    a = alpha
    return t ** (a + 1) / (a * (a + 1)) - t / a + 1.0 / a - 1.0 / (a * (a + 1))


def G_alpha_prime(t, alpha: float):
    t = np.maximum(np.asarray(t, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        return (t**alpha - 1.0) / alpha


def G_alpha_second(t, alpha: float):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, np.abs(t) ** (alpha - 1.0), np.inf)


# -- smooth cutoff ----------------------------------------------------------
def _ramp_parts(x):
    """Return ``eta, eta', eta''`` of the C-infinity ramp from 1 to 2."""
    x = np.asarray(x, dtype=float)
    eta0 = np.where(x >= 2.0, 1.0, 0.0)
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    inner = (x > 1.0) & (x < 2.0)
    if np.any(inner):
        a = x[inner] - 1.0
        b = 2.0 - x[inner]
        # eta = 1 / (1 + exp(g)) with g = 1/a - 1/b
        g = 1.0 / a - 1.0 / b
        g1 = -1.0 / a**2 - 1.0 / b**2
        g2 = 2.0 / a**3 - 2.0 / b**3
        e = expit(-g)
        e1 = -e * (1.0 - e) * g1
        e2 = -e1 * (1.0 - 2.0 * e) * g1 - e * (1.0 - e) * g2
        eta0 = eta0.copy()
        eta0[inner] = e
        d1[inner] = e1
        d2[inner] = e2
    return eta0, d1, d2


def eta(x):
    """Smooth ramp: 0 on ``(-inf, 1]``, 1 on ``[2, inf)``."""
    return _ramp_parts(x)[0]


def G_alpha_kappa(x, alpha: float, kappa: float, derivative: int = 0):
    """``G_alpha * eta(x / kappa)`` or one of its first two derivatives."""
    x = np.asarray(x, dtype=float)
    if kappa == 0.0:
        return (G_alpha, G_alpha_prime, G_alpha_second)[derivative](x, alpha)
    e0, e1, e2 = _ramp_parts(x / kappa)
    on = x > kappa
    xs = np.where(on, x, 2.0 * kappa)  # keep powers finite where eta vanishes
    G = G_alpha(xs, alpha)
    if derivative == 0:
        return np.where(on, e0 * G, 0.0)
    G1 = G_alpha_prime(xs, alpha)
    if derivative == 1:
        return np.where(on, e1 * G / kappa + e0 * G1, 0.0)
    G2 = xs ** (alpha - 1.0)
    return np.where(on, e2 * G / kappa**2 + 2.0 * e1 * G1 / kappa + e0 * G2, 0.0)


def theta_kappa(x, alpha: float, kappa: float):
    """``x^2 G''_{alpha,kappa}(x)``."""
    x = np.asarray(x, dtype=float)
    return x * x * G_alpha_kappa(x, alpha, kappa, 2)


def zeta_kappa(x, alpha: float, kappa: float):
    """``int_0^x y G''_{alpha,kappa}(y) dy``, via integration by parts ``x G' - G``."""
    x = np.asarray(x, dtype=float)
    return np.where(
        x > kappa,
        x * G_alpha_kappa(x, alpha, kappa, 1) - G_alpha_kappa(x, alpha, kappa, 0),
        0.0,
    )


def linear_growth_constants(alpha: float, kappas: Iterable[float], xs: np.ndarray) -> dict:
    """Largest ``|theta|/(1+|x|)`` and ``|zeta|/(1+|x|)`` per cutoff on a sample grid."""
    out = {}
    for kappa in kappas:
        th = np.abs(theta_kappa(xs, alpha, kappa)) / (1.0 + np.abs(xs))
        ze = np.abs(zeta_kappa(xs, alpha, kappa)) / (1.0 + np.abs(xs))
        out[kappa] = (float(th.max()), float(ze.max()))
    return out


# -- field functionals ------------------------------------------------------
def entropy(u: np.ndarray, spec: EntropySpec) -> float:
    """``int G_{alpha,kappa}(u) dx``; negative heights are floored at zero."""
    vals = G_alpha_kappa(np.maximum(u, 0.0), spec.alpha, spec.kappa)
    return float(np.mean(vals))


def floored_mass(u: np.ndarray) -> float:
    """Mass removed by flooring negative heights, for audits."""
    return float(np.mean(np.maximum(-u, 0.0)))


class DissipationTerms(NamedTuple):
    hess_term: float
    grad4_term: float

    @property
    def total(self) -> float:
        return self.hess_term + self.grad4_term


def dissipation_functionals(u: np.ndarray, alpha: float) -> DissipationTerms:
    """``int |H u^((alpha+3)/2)|^2`` and ``int |grad u^((alpha+3)/4)|^4``."""
    _check_alpha(alpha)
    g = _grid_for(u)
    up = np.maximum(u, 0.0)
    hxx, hxy, hyx, hyy = g.hessian(up ** ((alpha + 3.0) / 2.0))
    hess = g.integrate(hxx**2 + hxy**2 + hyx**2 + hyy**2)
    grad = g.gradient(up ** ((alpha + 3.0) / 4.0))
    grad4 = g.integrate((grad.x**2 + grad.y**2) ** 2)
    return DissipationTerms(hess, grad4)


def j_norm(J: VectorField, qprime: float) -> float:
    """Spatial ``L^q'`` norm of ``|J|``."""
    if not 1.0 < qprime < 2.0:
        raise ValueError("qprime must lie in (1,2)")
    mag = np.sqrt(J.x**2 + J.y**2)
    return float(np.mean(mag**qprime)) ** (1.0 / qprime)


def hs_increment_surrogate(times: Sequence[float], fields: Sequence[np.ndarray], s: float, gamma: float = 0.25) -> float:
    """Largest ``||u(t_{i+1}) - u(t_i)||_{H^-s} / |t_{i+1} - t_i|^gamma`` over consecutive samples.

    A reporting-only stand-in for time-Holder seminorms in negative Sobolev
    spaces; the homogeneous norm ignores the (conserved) mean.
    """
    if len(fields) < 2:
        return 0.0
    g = _grid_for(fields[0])
    best = 0.0
    for t0, t1, a, b in zip(times[:-1], times[1:], fields[:-1], fields[1:]):
        dt = t1 - t0
        if dt > 0:
            best = max(best, g.homogeneous_norm(b - a, -s) / dt**gamma)
    return best


# -- ensemble moments -------------------------------------------------------
def fsum_mean(values: Iterable[float]) -> float:
    """Order-independent mean (exactly rounded sum)."""
    vals = list(values)
    return math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class MomentCheckReport:
    p: float
    which: str
    lhs_estimate: float
    lhs_stderr: float
    rhs_estimate: float
    ratio: float
    ratio_stderr: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _moment_samples(records, which: str) -> tuple[np.ndarray, np.ndarray]:
    sup, initial = [], []
    for rec in records:
        h1 = np.asarray(rec.columns["h1_norm"])
        initial.append(h1[0])
        if which == "H1_sup":
            sup.append(float(h1.max()))
        elif which == "J_norm":
            sup.append(math.sqrt(math.fsum(rec.macro["j_sq_integral"])))
        else:
            raise ValueError(f"unknown moment statistic {which!r}")
    return np.array(sup), np.array(initial)


def moment_check(records, p: float, which: str = "H1_sup", n_boot: int = 400, boot_seed: int = 0) -> MomentCheckReport:
    """Implied constant ``E[X^p] / E[||u0||_{H^1}^p]`` with a bootstrap standard error.

    ``X`` is ``sup_t ||u(t)||_{H^1}`` for ``H1_sup``; for ``J_norm`` it is the
    space-time norm ``||J||_{L^2 L^q'}`` raised to ``p/2``.
    """
    records = list(records)
    if len(records) < 2:
        raise ValueError("moment check needs at least two trajectories")
    x, x0 = _moment_samples(records, which)
    lhs_vals = x**p if which == "H1_sup" else x ** (p / 2.0)
    rhs_vals = x0**p
    lhs = fsum_mean(lhs_vals)
    rhs = fsum_mean(rhs_vals)
    rng = np.random.default_rng(boot_seed)
    idx = rng.integers(0, len(records), size=(n_boot, len(records)))
    boot_lhs = lhs_vals[idx].mean(axis=1)
    boot_ratio = boot_lhs / rhs_vals[idx].mean(axis=1)
    return MomentCheckReport(
        p=float(p),
        which=which,
        lhs_estimate=lhs,
        lhs_stderr=float(boot_lhs.std(ddof=1)),
        rhs_estimate=rhs,
        ratio=lhs / rhs,
        ratio_stderr=float(boot_ratio.std(ddof=1)),
        samples=len(records),
    )
