"""Periodic grid on the unit 2-torus with pseudospectral calculus.

Fields are plain ``(n, n)`` float arrays indexed ``values[iy, ix]`` so that
``x`` is the fastest-varying index when flattened in row-major order.  Vector
fields are :class:`VectorField` pairs of such arrays.

Fourier coefficients are normalized so that the zero mode equals the mean,

.. math::

    \\hat f(k) = \\frac{1}{n^2} \\sum_{j} f(x_j) e^{-2\\pi i k\\cdot x_j}.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.fft as sfft

__all__ = [
    "TorusGrid",
    "VectorField",
    "clip_negative_conservative",
    "read_field",
    "read_field_csv",
    "write_field",
    "write_field_csv",
]


class VectorField(NamedTuple):
    """Two-component vector field on the torus."""

    x: np.ndarray
    y: np.ndarray


class TorusGrid:
    """Uniform ``n x n`` discretization of ``[0, 1)^2`` with periodic boundaries.

    Parameters
    ----------
    n : int
        Points per axis, positive and even.
    dealias : bool
        If true, every spectral operator also zeroes the modes with
        ``|k_i| > n/3`` (the 2/3 rule).
    """

    def __init__(self, n: int, dealias: bool = False):
        if int(n) != n or n < 4 or n % 2:
            raise ValueError(f"grid size must be an even integer >= 4, got {n}")
        self.n = n = int(n)
        self.h = 1.0 / n
        self.dealias = bool(dealias)
        self.x = np.arange(n) * self.h
        self.X, self.Y = np.meshgrid(self.x, self.x)

        kx = np.arange(n // 2 + 1, dtype=float)
        ky = sfft.fftfreq(n, 1.0 / n)
        self.kx = kx[None, :]
        self.ky = ky[:, None]
        two_pi = 2.0 * math.pi
        # first-derivative multipliers: Nyquist zeroed to keep outputs real
        dx = 1j * two_pi * self.kx
        dx[:, -1] = 0.0
        dy = 1j * two_pi * self.ky
        dy[n // 2, :] = 0.0
        self._dx = dx
        self._dy = dy
        self._dxx = -((two_pi * self.kx) ** 2) * np.ones_like(self.ky)
        self._dyy = -((two_pi * self.ky) ** 2) * np.ones_like(self.kx)
        self.ksq = (two_pi**2) * (self.kx**2 + self.ky**2)
        self._lap = -self.ksq
        # weights that turn a half-spectrum sum into a full-spectrum sum
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self._half_weight = w[None, :] * np.ones((n, 1))
        if self.dealias:
            keep = (np.abs(self.kx) <= n / 3) & (np.abs(self.ky) <= n / 3)
            self._mask = keep.astype(float)
        else:
            self._mask = None

    def __repr__(self) -> str:
        return f"TorusGrid(n={self.n}, dealias={self.dealias})"

    def __eq__(self, other) -> bool:
        return isinstance(other, TorusGrid) and (self.n, self.dealias) == (other.n, other.dealias)

    def __hash__(self) -> int:
        return hash((self.n, self.dealias))

    # -- transforms -------------------------------------------------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        """Half-spectrum Fourier coefficients with the mean in the zero mode."""
        return sfft.rfft2(f, norm="forward")

    def ifft(self, c: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`fft`."""
        if self._mask is not None:
            c = c * self._mask
        return sfft.irfft2(c, s=(self.n, self.n), norm="forward")

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """Full ``(n, n)`` coefficient array in ``numpy.fft`` ordering."""
        return sfft.fft2(f, norm="forward")

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer frequencies ``(kx, ky)`` matching :meth:`coefficients`."""
        k = sfft.fftfreq(self.n, 1.0 / self.n)
        KX, KY = np.meshgrid(k, k)
        return KX, KY

    # -- quadrature -------------------------------------------------------
    def integrate(self, f: np.ndarray) -> float:
        """Rectangle rule ``h^2 * sum(f)``, exact for resolved trigonometric polynomials."""
        return float(np.sum(f)) * self.h * self.h

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return self.integrate(f * g)

    def inner_vec(self, F: VectorField, G: VectorField) -> float:
        return self.integrate(F.x * G.x + F.y * G.y)

    def l2_norm(self, f: np.ndarray) -> float:
        return math.sqrt(self.integrate(f * f))

    # -- differential operators -------------------------------------------
    def gradient(self, f: np.ndarray) -> VectorField:
        c = self.fft(f)
        return VectorField(self.ifft(self._dx * c), self.ifft(self._dy * c))

    def gradient_hat(self, c: np.ndarray) -> VectorField:
        """Gradient of a field given by its half-spectrum."""
        return VectorField(self.ifft(self._dx * c), self.ifft(self._dy * c))

    def divergence(self, F: VectorField) -> np.ndarray:
        return self.ifft(self.divergence_hat(F))

    def divergence_hat(self, F: VectorField) -> np.ndarray:
        """Half-spectrum of ``div F``; its zero mode is exactly zero."""
        return self._dx * self.fft(F.x) + self._dy * self.fft(F.y)

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(self._lap * self.fft(f))

    def bilaplacian(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(self.ksq**2 * self.fft(f))

    def hessian(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Second derivatives ``(f_xx, f_xy, f_yx, f_yy)``."""
        c = self.fft(f)
        fxy = self.ifft(self._dx * self._dy * c)
        return self.ifft(self._dxx * c), fxy, fxy.copy(), self.ifft(self._dyy * c)

    def dirichlet_energy(self, f: np.ndarray) -> float:
        """``||grad f||^2`` evaluated in Fourier space, Nyquist modes included."""
        c = self.fft(f)
        return float(np.sum(self._half_weight * self.ksq * np.abs(c) ** 2))

    # -- norms --------------------------------------------------------------
    def _spectral_sum(self, f: np.ndarray, weight: np.ndarray) -> float:
        c = self.fft(f)
        return float(np.sum(self._half_weight * weight * np.abs(c) ** 2))

    def bessel_norm(self, f: np.ndarray, s: float) -> float:
        """Bessel-potential norm ``sqrt(sum (1+|2 pi k|^2)^s |f_k|^2)``."""
        return math.sqrt(self._spectral_sum(f, (1.0 + self.ksq) ** s))

    def homogeneous_norm(self, f: np.ndarray, s: float) -> float:
        """Homogeneous norm ``sqrt(sum_{k != 0} |2 pi k|^{2s} |f_k|^2)``."""
        weight = np.zeros_like(self.ksq)
        nz = self.ksq > 0
        weight[nz] = self.ksq[nz] ** s
        return math.sqrt(self._spectral_sum(f, weight))

    # -- staggered averages -----------------------------------------------
    def face_average(self, f: np.ndarray, mode: str = "arithmetic") -> VectorField:
        """Averages between each cell and its ``+x`` and ``+y`` neighbour."""
        fx = np.roll(f, -1, axis=1)
        fy = np.roll(f, -1, axis=0)
        if mode == "arithmetic":
            return VectorField(0.5 * (f + fx), 0.5 * (f + fy))
        if mode == "harmonic":
            if np.any(f < 0):
                raise ValueError("negative height in harmonic mean")
            return VectorField(_harmonic(f, fx), _harmonic(f, fy))
        raise ValueError(f"unknown face mean {mode!r}")

    def face_gradient(self, f: np.ndarray) -> VectorField:
        """One-sided differences living on the faces of :meth:`face_average`."""
        return VectorField(
            (np.roll(f, -1, axis=1) - f) / self.h,
            (np.roll(f, -1, axis=0) - f) / self.h,
        )

    def face_divergence(self, F: VectorField) -> np.ndarray:
        """Conservative cell divergence of a face flux; sums to zero exactly up to rounding."""
        return (F.x - np.roll(F.x, 1, axis=1)) / self.h + (F.y - np.roll(F.y, 1, axis=0)) / self.h


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = a + b
    out = np.zeros_like(s)
    nz = s > 0
    out[nz] = 2.0 * a[nz] * b[nz] / s[nz]
    return out


def clip_negative_conservative(grid: TorusGrid, f: np.ndarray) -> tuple[np.ndarray, float]:
    """Zero the negative entries and rescale the positive ones to keep the mass.

    Returns the clipped field and the clipped mass ``integral of max(-f, 0)``.
    """
    neg = f < 0
    if not neg.any():
        return f, 0.0
    deficit = -float(np.sum(f[neg]))
    out = np.where(neg, 0.0, f)
    total = float(np.sum(out))
    if total > 0:
        out *= (total - deficit) / total
    return out, deficit * grid.h * grid.h


# -- snapshot files ---------------------------------------------------------
_HEADER = "thinfilm-field v1, n={n}\n"


def write_field(path: str | Path, f: np.ndarray) -> None:
    """Binary snapshot: one text header line then ``n*n`` little-endian float64 values."""
    n = f.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.format(n=n).encode("ascii"))
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def read_field(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        prefix = "thinfilm-field v1, n="
        if not header.startswith(prefix):
            raise ValueError(f"not a thinfilm field file: {path}")
        n = int(header[len(prefix):])
        data = fh.read()
    if len(data) != 8 * n * n:
        raise ValueError(f"field file {path} holds {len(data)} bytes, expected {8 * n * n}")
    return np.frombuffer(data, dtype="<f8").reshape(n, n).copy()


def write_field_csv(path: str | Path, f: np.ndarray) -> None:
    """Text snapshot with one row per y-line."""
    with open(path, "w") as fh:
        for row in f:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_field_csv(path: str | Path) -> np.ndarray:
    f = np.loadtxt(path, delimiter=",", ndmin=2)
    if f.shape[0] != f.shape[1]:
        raise ValueError(f"field CSV {path} is not square: {f.shape}")
    return f

