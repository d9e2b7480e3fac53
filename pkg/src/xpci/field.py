"""Sampling grids, scalar wavefields and the observables derived from them.

Arrays are stored row-major with shape ``(ny, nx)``; the first axis is y.
Index ``(0, 0)`` sits at the physical point ``(-nx*dx/2, -ny*dy/2)`` so the
optical axis falls on index ``(ny//2, nx//2)`` for even sizes.

All Fourier-space quantities (transfer functions, spectra) are kept in the
natural DFT order produced by :func:`numpy.fft.fft2`: signed frequency
index ``m`` lives at position ``m mod n``.  Use :meth:`Grid2D.centered` to
get a display-ready arrangement.
"""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import GridMismatchError, XpciError


@dataclass(frozen=True)
class Grid2D:
    """Uniform transverse sampling lattice with physical pixel pitch (m)."""

    nx: int
    ny: int
    dx: float
    dy: float = None

    def __post_init__(self):
        if self.dy is None:
            object.__setattr__(self, "dy", self.dx)
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))
        if self.nx < 2 or self.ny < 2:
            raise XpciError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0 and math.isfinite(self.dx)
                and math.isfinite(self.dy)):
            raise XpciError("pixel pitch must be positive and finite")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def extent(self):
        """Physical width and height ``(nx*dx, ny*dy)``."""
        return (self.nx * self.dx, self.ny * self.dy)

    def x(self):
        return (np.arange(self.nx) - self.nx / 2) * self.dx

    def y(self):
        return (np.arange(self.ny) - self.ny / 2) * self.dy

    def coords(self):
        """Broadcastable coordinate arrays ``(X, Y)`` of shape (1, nx), (ny, 1)."""
        return self.x()[None, :], self.y()[:, None]

    def r2(self):
        x, y = self.coords()
        return x ** 2 + y ** 2

    def kx(self):
        """Angular spatial frequencies along x (rad/m), DFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)

    def ky(self):
        return 2 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)

    def kcoords(self):
        return self.kx()[None, :], self.ky()[:, None]

    def k2(self):
        kx, ky = self.kcoords()
        return kx ** 2 + ky ** 2

    @property
    def k_nyquist(self):
        return np.pi / min(self.dx, self.dy)

    def scaled(self, factor):
        """Same sample counts, pixel pitch multiplied by ``factor``."""
        return Grid2D(self.nx, self.ny, self.dx * factor, self.dy * factor)

    @staticmethod
    def centered(values):
        """Rearrange a DFT-ordered array so zero frequency sits at the centre."""
        return np.fft.fftshift(values)


def _frozen_array(values, dtype, shape, what):
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.shape != shape:
        if arr.size == shape[0] * shape[1]:
            arr = arr.reshape(shape)
        else:
            raise XpciError(f"{what} has shape {arr.shape}, grid expects {shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RealField:
    """Real scalar map on a grid (intensity, phase, thickness, ...)."""

    grid: Grid2D
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        arr = _frozen_array(self.values, np.float64, self.grid.shape, "values")
        if not np.all(np.isfinite(arr)):
            raise XpciError("RealField values must be finite")
        object.__setattr__(self, "values", arr)

    def with_values(self, values):
        return RealField(self.grid, values)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Monochromatic scalar wavefield sampled on a grid.

    ``|values|**2`` is the intensity.  Only the wavelength is stored; the
    wavenumber and angular frequency are derived from it.
    """

    grid: Grid2D
    values: np.ndarray = dc_field(repr=False)
    wavelength: float = 1e-10

    def __post_init__(self):
        wl = float(self.wavelength)
        if not (wl > 0 and math.isfinite(wl)):
            raise XpciError(f"wavelength must be positive, got {self.wavelength}")
        object.__setattr__(self, "wavelength", wl)
        arr = _frozen_array(self.values, np.complex128, self.grid.shape, "values")
        object.__setattr__(self, "values", arr)

    @property
    def k(self):
        return 2 * np.pi / self.wavelength

    @property
    def omega(self):
        return SPEED_OF_LIGHT * self.k

    def with_values(self, values):
        return ComplexField(self.grid, values, self.wavelength)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.values)))

    @classmethod
    def plane_wave(cls, grid, wavelength, amplitude=1.0):
        return cls(grid, np.full(grid.shape, amplitude, dtype=complex), wavelength)


@dataclass(frozen=True, eq=False)
class VectorField2D:
    grid: Grid2D
    sx: np.ndarray = dc_field(repr=False)
    sy: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sx", _frozen_array(self.sx, np.float64, self.grid.shape, "sx"))
        object.__setattr__(self, "sy", _frozen_array(self.sy, np.float64, self.grid.shape, "sy"))


def check_same_grid(a, b, what="operands"):
    if a.grid != b.grid:
        raise GridMismatchError(f"{what} are on different grids: {a.grid} vs {b.grid}")


def check_same_wavelength(a, b, what="operands"):
    if not math.isclose(a.wavelength, b.wavelength, rel_tol=1e-12):
        raise XpciError(f"{what} differ in wavelength: {a.wavelength} vs {b.wavelength}")


# Unitary DFT pair.  Every filter in the package is applied as
# ifft2(H * fft2(u)), where the normalisation cancels.

def fft2(values):
    return np.fft.fft2(values, norm="ortho")


def ifft2(values):
    return np.fft.ifft2(values, norm="ortho")


def spectrum(field):
    """Physical-unit spectrum with ``sum|spec|**2 == sum|psi|**2 * dx * dy``."""
    g = field.grid
    return fft2(field.values) * math.sqrt(g.dx * g.dy)


def filter_array(values, h):
    """Apply a DFT-ordered Fourier filter ``h`` to a 2D array."""
    return ifft2(h * fft2(values))


def spectral_gradient(values, grid):
    """(d/dx, d/dy) of a real periodic array via the FFT."""
    kx, ky = grid.kcoords()
    spec = np.fft.fft2(values)
    gx = np.fft.ifft2(1j * kx * spec).real
    gy = np.fft.ifft2(1j * ky * spec).real
    return gx, gy


def spectral_divergence(vx, vy, grid):
    kx, ky = grid.kcoords()
    return np.fft.ifft2(1j * kx * np.fft.fft2(vx) + 1j * ky * np.fft.fft2(vy)).real


def spectral_laplacian(values, grid):
    return np.fft.ifft2(-grid.k2() * np.fft.fft2(values)).real


def phase_gradient(phase, grid):
    """Spectral gradient of a phase map taken through ``exp(i*phase)``.

    Differentiating the unimodular factor instead of the raw phase keeps
    linear ramps with on-lattice slopes periodic, so they differentiate
    exactly; smooth periodic phases are handled to spectral accuracy.
    """
    u = np.exp(1j * np.asarray(phase))
    kx, ky = grid.kcoords()
    spec = np.fft.fft2(u)
    ux = np.fft.ifft2(1j * kx * spec)
    uy = np.fft.ifft2(1j * ky * spec)
    cu = np.conj(u)
    return (cu * ux).imag, (cu * uy).imag


def intensity_and_phase(field):
    """Return ``(|psi|**2, arg psi)`` as two :class:`RealField` objects.

    The phase is the principal value in (-pi, pi]; it is set to 0 wherever
    the amplitude vanishes.
    """
    v = field.values
    intensity = np.abs(v) ** 2
    phase = np.angle(v)
    # np.angle returns -pi for (-1, -0.0); fold onto the closed end.
    phase = np.where(phase <= -np.pi, np.pi, phase)
    phase = np.where(v == 0, 0.0, phase)
    return RealField(field.grid, intensity), RealField(field.grid, phase)


def transverse_poynting(field):
    """Transverse energy flow ``I * grad(phase)`` with unit prefactor.

    The phase difference between the two neighbours of each pixel is taken
    from ``arg(psi[i+1] * conj(psi[i-1]))`` so branch cuts never appear;
    boundaries wrap periodically.  Rescale for absolute flux.
    """
    v = field.values
    g = field.grid
    intensity = np.abs(v) ** 2
    dphx = np.angle(np.roll(v, -1, axis=1) * np.conj(np.roll(v, 1, axis=1))) / (2 * g.dx)
    dphy = np.angle(np.roll(v, -1, axis=0) * np.conj(np.roll(v, 1, axis=0))) / (2 * g.dy)
    return VectorField2D(g, intensity * dphx, intensity * dphy)
