"""Refractive-index volumes and the projection approximation."""
from dataclasses import dataclass, field as dc_field
import math
import warnings

import numpy as np

from .errors import TruncationWarning, ValidityWarning, XpciError
from .field import ComplexField, Grid2D, RealField, check_same_grid, check_same_wavelength

INDEX_WARN_LEVEL = 1e-2


def _wavenumber(wavelength):
    if not wavelength > 0:
        raise XpciError(f"wavelength must be positive, got {wavelength}")
    return 2 * np.pi / wavelength


@dataclass(frozen=True, eq=False)
class RefractiveVolume:
    """Voxelised ``n = 1 - delta + i*beta`` with arrays of shape (nz, ny, nx).

    Arrays are not copied, so memory-mapped inputs stay on disk.
    """

    grid: Grid2D
    dz: float
    delta: np.ndarray = dc_field(repr=False)
    beta: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        if not (self.dz > 0 and math.isfinite(self.dz)):
            raise XpciError("slice thickness dz must be positive")
        shape = None
        for name in ("delta", "beta"):
            arr = np.asanyarray(getattr(self, name))
            if arr.ndim == 2:
                arr = arr[None]
            if arr.ndim != 3 or arr.shape[1:] != self.grid.shape:
                raise XpciError(f"{name} has shape {arr.shape}, expected (nz, {self.grid.ny}, {self.grid.nx})")
            if shape is not None and arr.shape != shape:
                raise XpciError("delta and beta shapes differ")
            shape = arr.shape
            view = arr.view()
            view.flags.writeable = False
            object.__setattr__(self, name, view)
        peak = max(float(np.max(np.abs(self.delta))), float(np.max(np.abs(self.beta))))
        if peak >= INDEX_WARN_LEVEL:
            warnings.warn(ValidityWarning(
                f"|delta| or |beta| reaches {peak:.3g}; the paraxial model assumes both << 1",
                peak=peak, threshold=INDEX_WARN_LEVEL), stacklevel=3)

    @property
    def nz(self):
        return self.delta.shape[0]

    @property
    def thickness(self):
        return self.nz * self.dz

    @classmethod
    def vacuum(cls, grid, nz, dz):
        z = np.zeros((nz,) + grid.shape)
        return cls(grid, dz, z, z)


@dataclass(frozen=True, eq=False)
class ProjectedObject:
    """Projected phase shift (rad) and attenuation integral (dimensionless)."""

    grid: Grid2D
    phase_shift: RealField
    attenuation_integral: RealField
    wavelength: float

    def __post_init__(self):
        if self.phase_shift.grid != self.grid or self.attenuation_integral.grid != self.grid:
            raise XpciError("projected maps must share the object grid")
        if np.any(self.attenuation_integral.values < 0):
            raise XpciError("attenuation integral must be non-negative")
        _wavenumber(self.wavelength)

    @property
    def k(self):
        return 2 * np.pi / self.wavelength


def project_volume(vol, wavelength):
    """Integrate ``delta`` and ``beta`` along z one slice at a time.

    ``phase_shift = -k sum(delta) dz``, ``attenuation = 2k sum(beta) dz``.
    """
    k = _wavenumber(wavelength)
    sd = np.zeros(vol.grid.shape)
    sb = np.zeros(vol.grid.shape)
    for j in range(vol.nz):
        sd += vol.delta[j]
        sb += vol.beta[j]
    return ProjectedObject(
        vol.grid,
        RealField(vol.grid, -k * sd * vol.dz),
        RealField(vol.grid, 2 * k * sb * vol.dz),
        wavelength,
    )


def transmission_function(proj):
    """``T = exp(-A/2) exp(i phi)``, with ``|T| <= 1``."""
    t = np.exp(-0.5 * proj.attenuation_integral.values + 1j * proj.phase_shift.values)
    # Complex exp can overshoot unit modulus by an ulp; pull those back.
    over = np.abs(t) > 1
    if np.any(over):
        t[over] *= 1 - 4 * np.finfo(float).eps
    return ComplexField(proj.grid, t, proj.wavelength)


def apply_transmission(field, screen):
    """Pixel-wise product of an entrance field with a transmission screen."""
    check_same_grid(field, screen, "field and transmission")
    check_same_wavelength(field, screen, "field and transmission")
    return field.with_values(field.values * screen.values)


def sphere_thickness(grid, radius, center=(0.0, 0.0)):
    """Chord length ``2 sqrt(max(0, R^2 - r^2))`` through a sphere."""
    if not radius > 0:
        raise XpciError("radius must be positive")
    x, y = grid.coords()
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return 2 * np.sqrt(np.maximum(0.0, radius ** 2 - r2))


def sphere_phantom(grid, radius, delta, beta, wavelength, center=(0.0, 0.0)):
    """Projected homogeneous sphere: ``phi = -k delta t``, ``A = 2k beta t``."""
    k = _wavenumber(wavelength)
    half = min(grid.extent) / 2
    if radius > half:
        warnings.warn(TruncationWarning(
            f"sphere radius {radius:.4g} m exceeds half the grid extent {half:.4g} m",
            radius_m=radius, half_extent_m=half), stacklevel=2)
    t = sphere_thickness(grid, radius, center)
    return ProjectedObject(grid, RealField(grid, -k * delta * t),
                           RealField(grid, 2 * k * beta * t), wavelength)
