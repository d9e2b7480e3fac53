"""Paraxial free-space propagation and cone-beam helpers."""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .errors import SamplingWarning, XpciError
from .field import ComplexField, Grid2D, RealField, fft2, ifft2

APODIZE_FRACTION = 0.08


@dataclass(frozen=True)
class PropagationPlan:
    """Distance (m, negative back-propagates), zero-padding multiple, taper flag."""

    distance: float
    pad_factor: int = 2
    apodize: bool = False

    def __post_init__(self):
        if not math.isfinite(self.distance):
            raise XpciError("propagation distance must be finite")
        if self.pad_factor not in (1, 2, 4):
            raise XpciError(f"pad_factor must be 1, 2 or 4, got {self.pad_factor}")


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Point-source geometry: source-object ``z1`` and object-detector ``z2``."""

    z1: float
    z2: float

    def __post_init__(self):
        if not self.z1 > 0:
            raise XpciError("z1 must be positive")
        if not self.z2 >= 0:
            raise XpciError("z2 must be non-negative")

    @property
    def magnification(self):
        return (self.z1 + self.z2) / self.z1

    @property
    def effective_distance(self):
        return self.z2 / self.magnification


def carrier_phase(distance, wavelength):
    """k * distance reduced modulo 2*pi.

    ``math.fmod`` is exact, so phases of distances that add exactly in
    floating point also add exactly here.
    """
    return 2 * np.pi * math.fmod(distance, wavelength) / wavelength


def fresnel_kernel(grid, wavelength, distance):
    """DFT-ordered free-space transfer function without the carrier factor."""
    k = 2 * np.pi / wavelength
    return np.exp(-1j * distance * grid.k2() / (2 * k))


def sampling_limit(n, d, wavelength):
    """Largest |distance| before the transfer-function chirp aliases."""
    return n * d * d / wavelength


def check_sampling(grid, wavelength, distance):
    lim = min(sampling_limit(grid.nx, grid.dx, wavelength),
              sampling_limit(grid.ny, grid.dy, wavelength))
    if abs(distance) > lim:
        warnings.warn(SamplingWarning(
            f"|distance| = {abs(distance):.4g} m exceeds the chirp sampling "
            f"limit {lim:.4g} m; expect aliasing near Nyquist",
            distance_m=distance, limit_m=lim, nx=grid.nx, ny=grid.ny),
            stacklevel=3)
        return False
    return True


def _taper(n, fraction=APODIZE_FRACTION):
    w = np.ones(n)
    m = int(round(fraction * n))
    if m > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * (np.arange(m) + 0.5) / m))
        w[:m] = ramp
        w[n - m:] = ramp[::-1]
    return w


def pad_array(values, pad_factor, mode="constant"):
    """Embed ``values`` centrally in a frame ``pad_factor`` times larger."""
    if pad_factor == 1:
        return values
    ny, nx = values.shape
    py, px = (pad_factor - 1) * ny, (pad_factor - 1) * nx
    widths = ((py // 2, py - py // 2), (px // 2, px - px // 2))
    if mode == "constant":
        return np.pad(values, widths)
    return np.pad(values, widths, mode=mode)


def crop_array(values, shape):
    ny, nx = shape
    py, px = values.shape[0] - ny, values.shape[1] - nx
    return values[py // 2: py // 2 + ny, px // 2: px // 2 + nx]


def propagate_array(values, grid, wavelength, distance):
    """Core sandwich on a raw periodic array (no padding, no checks)."""
    h = fresnel_kernel(grid, wavelength, distance)
    out = ifft2(h * fft2(values))
    return out * np.exp(1j * carrier_phase(distance, wavelength))


def padded_grid(grid, pad_factor):
    return Grid2D(grid.nx * pad_factor, grid.ny * pad_factor, grid.dx, grid.dy)


def fresnel_propagate(field, plan):
    """Propagate ``field`` through vacuum by ``plan.distance``.

    Implements ``exp(ik D) F^-1 exp[-i D (kx^2+ky^2) / 2k] F psi``.  With
    ``pad_factor > 1`` the field is zero-padded symmetrically, propagated
    in the larger periodic frame, and cropped back.  ``apodize`` pads by
    edge replication instead and tapers the outer 8% of the frame with a
    raised cosine, which removes both the wrap seam and the hard aperture.

    Emits :class:`~xpci.errors.SamplingWarning` when the distance exceeds
    ``n * d**2 / wavelength`` of the DFT frame.
    """
    if not field.is_finite():
        raise XpciError("field contains non-finite values")
    grid = field.grid
    pgrid = padded_grid(grid, plan.pad_factor)
    check_sampling(pgrid, field.wavelength, plan.distance)
    if plan.distance == 0:
        return field
    values = field.values
    if plan.apodize:
        values = pad_array(values, plan.pad_factor, mode="edge")
        values = values * np.outer(_taper(pgrid.ny), _taper(pgrid.nx))
    else:
        values = pad_array(values, plan.pad_factor)
    out = propagate_array(values, pgrid, field.wavelength, plan.distance)
    if plan.pad_factor > 1:
        out = crop_array(out, grid.shape)
    return field.with_values(out)


def fresnel_number(feature_size, wavelength, distance, magnification=1.0):
    """``M a**2 / (lambda z)``; N_F below about 10 puts the projection
    approximation at risk."""
    if not wavelength > 0:
        raise XpciError("wavelength must be positive")
    if not distance > 0:
        raise XpciError("distance must be positive")
    if magnification < 1:
        raise XpciError("magnification must be >= 1")
    if feature_size < 0:
        raise XpciError("feature size must be non-negative")
    return magnification * feature_size ** 2 / (wavelength * distance)


def spherical_wave_image(exit_field, geom, pad_factor=2):
    """Detector intensity for point-source illumination via Fresnel scaling.

    The plane-wave exit field is propagated by ``z2 / M``; the resulting
    intensity is divided by ``M**2`` and returned on a grid whose pitch is
    ``M`` times the input pitch.
    """
    m = geom.magnification
    if geom.z2 == 0:
        return RealField(exit_field.grid, np.abs(exit_field.values) ** 2)
    prop = fresnel_propagate(exit_field, PropagationPlan(geom.effective_distance, pad_factor))
    return RealField(exit_field.grid.scaled(m), np.abs(prop.values) ** 2 / m ** 2)
