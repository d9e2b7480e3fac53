"""Transport-of-intensity steps with diffusive (dark-field) extensions.

All coherent-flow derivatives are spectral with periodic boundaries; the
phase is differentiated through ``exp(i*phase)`` so wrapped phases are fine.
"""
from dataclasses import dataclass, field as dc_field
import warnings

import numpy as np

from .errors import ClampWarning, XpciError
from .field import (RealField, VectorField2D, check_same_grid, phase_gradient,
                    spectral_divergence)

ISOTROPIC = "isotropic"
TENSOR = "tensor"
KERNEL = "kernel"

_PSD_TOL = 1e-12


def _arr(grid, v, name):
    if isinstance(v, RealField):
        if v.grid != grid:
            raise XpciError(f"{name} is on a different grid")
        return v.values
    a = np.broadcast_to(np.asarray(v, dtype=float), grid.shape).copy()
    if not np.all(np.isfinite(a)):
        raise XpciError(f"{name} must be finite")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DiffusionMap:
    """Dimensionless diffusion coefficients for one Fokker-Planck variant.

    Use the ``isotropic``, ``tensor`` and ``kernel`` constructors rather
    than instantiating directly.  For the kernel variant ``stencil`` is
    either one ``(s, s)`` array shared by every pixel or a per-source-pixel
    ``(ny, nx, s, s)`` array; the stencil centre is the source pixel.
    """

    grid: object
    variant: str
    coefficients: dict = dc_field(repr=False)
    theta: np.ndarray = dc_field(default=None, repr=False)

    @classmethod
    def isotropic(cls, grid, d, theta=None):
        d = _arr(grid, d, "D")
        if np.any(d < 0):
            raise XpciError("isotropic diffusion coefficient must be >= 0")
        return cls(grid, ISOTROPIC, {"d": d}, _theta(grid, theta))

    @classmethod
    def from_scatter(cls, grid, fraction, theta):
        """Isotropic map with ``D = F * theta**2``."""
        f = _arr(grid, fraction, "F")
        th = _arr(grid, theta, "theta")
        if np.any(f < 0) or np.any(f >= 1):
            raise XpciError("scattered fraction must lie in [0, 1)")
        return cls.isotropic(grid, f * th ** 2, th)

    @classmethod
    def tensor(cls, grid, dxx, dyy, dxy=0.0):
        dxx, dyy, dxy = (_arr(grid, v, n) for v, n in ((dxx, "Dxx"), (dyy, "Dyy"), (dxy, "Dxy")))
        scale = max(float(np.max(np.abs(dxx))), float(np.max(np.abs(dyy))), 1e-300)
        tol = _PSD_TOL * scale
        bad = (dxx < -tol) | (dyy < -tol) | (dxx * dyy - dxy ** 2 < -tol * scale)
        if np.any(bad):
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise XpciError(f"diffusion tensor is not positive semidefinite at pixel {idx}")
        return cls(grid, TENSOR, {"dxx": dxx, "dyy": dyy, "dxy": dxy})

    @classmethod
    def kernel(cls, grid, stencil, fraction):
        k = np.array(stencil, dtype=float)
        if k.ndim == 2:
            s = k.shape
        elif k.ndim == 4 and k.shape[:2] == grid.shape:
            s = k.shape[2:]
        else:
            raise XpciError("stencil must have shape (s, s) or (ny, nx, s, s)")
        if s[0] != s[1] or s[0] % 2 == 0:
            raise XpciError("stencil must be square with odd size")
        if np.any(k < 0):
            raise XpciError("stencil weights must be non-negative")
        sums = k.sum(axis=(-2, -1))
        if np.any(np.abs(sums - 1) > 1e-12):
            raise XpciError("each stencil must sum to one")
        f = _arr(grid, fraction, "F")
        if np.any(f < 0) or np.any(f >= 1):
            raise XpciError("scattered fraction must lie in [0, 1)")
        k.flags.writeable = False
        return cls(grid, KERNEL, {"stencil": k, "f": f})

    def blur_width(self, distance):
        """Position-dependent blur width ``L = theta * distance``."""
        if self.theta is None:
            raise XpciError("diffusion map was built without a scattering angle")
        return RealField(self.grid, self.theta * distance)


def _theta(grid, theta):
    if theta is None:
        return None
    th = _arr(grid, theta, "theta")
    if np.any(th < 0):
        raise XpciError("scattering angle must be >= 0")
    return th


def _check_inputs(intensity, phase, wavelength):
    check_same_grid(intensity, phase, "intensity and phase")
    if not wavelength > 0:
        raise XpciError("wavelength must be positive")
    if np.any(intensity.values < 0):
        raise XpciError("input intensity must be non-negative")


def _coherent_flow(intensity, phase, distance, wavelength):
    g = intensity.grid
    k = 2 * np.pi / wavelength
    gx, gy = phase_gradient(phase.values, g)
    i = intensity.values
    return i - (distance / k) * spectral_divergence(i * gx, i * gy, g)


def _clamped(grid, values, what):
    neg = values < 0
    n = int(np.count_nonzero(neg))
    if n:
        warnings.warn(ClampWarning(
            f"{what} produced {n} negative intensity samples; clamped to 0 "
            "(step too long for the small-distance regime)",
            clamped=n, minimum=float(values.min())), stacklevel=3)
        values = np.where(neg, 0.0, values)
    return RealField(grid, values)


def tie_step(intensity, phase, dz, wavelength):
    """One forward transport-of-intensity step.

    ``I' = I - (dz/k) div(I grad(phase))``.  Negative output samples are
    clamped to zero with a :class:`~xpci.errors.ClampWarning`.
    """
    _check_inputs(intensity, phase, wavelength)
    out = _coherent_flow(intensity, phase, dz, wavelength)
    return _clamped(intensity.grid, out, "tie_step")


def _second_derivatives(values, grid):
    kx, ky = grid.kcoords()
    spec = np.fft.fft2(values)
    dxx = np.fft.ifft2(-kx * kx * spec).real
    dyy = np.fft.ifft2(-ky * ky * spec).real
    dxy = np.fft.ifft2(-kx * ky * spec).real
    return dxx, dyy, dxy


def _kernel_scatter(intensity, stencil, fraction):
    """``sum_x' K_x'(x - x') F(x') I(x') - F(x) I(x)`` on the periodic grid.

    The scattered fraction is evaluated at the source pixel so the total is
    conserved exactly even when ``F`` varies.
    """
    src = fraction * intensity
    s = stencil.shape[-1]
    h = s // 2
    out = -src
    for a in range(s):
        for b in range(s):
            w = stencil[..., a, b]
            if not np.any(w):
                continue
            out = out + np.roll(w * src, (a - h, b - h), axis=(0, 1))
    return out


def fp_step(intensity, phase, dmap, distance, wavelength):
    """Forward Fokker-Planck step: coherent flow plus a diffusive term.

    Isotropic maps add ``distance**2 * D * lap(I)``; tensor maps add
    ``distance**2 * (Dxx I_xx + Dyy I_yy + 2 Dxy I_xy)``; kernel maps add
    the conservative redistribution of :func:`_kernel_scatter`.
    """
    _check_inputs(intensity, phase, wavelength)
    check_same_grid(intensity, dmap, "intensity and diffusion map")
    g = intensity.grid
    i = intensity.values
    out = _coherent_flow(intensity, phase, distance, wavelength)
    c = dmap.coefficients
    if dmap.variant == ISOTROPIC:
        if np.any(c["d"]):
            ixx, iyy, _ = _second_derivatives(i, g)
            out = out + distance ** 2 * c["d"] * (ixx + iyy)
    elif dmap.variant == TENSOR:
        ixx, iyy, ixy = _second_derivatives(i, g)
        out = out + distance ** 2 * (c["dxx"] * ixx + c["dyy"] * iyy + 2 * c["dxy"] * ixy)
    else:
        out = out + _kernel_scatter(i, c["stencil"], c["f"])
    return _clamped(g, out, "fp_step")


def deflection_angles(phase, wavelength):
    """Local deflection angles ``grad(phase) / k`` in radians."""
    if not wavelength > 0:
        raise XpciError("wavelength must be positive")
    k = 2 * np.pi / wavelength
    gx, gy = phase_gradient(phase.values, phase.grid)
    return VectorField2D(phase.grid, gx / k, gy / k)
