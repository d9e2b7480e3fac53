"""Multi-slice propagation through thick refractive volumes."""
import numpy as np

from ._parallel import map_batch
from .errors import XpciError
from .field import ComplexField, check_same_grid, fft2, ifft2
from .propagation import (carrier_phase, check_sampling, crop_array, fresnel_kernel,
                          pad_array, padded_grid)

PROJECT_THEN_PROPAGATE = "ptp"
PROPAGATE_THEN_PROJECT = "pth"
_SCHEMES = {
    "ptp": PROJECT_THEN_PROPAGATE, "project-then-propagate": PROJECT_THEN_PROPAGATE,
    "pth": PROPAGATE_THEN_PROJECT, "propagate-then-project": PROPAGATE_THEN_PROJECT,
}

AUTO_TOLERANCE = 1e-3
AUTO_MAX_SUBSTEPS = 64


def _slice_screen(vol, j, k, thickness):
    return np.exp(-1j * k * (vol.delta[j] - 1j * vol.beta[j]) * thickness)


def iter_slice_transmissions(vol, wavelength, substeps=1):
    """Yield one slice screen at a time; each voxel slice is split into
    ``substeps`` equal sub-slices."""
    if not wavelength > 0:
        raise XpciError("wavelength must be positive")
    k = 2 * np.pi / wavelength
    h = vol.dz / substeps
    for j in range(vol.nz):
        screen = ComplexField(vol.grid, _slice_screen(vol, j, k, h), wavelength)
        for _ in range(substeps):
            yield screen


def slice_transmissions(vol, wavelength):
    """``T_j = exp{-ik (delta_j - i beta_j) dz}`` for each voxel slice."""
    return list(iter_slice_transmissions(vol, wavelength))


def _scheme(name):
    try:
        return _SCHEMES[name]
    except KeyError:
        raise XpciError(f"unknown multislice scheme {name!r}") from None


def _run(entrance, vol, scheme, substeps, pad_factor, free_space):
    wl = entrance.wavelength
    k = 2 * np.pi / wl
    h = vol.dz / substeps
    pgrid = padded_grid(vol.grid, pad_factor)
    if free_space:
        check_sampling(pgrid, wl, h)
    kernel = fresnel_kernel(pgrid, wl, h) * np.exp(1j * carrier_phase(h, wl))
    psi = pad_array(entrance.values, pad_factor)

    def step(u):
        return ifft2(kernel * fft2(u)) if free_space else u

    for j in range(vol.nz):
        # Padding region is vacuum, so the screen is padded with ones.
        screen = _slice_screen(vol, j, k, h)
        if pad_factor > 1:
            screen = pad_array(screen - 1, pad_factor) + 1
        for _ in range(substeps):
            if scheme == PROJECT_THEN_PROPAGATE:
                psi = step(psi * screen)
            else:
                psi = screen * step(psi)
    if pad_factor > 1:
        psi = crop_array(psi, vol.grid.shape)
    return entrance.with_values(psi)


def _rel_rms(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def multislice_propagate(entrance, vol, scheme=PROJECT_THEN_PROPAGATE, substeps=1,
                         pad_factor=1, free_space=True, tolerance=AUTO_TOLERANCE,
                         max_substeps=AUTO_MAX_SUBSTEPS, full_output=False):
    """Propagate ``entrance`` through ``vol`` slice by slice.

    ``scheme="ptp"`` iterates ``psi <- D[psi T_j]``; ``"pth"`` iterates
    ``psi <- T_j D[psi]``.  Each voxel slice may be subdivided into
    ``substeps`` thinner slices; ``substeps="auto"`` doubles the count until
    the exit field changes by less than ``tolerance`` (relative RMS).

    The returned field includes the vacuum carrier ``exp(ik z0)`` over the
    volume thickness, matching :func:`~xpci.propagation.fresnel_propagate`.
    ``free_space=False`` skips every propagation step, leaving the product
    of slice screens.  Padding happens once for the whole stack.

    With ``full_output`` returns ``(field, info)`` where ``info`` reports the
    sub-step count used and the last auto-mode change.
    """
    check_same_grid(entrance, vol, "entrance field and volume")
    scheme = _scheme(scheme)
    if substeps == "auto":
        n = 1
        prev = _run(entrance, vol, scheme, n, pad_factor, free_space)
        change = np.inf
        while n < max_substeps:
            n *= 2
            cur = _run(entrance, vol, scheme, n, pad_factor, free_space)
            change = _rel_rms(cur.values, prev.values)
            prev = cur
            if change < tolerance:
                break
        out, info = prev, {"substeps": n, "last_change": change}
    else:
        n = int(substeps)
        if n < 1:
            raise XpciError("substeps must be >= 1")
        out, info = _run(entrance, vol, scheme, n, pad_factor, free_space), {"substeps": n}
    return (out, info) if full_output else out


def multislice_batch(entrances, vol, workers=None, **kwargs):
    """Run :func:`multislice_propagate` over independent entrance fields."""
    return map_batch(lambda f: multislice_propagate(f, vol, **kwargs), entrances, workers)
