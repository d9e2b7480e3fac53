"""Space-frequency partial coherence: ensembles of monochromatic fields.

Weighted sums over members always run in ascending member index so that
parallel and serial evaluation agree bit for bit.
"""
from dataclasses import dataclass
import math

import numpy as np

from ._parallel import map_batch
from .errors import StageError, XpciError
from .field import ComplexField, RealField, check_same_grid
from .lsi import TransferFunction, cascade

DENSE_LIMIT = 32 * 32
WEIGHT_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Members ``psi_j`` with statistical weights ``c_j`` summing to one."""

    members: tuple
    weights: tuple

    def __post_init__(self):
        members = tuple(self.members)
        weights = tuple(float(c) for c in self.weights)
        if not members:
            raise XpciError("ensemble needs at least one member")
        if len(members) != len(weights):
            raise XpciError("one weight per member required")
        if any(not (0 <= c <= 1) for c in weights):
            raise XpciError("weights must lie in [0, 1]")
        if abs(math.fsum(weights) - 1) > WEIGHT_TOLERANCE:
            raise XpciError(f"weights sum to {math.fsum(weights)!r}, not 1")
        first = members[0]
        for m in members[1:]:
            check_same_grid(first, m, "ensemble members")
            if not math.isclose(m.wavelength, first.wavelength, rel_tol=1e-12):
                raise XpciError("ensemble members must share one wavelength")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", weights)

    @property
    def grid(self):
        return self.members[0].grid

    @property
    def wavelength(self):
        return self.members[0].wavelength

    def __len__(self):
        return len(self.members)

    @classmethod
    def coherent(cls, field):
        return cls((field,), (1.0,))


def cross_spectral_density(ens, pairs):
    """``W(r1, r2) = sum_j c_j conj(psi_j(r1)) psi_j(r2)`` for pixel pairs.

    ``pairs`` is a sequence of ``((ix1, iy1), (ix2, iy2))`` index pairs.
    """
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2, 2)
    ny, nx = ens.grid.shape
    ix = pairs[..., 0]
    iy = pairs[..., 1]
    if np.any(ix < 0) or np.any(ix >= nx) or np.any(iy < 0) or np.any(iy >= ny):
        raise XpciError("pixel index out of range")
    re = np.zeros(len(pairs))
    im = np.zeros(len(pairs))
    for c, psi in zip(ens.weights, ens.members):
        a = psi.values[iy[:, 0], ix[:, 0]]
        b = psi.values[iy[:, 1], ix[:, 1]]
        # Spelled out so that swapping r1 and r2 negates the imaginary part
        # exactly; library complex products may fuse differently.
        re += c * (a.real * b.real + a.imag * b.imag)
        im += c * (a.real * b.imag - a.imag * b.real)
    return re + 1j * im


def cross_spectral_density_dense(ens):
    """Full ``W[y1, x1, y2, x2]``; only for grids of at most 32x32 pixels."""
    if ens.grid.nx * ens.grid.ny > DENSE_LIMIT:
        raise XpciError("dense cross-spectral density limited to 32x32 grids; use pairs")
    shape = ens.grid.shape * 2
    w = np.zeros(shape, dtype=complex)
    for c, psi in zip(ens.weights, ens.members):
        v = psi.values
        w += c * np.multiply.outer(np.conj(v), v)
    return w


def spectral_density(ens):
    """``S = sum_j c_j |psi_j|^2``."""
    s = np.zeros(ens.grid.shape)
    for c, psi in zip(ens.weights, ens.members):
        s += c * np.abs(psi.values) ** 2
    return RealField(ens.grid, s)


@dataclass(frozen=True, eq=False)
class SpectralEntry:
    omega: float
    density: RealField
    response: float = 1.0

    def __post_init__(self):
        if self.response < 0:
            raise XpciError("detector response must be non-negative")


class SpectralStack(tuple):
    """Spectral densities at several angular frequencies with detector response."""

    def __new__(cls, entries):
        entries = tuple(e if isinstance(e, SpectralEntry) else SpectralEntry(*e)
                        for e in entries)
        for e in entries[1:]:
            check_same_grid(entries[0].density, e.density, "spectral densities")
        return super().__new__(cls, sorted(entries, key=lambda e: e.omega))


def _trapezoid_weights(omegas):
    if len(omegas) == 1:
        return np.ones(1)
    d = np.diff(omegas)
    w = np.zeros(len(omegas))
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def detected_intensity(stack):
    """Polychromatic detector signal ``sum S(omega) response(omega) d omega``.

    Uses trapezoid weights over the (sorted) frequencies; a single entry
    gets weight 1.
    """
    stack = SpectralStack(stack)
    if not stack:
        raise XpciError("spectral stack is empty")
    weights = _trapezoid_weights(np.array([e.omega for e in stack]))
    out = np.zeros(stack[0].density.grid.shape)
    for w, e in zip(weights, stack):
        out += w * e.response * e.density.values
    return RealField(stack[0].density.grid, out)


def propagate_ensemble(ens, stages, workers=None):
    """Pass every member through the same cascade; weights are unchanged."""
    stages = list(stages)

    def run(item):
        j, psi = item
        try:
            return cascade(psi, stages)
        except StageError as exc:
            raise StageError(exc.index, f"member {j}: {exc}") from exc
        except XpciError as exc:
            raise XpciError(f"member {j}: {exc}") from exc

    out = map_batch(run, list(enumerate(ens.members)), workers)
    return Ensemble(tuple(out), ens.weights)


def tilted_plane_wave(grid, wavelength, kx, ky, amplitude=1.0):
    x, y = grid.coords()
    return ComplexField(grid, amplitude * np.exp(1j * (kx * x + ky * y)), wavelength)


def source_points(grid, wavelength, source_diameter, z1, step=1, profile="uniform-disk"):
    """Tilts ``(kx, ky)`` and normalised weights sampling an incoherent source.

    Tilts are taken on the periodic frequency lattice (every ``step``-th
    lattice point) so each tilted plane wave is exactly periodic on
    ``grid``.  A source point at transverse offset ``s`` illuminates the
    object with tilt ``-k s / z1``.  Gaussian profiles (``source_diameter``
    is the FWHM) are truncated at three standard deviations.
    """
    if source_diameter < 0:
        raise XpciError("source diameter must be non-negative")
    k = 2 * np.pi / wavelength
    dkx = 2 * np.pi / (grid.nx * grid.dx) * step
    dky = 2 * np.pi / (grid.ny * grid.dy) * step
    reach = source_diameter / 2
    if profile == "gaussian":
        reach = 3 * source_diameter / (2 * math.sqrt(2 * math.log(2)))
    mx = int(np.floor(k * reach / z1 / dkx))
    my = int(np.floor(k * reach / z1 / dky))
    points = []
    for iy in range(-my, my + 1):
        for ix in range(-mx, mx + 1):
            sx = -ix * dkx * z1 / k
            sy = -iy * dky * z1 / k
            r = math.hypot(sx, sy)
            if profile == "gaussian" and r > reach:
                continue
            w = _profile_weight(profile, r, source_diameter)
            if w > 0:
                points.append((ix * dkx, iy * dky, w))
    total = math.fsum(p[2] for p in points)
    weights = [p[2] / total for p in points]
    # Absorb rounding in the last weight so the sum is one to the last bit.
    weights[-1] = 1.0 - math.fsum(weights[:-1])
    return [(kx, ky, w) for (kx, ky, _), w in zip(points, weights)]


def source_ensemble(grid, wavelength, source_diameter, z1, step=1, profile="uniform-disk"):
    """Ensemble of tilted plane waves from :func:`source_points`."""
    pts = source_points(grid, wavelength, source_diameter, z1, step, profile)
    members = tuple(tilted_plane_wave(grid, wavelength, kx, ky) for kx, ky, _ in pts)
    return Ensemble(members, tuple(w for _, _, w in pts))


def propagated_spectral_density(members, weights, stages):
    """``sum_j c_j |cascade(psi_j)|^2`` without storing the propagated members.

    ``members`` may be any iterable (a generator keeps memory at one field);
    accumulation runs in member order.
    """
    weights = [float(c) for c in weights]
    if any(not (0 <= c <= 1) for c in weights):
        raise XpciError("weights must lie in [0, 1]")
    if abs(math.fsum(weights) - 1) > WEIGHT_TOLERANCE:
        raise XpciError("weights must sum to one")
    stages = list(stages)
    acc = None
    n = 0
    for j, (c, psi) in enumerate(zip(weights, members)):
        try:
            out = cascade(psi, stages)
        except StageError as exc:
            raise StageError(exc.index, f"member {j}: {exc}") from exc
        term = c * np.abs(out.values) ** 2
        acc = term if acc is None else acc + term
        grid = out.grid
        n += 1
    if n != len(weights):
        raise XpciError(f"{len(weights)} weights but {n} members")
    return RealField(grid, acc)


def _profile_weight(profile, r, diameter):
    if diameter == 0:
        return 1.0 if r == 0 else 0.0
    if profile in ("uniform-disk", "disk", "uniform"):
        return 1.0 if r <= diameter / 2 else 0.0
    if profile == "gaussian":
        sigma = diameter / (2 * math.sqrt(2 * math.log(2)))
        return math.exp(-r * r / (2 * sigma * sigma))
    raise XpciError(f"unknown source profile {profile!r}")


def blur_kernel(grid, width, profile="uniform-disk", oversample=8):
    """Unit-sum periodic kernel centred on index (0, 0).

    ``width`` is the disk diameter, or the Gaussian FWHM.  The disk is
    anti-aliased by ``oversample``-fold sub-pixel sampling.
    """
    ny, nx = grid.shape
    fx = np.fft.fftfreq(nx) * nx * grid.dx
    fy = np.fft.fftfreq(ny) * ny * grid.dy
    if profile in ("uniform-disk", "disk", "uniform"):
        sub = (np.arange(oversample) + 0.5) / oversample - 0.5
        r = width / 2
        kern = np.zeros(grid.shape)
        for oy in sub:
            for ox in sub:
                x = fx[None, :] + ox * grid.dx
                y = fy[:, None] + oy * grid.dy
                kern += (x * x + y * y) <= r * r
        if kern.sum() == 0:
            kern[0, 0] = 1.0
    elif profile == "gaussian":
        sigma = width / (2 * math.sqrt(2 * math.log(2)))
        kern = np.exp(-(fx[None, :] ** 2 + fy[:, None] ** 2) / (2 * sigma * sigma))
    else:
        raise XpciError(f"unknown source profile {profile!r}")
    return kern / kern.sum()


def source_blur(image, source_diameter, geom, profile="uniform-disk"):
    """Convolve with the source profile scaled to ``D_eff = D z2 / z1``."""
    if source_diameter < 0:
        raise XpciError("source diameter must be non-negative")
    d_eff = source_diameter * geom.z2 / geom.z1
    if d_eff == 0:
        return image
    kern = blur_kernel(image.grid, d_eff, profile)
    out = np.fft.ifft2(np.fft.fft2(image.values) * np.fft.fft2(kern)).real
    return image.with_values(out)


def coherence_envelope(tf, cutoff):
    """Multiply ``T`` by ``exp(-|k|^2 / (2 k_c^2))``; ``cutoff=inf`` is a no-op."""
    if not cutoff > 0:
        raise XpciError("envelope cutoff must be positive")
    if math.isinf(cutoff):
        return tf
    env = np.exp(-tf.grid.k2() / (2 * cutoff ** 2))
    return TransferFunction(tf.grid, tf.values * env, tf.allow_gain)
