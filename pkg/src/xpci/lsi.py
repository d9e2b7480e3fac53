"""Linear shift-invariant imaging systems as Fourier-space filters."""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from .errors import StageError, XpciError
from .field import (ComplexField, Grid2D, RealField, check_same_grid, fft2, filter_array,
                    ifft2)
from .propagation import PropagationPlan, fresnel_propagate
from .sample import apply_transmission

GAIN_TOLERANCE = 1e-12


class AberrationSet(dict):
    """Sparse map ``(m, n) -> alpha_mn`` (complex, units m**(m+n)).

    The transfer function is ``prod exp(i alpha_mn kx**m ky**n)``; real parts
    are coherent aberrations, imaginary parts damp.
    """

    def __init__(self, coefficients=()):
        super().__init__()
        items = coefficients.items() if isinstance(coefficients, dict) else coefficients
        for key, value in items:
            m, n = (int(key[0]), int(key[1]))
            if m < 0 or n < 0:
                raise XpciError(f"aberration orders must be non-negative, got {(m, n)}")
            value = complex(value)
            if not (math.isfinite(value.real) and math.isfinite(value.imag)):
                raise XpciError(f"aberration ({m},{n}) is not finite")
            self[(m, n)] = self.get((m, n), 0) + value

    @classmethod
    def defocus(cls, distance, wavelength):
        """Free-space propagation kernel (carrier phase omitted)."""
        a = -distance * wavelength / (4 * np.pi)
        return cls({(2, 0): a, (0, 2): a})

    @classmethod
    def from_records(cls, records):
        """From a list of ``{"m", "n", "re", "im"}`` dicts (the JSON file layout)."""
        return cls(((r["m"], r["n"]), complex(r.get("re", 0.0), r.get("im", 0.0)))
                   for r in records)

    def to_records(self):
        return [{"m": m, "n": n, "re": v.real, "im": v.imag}
                for (m, n), v in sorted(self.items())]


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Sampled complex filter ``T(kx, ky)`` in DFT order.

    Construction rejects any sample with ``|T| > 1 + 1e-12`` unless
    ``allow_gain`` is set.
    """

    grid: Grid2D
    values: np.ndarray = dc_field(repr=False)
    allow_gain: bool = False

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.complex128, copy=True)
        if arr.shape != self.grid.shape:
            raise XpciError(f"transfer function shape {arr.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise XpciError("transfer function has non-finite samples")
        if not self.allow_gain:
            peak = np.abs(arr)
            if np.any(peak > 1 + GAIN_TOLERANCE):
                idx = np.unravel_index(np.argmax(peak), arr.shape)
                raise XpciError(
                    f"|T| = {peak[idx]:.6g} > 1 at frequency index {idx}; "
                    "pass allow_gain=True to override the passivity check")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def omega_factor(self):
        """Response to a normally incident plane wave, ``T(0, 0)``."""
        return complex(self.values[0, 0])

    def __mul__(self, other):
        if isinstance(other, TransferFunction):
            if other.grid != self.grid:
                raise XpciError("transfer functions on different grids")
            return TransferFunction(self.grid, self.values * other.values,
                                    self.allow_gain or other.allow_gain)
        return TransferFunction(self.grid, self.values * other, self.allow_gain)

    def reflected(self):
        """Samples of ``T(-k)``: index ``m -> -m mod n`` on both axes."""
        return np.roll(self.values[::-1, ::-1], 1, axis=(0, 1))

    def centered(self):
        return np.fft.fftshift(self.values)

    @classmethod
    def identity(cls, grid):
        return cls(grid, np.ones(grid.shape))

    @classmethod
    def from_function(cls, grid, fn, allow_gain=False):
        """Sample ``fn(kx, ky)`` on the grid's frequency lattice."""
        kx, ky = grid.kcoords()
        return cls(grid, np.broadcast_to(fn(kx, ky), grid.shape), allow_gain)


def transfer_from_aberrations(ab, grid, allow_gain=False):
    """Sample ``prod exp(i alpha_mn kx^m ky^n)`` on ``grid``."""
    kx, ky = grid.kcoords()
    exponent = np.zeros(grid.shape, dtype=complex)
    for (m, n), alpha in AberrationSet(ab).items():
        exponent = exponent + alpha * (kx ** m) * (ky ** n)
    return TransferFunction(grid, np.exp(1j * exponent), allow_gain)


def free_space_transfer(grid, wavelength, distance):
    return transfer_from_aberrations(AberrationSet.defocus(distance, wavelength), grid)


def apply_lsi(field, tf):
    """Decompose, filter, synthesise: ``F^-1 T F psi``."""
    check_same_grid(field, tf, "field and transfer function")
    return field.with_values(filter_array(field.values, tf.values))


@dataclass(frozen=True)
class Transmission:
    screen: ComplexField


@dataclass(frozen=True)
class Propagate:
    plan: PropagationPlan


@dataclass(frozen=True)
class Filter:
    tf: TransferFunction


def _check_stage(i, stage, field):
    if isinstance(stage, Transmission):
        if stage.screen.grid != field.grid:
            raise StageError(i, "transmission screen grid differs from the field grid")
        if not math.isclose(stage.screen.wavelength, field.wavelength, rel_tol=1e-12):
            raise StageError(i, "transmission screen wavelength differs from the field")
    elif isinstance(stage, Filter):
        if stage.tf.grid != field.grid:
            raise StageError(i, "transfer function grid differs from the field grid")
    elif isinstance(stage, Propagate):
        if not isinstance(stage.plan, PropagationPlan):
            raise StageError(i, "propagate stage needs a PropagationPlan")
    else:
        raise StageError(i, f"unknown stage type {type(stage).__name__}")


def cascade(entrance, stages):
    """Apply ``stages`` in list order (the first element acts first).

    Every stage is validated before anything runs; the first incompatible
    one raises :class:`~xpci.errors.StageError` carrying its index.
    """
    stages = list(stages)
    for i, stage in enumerate(stages):
        _check_stage(i, stage, entrance)
    psi = entrance
    for stage in stages:
        if isinstance(stage, Transmission):
            psi = apply_transmission(psi, stage.screen)
        elif isinstance(stage, Propagate):
            psi = fresnel_propagate(psi, stage.plan)
        else:
            psi = apply_lsi(psi, stage.tf)
    return psi


def _omega(tf, tol=1e-9):
    omega = tf.omega_factor
    if omega == 0:
        raise XpciError("T(0,0) = 0: dark-field system, weak-object linearisation invalid")
    if abs(omega.imag) > tol * abs(omega):
        raise XpciError(f"T(0,0) = {omega} is not real; weak-object model needs real Omega")
    return omega.real


def phase_contrast_transfer(tf):
    """Weak-phase CTF ``C(k) = -2 Omega (T(k) - conj T(-k)) / 2i`` (real-valued output)."""
    omega = _omega(tf)
    c = -2 * omega * (tf.values - np.conj(tf.reflected())) / 2j
    return omega, c


def weak_phase_image(phase, tf):
    """Linearised intensity ``|Omega|^2 + F^-1 C F phi`` for a weak phase object."""
    check_same_grid(phase, tf, "phase map and transfer function")
    omega, c = phase_contrast_transfer(tf)
    img = omega ** 2 + ifft2(c * fft2(phase.values)).real
    return RealField(phase.grid, img)
