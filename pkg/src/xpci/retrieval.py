"""Inverse operators: regularized deconvolution, multi-state combination,
weak-object and single-material phase retrieval, and the linear
transfer-function dark-field separation.

Functions that clamp or count things accept ``full_output``; when set they
return ``(result, info)`` with the counts in ``info``.
"""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .errors import ClampWarning, SingularFilterError, ValidityWarning, XpciError
from .field import RealField, check_same_grid, fft2, ifft2
from .lsi import phase_contrast_transfer

AUTO = "auto"
AUTO_FACTOR = 1e-4
PAGANIN_EPS = 1e-12
CLAMP_WARN_FRACTION = 0.01


def _regularizer(reg, power):
    """Resolve ``reg`` against a denominator power spectrum ``sum |T|^2``."""
    if isinstance(reg, str):
        if reg != AUTO:
            raise XpciError(f"regularizer must be a number or {AUTO!r}")
        return AUTO_FACTOR * float(np.max(power))
    reg = float(reg)
    if not reg >= 0 or not math.isfinite(reg):
        raise XpciError("regularizer must be finite and >= 0")
    return reg


def _check_denominator(den, what):
    zero = den <= 0
    if np.any(zero):
        idx = tuple(int(i) for i in np.argwhere(zero)[0])
        raise SingularFilterError(f"{what} vanishes; use reg > 0", idx)


def invert_lsi_single(out_field, tf, reg=AUTO):
    """Tikhonov inverse ``F^-1 [conj(T) / (|T|^2 + reg)] F psi_out``."""
    check_same_grid(out_field, tf, "field and transfer function")
    power = np.abs(tf.values) ** 2
    den = power + _regularizer(reg, power)
    _check_denominator(den, "|T|^2 + reg")
    return out_field.with_values(ifft2(np.conj(tf.values) / den * fft2(out_field.values)))


def _paired(items, tfs, what):
    items, tfs = list(items), list(tfs)
    if not items:
        raise XpciError(f"need at least one {what}")
    if len(items) != len(tfs):
        raise XpciError(f"one transfer function per {what} required")
    for a, t in zip(items, tfs):
        check_same_grid(items[0], a, what + "s")
        check_same_grid(a, t, f"{what} and transfer function")
    return items, tfs


def schiske_combine(out_fields, tfs, reg=AUTO):
    """Combine several measured fields of one object into a single estimate.

    ``psi_in = F^-1 sum_j conj(T_j) F psi_j / (sum_p |T_p|^2 + reg)``.
    """
    fields, tfs = _paired(out_fields, tfs, "field")
    power = sum(np.abs(t.values) ** 2 for t in tfs)
    den = power + _regularizer(reg, power)
    _check_denominator(den, "sum |T_p|^2 + reg")
    num = sum(np.conj(t.values) * fft2(f.values) for f, t in zip(fields, tfs))
    return fields[0].with_values(ifft2(num / den))


def ctf_retrieve(images, tfs, reg=AUTO):
    """Weak-object phase estimate from one or more bright-field images.

    ``phi = F^-1 sum_j conj(C_j) F(I_j - Omega_j^2) / (sum_p |C_p|^2 + reg)``
    where ``C_j`` is the phase contrast transfer of state ``j``.
    """
    images, tfs = _paired(images, tfs, "image")
    for i, img in enumerate(images):
        if np.any(img.values < 0):
            raise XpciError(f"image {i} has negative values")
    ctfs = [phase_contrast_transfer(t) for t in tfs]
    power = sum(np.abs(c) ** 2 for _, c in ctfs)
    den = power + _regularizer(reg, power)
    _check_denominator(den, "sum |C_p|^2 + reg")
    num = sum(np.conj(c) * fft2(img.values - omega ** 2)
              for img, (omega, c) in zip(images, ctfs))
    return RealField(images[0].grid, ifft2(num / den).real)


def paganin_thickness(image, i0, delta, mu, distance, wavelength=None, full_output=False):
    """Projected thickness of a single homogeneous material from one image.

    ``t = -(1/mu) ln F^-1 { F[I/I0] / (1 + (delta*distance/mu) k_perp^2) }``.
    The filtered intensity is clamped below at ``1e-12 * max`` before the
    logarithm; more than 1% clamped pixels raises a
    :class:`~xpci.errors.ClampWarning`.  ``wavelength`` is not needed by the
    filter and is accepted only for call-site symmetry.
    """
    if not mu > 0:
        raise XpciError("linear attenuation coefficient mu must be positive")
    if not i0 > 0:
        raise XpciError("flat-field intensity I0 must be positive")
    if delta < 0 or distance < 0:
        raise XpciError("delta and distance must be non-negative")
    if np.any(image.values < 0):
        raise XpciError("image must be non-negative")
    g = image.grid
    if delta * distance == 0:
        # No phase term: plain Beer-Lambert, skipping the FFT round-off.
        filtered = image.values / i0
    else:
        den = 1 + (delta * distance / mu) * g.k2()
        filtered = np.fft.ifft2(np.fft.fft2(image.values / i0) / den).real
    eps = PAGANIN_EPS * max(float(filtered.max()), np.finfo(float).tiny)
    low = filtered < eps
    n = int(np.count_nonzero(low))
    if n > CLAMP_WARN_FRACTION * filtered.size:
        warnings.warn(ClampWarning(
            f"{n} of {filtered.size} filtered samples clamped before the logarithm; "
            "single-material model likely violated", clamped=n, total=filtered.size),
            stacklevel=2)
    thickness = RealField(g, -np.log(np.maximum(filtered, eps)) / mu)
    if full_output:
        return thickness, {"clamped": n, "total": int(filtered.size), "epsilon": eps}
    return thickness


@dataclass(frozen=True)
class LinearTFState:
    """Imaging state with ``T(kx) = 1 + tau * kx``; ``tau`` in metres."""

    tau: complex

    def __post_init__(self):
        object.__setattr__(self, "tau", complex(self.tau))

    def check_band(self, grid):
        """Warn when ``|tau| k_Nyquist > 1``, where the linear model breaks."""
        kn = np.pi / grid.dx
        if abs(self.tau) * kn > 1:
            warnings.warn(ValidityWarning(
                f"|tau| k_Nyquist = {abs(self.tau) * kn:.3g} > 1; linear transfer "
                "model is poor near the band edge", tau=self.tau, k_nyquist=kn),
                stacklevel=3)
            return False
        return True


def row_derivative(values, grid):
    """Spectral d/dx applied to each row independently."""
    kx = grid.kx()
    return np.fft.ifft(1j * kx * np.fft.fft(values, axis=1), axis=1).real


def _row_phase_derivative(phase, grid):
    u = np.exp(1j * phase)
    ux = np.fft.ifft(1j * grid.kx() * np.fft.fft(u, axis=1), axis=1)
    return (np.conj(u) * ux).imag


def gaussian_psf(values, grid, width):
    """Periodic convolution with a unit-sum Gaussian of standard deviation ``width``."""
    if width < 0:
        raise XpciError("psf width must be >= 0")
    if width == 0:
        return values
    return np.fft.ifft2(np.fft.fft2(values) * np.exp(-0.5 * width ** 2 * grid.k2())).real


def _log_derivative(i_in):
    if np.any(i_in.values <= 0):
        raise XpciError("input intensity must be strictly positive")
    return row_derivative(np.log(i_in.values), i_in.grid)


def _ideal_ratio(tau, p, ell):
    a2 = abs(tau) ** 2
    return 1 + 2 * tau.real * p + tau.imag * ell + a2 * p * p + 0.25 * a2 * ell * ell


def gradient_forward(i_in, phase, state, psf_width=0.0):
    """Output intensity of a linear-in-``kx`` system, then detector smearing.

    Evaluates ``I_out / I_in = 1 + 2Re(tau) P + Im(tau) L + |tau|^2 P^2 +
    |tau|^2 L^2 / 4`` with ``P = d(phase)/dx`` and ``L = d(ln I_in)/dx``
    taken row by row, multiplies by ``I_in`` and convolves with a Gaussian
    PSF of standard deviation ``psf_width``.
    """
    check_same_grid(i_in, phase, "intensity and phase")
    state.check_band(i_in.grid)
    g = i_in.grid
    ell = _log_derivative(i_in)
    p = _row_phase_derivative(phase.values, g)
    out = i_in.values * _ideal_ratio(state.tau, p, ell)
    return RealField(g, gaussian_psf(out, g, psf_width))


def smeared_forward(i_in, dphi1_dx, theta_sq, state, wavelength):
    """PSF-averaged output intensity in terms of resolved and unresolved phase.

    ``I_out / I_in = 1 + 2Re(tau) P1 + Im(tau) L + |tau|^2 L^2 / 4 +
    |tau|^2 (P1^2 + k^2 theta^2)``, where ``P1`` is the resolved phase
    gradient and ``theta^2`` the variance of the unresolved deflections.
    The ``P1^2`` term is kept so the model stays exact for strong resolved
    gradients.
    """
    g = i_in.grid
    p1 = _arr(g, dphi1_dx)
    th2 = _arr(g, theta_sq)
    if np.any(th2 < 0):
        raise XpciError("theta^2 must be >= 0")
    k = 2 * np.pi / wavelength
    ell = _log_derivative(i_in)
    a2 = abs(state.tau) ** 2
    ratio = _ideal_ratio(state.tau, p1, ell) + a2 * k * k * th2
    return RealField(g, i_in.values * ratio)


def _arr(grid, v):
    if isinstance(v, RealField):
        return v.values
    return np.broadcast_to(np.asarray(v, dtype=float), grid.shape)


def darkfield_solve(measurements, states, wavelength, full_output=False, rcond=1e-12):
    """Separate resolved phase gradient and dark-field from two states.

    ``measurements`` is ``((I_in_A, I_out_A), (I_in_B, I_out_B))``.  Per
    pixel the model of :func:`smeared_forward` is linear in ``X = P1`` and
    ``Y = P1^2 + k^2 theta^2``; after moving the known ``Im(tau) L`` and
    ``|tau|^2 L^2 / 4`` terms to the left the 2x2 system is solved in closed
    form.  Returns ``(dphi1_dx, theta_sq)`` with ``theta_sq`` clamped at 0.
    """
    if len(measurements) != 2 or len(states) != 2:
        raise XpciError("darkfield_solve needs exactly two states")
    ta, tb = states[0].tau, states[1].tau
    if ta == tb:
        raise XpciError("states A and B have identical tau; system is degenerate")
    if not wavelength > 0:
        raise XpciError("wavelength must be positive")
    rows = []
    rhs = []
    for (i_in, i_out), st in zip(measurements, states):
        check_same_grid(i_in, i_out, "input and output images")
        check_same_grid(measurements[0][0], i_in, "measurements")
        ell = _log_derivative(i_in)
        a2 = abs(st.tau) ** 2
        rows.append((2 * st.tau.real, a2))
        rhs.append(i_out.values / i_in.values - 1 - st.tau.imag * ell - 0.25 * a2 * ell * ell)
    (a11, a12), (a21, a22) = rows
    det = a11 * a22 - a12 * a21
    if abs(det) <= rcond * max(abs(a11 * a22), abs(a12 * a21), 1e-300):
        raise XpciError(f"coefficient matrix singular for tau_A={ta}, tau_B={tb}")
    x = (a22 * rhs[0] - a12 * rhs[1]) / det
    y = (a11 * rhs[1] - a21 * rhs[0]) / det
    k = 2 * np.pi / wavelength
    theta_sq = (y - x * x) / (k * k)
    neg = theta_sq < 0
    n = int(np.count_nonzero(neg))
    theta_sq = np.where(neg, 0.0, theta_sq)
    g = measurements[0][0].grid
    out = (RealField(g, x), RealField(g, theta_sq))
    if full_output:
        return out + ({"negative_theta_sq": n, "determinant": det},)
    return out
