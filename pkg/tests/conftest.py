import math
import warnings

import numpy as np
import pytest
from hypothesis import settings

from xpci import ComplexField, Grid2D

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def random_field(rng, grid, wavelength=1e-10):
    v = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    return ComplexField(grid, v, wavelength)


def gaussian_beam(grid, sigma, distance, wavelength):
    """Closed-form paraxial solution for the unit Gaussian exp(-r^2 / 2 sigma^2).

    Solving 2ik dpsi/dz + lap psi = 0 with the ansatz
    A(z) exp(-r^2 / (2 q(z))) gives q = sigma^2 + i z / k and
    A = sigma^2 / q; the carrier exp(ikz) is restored on top.  k*z is
    ~1e10 rad, so the carrier is reduced with an exact fmod first.
    """
    k = 2 * np.pi / wavelength
    q = sigma ** 2 + 1j * distance / k
    carrier = np.exp(2j * np.pi * math.fmod(distance, wavelength) / wavelength)
    return carrier * sigma ** 2 / q * np.exp(-grid.r2() / (2 * q))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid64():
    return Grid2D(64, 64, 1e-6)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


# Acceptance results keyed by criterion number: (title, passed, detail).
ACCEPTANCE = {}


def record(number, title, checks):
    """Store and print one PASS/FAIL line; ``checks`` maps a label to (value, ok)."""
    ok = all(v[1] for v in checks.values())
    detail = ", ".join(f"{k}={v[0]:.3g}" if isinstance(v[0], float) else f"{k}={v[0]}"
                       for k, v in checks.items())
    ACCEPTANCE[number] = (title, ok, detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
