import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xpci import (AUTO, ClampWarning, ComplexField, Grid2D, LinearTFState, PropagationPlan,
                  RealField, SingularFilterError, TransferFunction, ValidityWarning, XpciError,
                  apply_lsi, ctf_retrieve, darkfield_solve, free_space_transfer,
                  fresnel_propagate, gradient_forward, invert_lsi_single, paganin_thickness,
                  schiske_combine, smeared_forward, sphere_phantom, transmission_function,
                  weak_phase_image)
from xpci.retrieval import gaussian_psf, row_derivative

from conftest import random_field, rel_err

WL = 1e-10
G = Grid2D(32, 32, 1e-6)


def zero_free_tf(rng, grid=G):
    v = rng.uniform(0.3, 1.0, grid.shape) * np.exp(1j * rng.uniform(-np.pi, np.pi, grid.shape))
    return TransferFunction(grid, v)


def test_invert_identity(rng):
    f = random_field(rng, G)
    out = invert_lsi_single(f, TransferFunction.identity(G), reg=0)
    assert rel_err(out.values, f.values) < 1e-14


def test_invert_round_trip(rng):
    f = random_field(rng, G)
    tf = zero_free_tf(rng)
    back = invert_lsi_single(apply_lsi(f, tf), tf, reg=0)
    assert rel_err(back.values, f.values) < 1e-10


def test_invert_large_reg_damps(rng):
    f = random_field(rng, G)
    out = invert_lsi_single(f, zero_free_tf(rng), reg=1e12)
    assert np.linalg.norm(out.values) < 1e-11 * np.linalg.norm(f.values)


def test_invert_zero_reports_frequency(rng):
    v = np.ones(G.shape, complex)
    v[3, 5] = 0
    with pytest.raises(SingularFilterError) as exc:
        invert_lsi_single(random_field(rng, G), TransferFunction(G, v), reg=0)
    assert exc.value.index == (3, 5)
    invert_lsi_single(random_field(rng, G), TransferFunction(G, v))  # AUTO is safe


def test_regularizer_validation(rng):
    f = random_field(rng, G)
    for bad in (-1.0, np.nan, "big"):
        with pytest.raises(XpciError):
            invert_lsi_single(f, TransferFunction.identity(G), reg=bad)


def test_auto_regularizer_value(rng):
    f = random_field(rng, G)
    tf = zero_free_tf(rng)
    reg = 1e-4 * np.max(np.abs(tf.values) ** 2)
    a = invert_lsi_single(f, tf, AUTO).values
    b = invert_lsi_single(f, tf, reg).values
    assert np.array_equal(a, b)


def test_schiske_single_state_reduces(rng):
    f = random_field(rng, G)
    tf = zero_free_tf(rng)
    out = apply_lsi(f, tf)
    a = schiske_combine([out], [tf], reg=0).values
    b = invert_lsi_single(out, tf, reg=0).values
    assert rel_err(a, b) < 1e-14


def test_schiske_identical_states(rng):
    # sum T*/(N|T|^2 + reg) applied to N copies equals T*/(|T|^2 + reg/N).
    f = random_field(rng, G)
    tf = zero_free_tf(rng)
    out = apply_lsi(f, tf)
    a = schiske_combine([out] * 3, [tf] * 3, reg=0.3).values
    b = invert_lsi_single(out, tf, reg=0.1).values
    assert rel_err(a, b) < 1e-13


def test_schiske_rejects_bad_inputs(rng):
    f = random_field(rng, G)
    with pytest.raises(XpciError):
        schiske_combine([], [], reg=0)
    with pytest.raises(XpciError):
        schiske_combine([f, f], [TransferFunction.identity(G)], reg=0)
    z = np.ones(G.shape, complex)
    z[0, 1] = 0
    with pytest.raises(SingularFilterError):
        schiske_combine([f, f], [TransferFunction(G, z)] * 2, reg=0)


@given(st.integers(0, 2 ** 31), st.permutations(range(3)))
def test_schiske_permutation_invariant(seed, perm):
    rng = np.random.default_rng(seed)
    tfs = [zero_free_tf(rng) for _ in range(3)]
    outs = [random_field(rng, G) for _ in range(3)]
    a = schiske_combine(outs, tfs, reg=1e-3).values
    b = schiske_combine([outs[i] for i in perm], [tfs[i] for i in perm], reg=1e-3).values
    assert rel_err(b, a) < 1e-13


def weak_phase(rng, grid, peak):
    spec = np.fft.fft2(rng.normal(size=grid.shape)) * np.exp(-grid.k2() * (4 * grid.dx) ** 2)
    phi = np.fft.ifft2(spec).real
    return phi * peak / np.max(np.abs(phi))


def test_ctf_featureless_data():
    tfs = [free_space_transfer(G, WL, d) for d in (0.05, 0.1)]
    imgs = [RealField(G, np.ones(G.shape))] * 2
    assert np.allclose(ctf_retrieve(imgs, tfs).values, 0, atol=1e-15)


def test_ctf_linear_in_data(rng):
    g = Grid2D(64, 64, 1e-6)
    tfs = [free_space_transfer(g, WL, d) for d in (0.05, 0.1, 0.2)]
    phi = RealField(g, weak_phase(rng, g, 0.01))
    imgs = [weak_phase_image(phi, t) for t in tfs]
    imgs2 = [weak_phase_image(RealField(g, 2 * phi.values), t) for t in tfs]
    a = ctf_retrieve(imgs, tfs).values
    b = ctf_retrieve(imgs2, tfs).values
    assert rel_err(b, 2 * a) < 1e-10
    other = [weak_phase_image(RealField(g, weak_phase(rng, g, 0.01)), t) for t in tfs]
    summed = [RealField(g, x.values + y.values - 1) for x, y in zip(imgs, other)]
    c = ctf_retrieve(summed, tfs).values
    assert rel_err(c, a + ctf_retrieve(other, tfs).values) < 1e-10


def test_ctf_rejects(rng):
    z = np.ones(G.shape, complex)
    z[0, 0] = 0
    img = RealField(G, np.ones(G.shape))
    with pytest.raises(XpciError):
        ctf_retrieve([img], [TransferFunction(G, z)])
    with pytest.raises(XpciError):
        ctf_retrieve([RealField(G, -np.ones(G.shape))], [TransferFunction.identity(G)])
    with pytest.raises(SingularFilterError):
        ctf_retrieve([img], [TransferFunction.identity(G)], reg=0)


def test_paganin_trivial_cases(rng):
    g = Grid2D(64, 64, 1e-6)
    flat = RealField(g, np.full(g.shape, 3.0))
    assert np.allclose(paganin_thickness(flat, 3.0, 1e-6, 100.0, 0.3).values, 0, atol=1e-15)
    img = RealField(g, rng.uniform(0.2, 1.0, g.shape))
    t = paganin_thickness(img, 1.0, 0.0, 125.0, 0.3).values
    assert np.allclose(t, -np.log(img.values) / 125.0, rtol=1e-12)


@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_paganin_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    g = Grid2D(32, 32, 1e-6)
    img = RealField(g, rng.uniform(0.2, 1.0, g.shape))
    a = paganin_thickness(img, 1.0, 1e-6, 200.0, 0.2).values
    b = paganin_thickness(RealField(g, c * img.values), c, 1e-6, 200.0, 0.2).values
    assert np.allclose(a, b, rtol=1e-9, atol=1e-15)


def test_paganin_round_trip_smooth_object():
    wl = 0.5e-10
    g = Grid2D(512, 512, 1e-6)
    k = 2 * np.pi / wl
    delta, beta = 1e-6, 1e-9
    t_true = 100e-6 * np.exp(-g.r2() / (2 * (30e-6) ** 2)) * np.ones(g.shape)
    psi = ComplexField(g, np.exp(-k * beta * t_true - 1j * k * delta * t_true), wl)
    img = np.abs(fresnel_propagate(psi, PropagationPlan(0.3, 1)).values) ** 2
    t = paganin_thickness(RealField(g, img), 1.0, delta, 2 * k * beta, 0.3).values
    assert np.sqrt(np.mean((t - t_true) ** 2)) < 0.01 * np.sqrt(np.mean(t_true ** 2))


def test_paganin_errors_and_clamp_report():
    g = Grid2D(32, 32, 1e-6)
    img = RealField(g, np.ones(g.shape))
    for kwargs in (dict(mu=0.0), dict(mu=-1.0)):
        with pytest.raises(XpciError):
            paganin_thickness(img, 1.0, 1e-6, kwargs["mu"], 0.1)
    with pytest.raises(XpciError):
        paganin_thickness(img, 0.0, 1e-6, 1.0, 0.1)
    with pytest.raises(XpciError):
        paganin_thickness(RealField(g, -img.values), 1.0, 1e-6, 1.0, 0.1)
    v = np.ones(g.shape)
    v[:, :8] = 0.0
    with pytest.warns(ClampWarning):
        _, info = paganin_thickness(RealField(g, v), 1.0, 0.0, 1.0, 0.1, full_output=True)
    assert info["clamped"] == 8 * 32 and info["total"] == 1024
    _, info = paganin_thickness(img, 1.0, 1e-6, 1.0, 0.1, full_output=True)
    assert info["clamped"] == 0


# gradient-method forward model and dark-field separation

G1 = Grid2D(256, 16, 1e-6)


def smooth_row_phase(grid, amp=5.0):
    x, _ = grid.coords()
    lx = grid.extent[0]
    return amp * (np.sin(2 * np.pi * x / lx) + 0.3 * np.cos(4 * np.pi * x / lx + 1)) * np.ones(grid.shape)


def smooth_row_intensity(grid):
    x, y = grid.coords()
    lx, ly = grid.extent
    return 1 + 0.2 * np.cos(2 * np.pi * (x / lx + y / ly)) * np.ones(grid.shape)


def test_gradient_forward_trivial():
    i = RealField(G1, np.full(G1.shape, 2.0))
    out = gradient_forward(i, RealField(G1, np.zeros(G1.shape)), LinearTFState(1e-7 + 2e-8j))
    assert np.allclose(out.values, 2.0, rtol=1e-14)


def test_gradient_forward_constant_gradient():
    kappa = G1.kx()[7]
    x, _ = G1.coords()
    tau = 1e-7
    out = gradient_forward(RealField(G1, np.ones(G1.shape)),
                           RealField(G1, kappa * x * np.ones(G1.shape)), LinearTFState(tau))
    assert np.allclose(out.values, 1 + 2 * tau * kappa + tau ** 2 * kappa ** 2, rtol=1e-10)


def test_gradient_forward_rejects_and_warns():
    z = np.ones(G1.shape)
    z[0, 0] = 0
    with pytest.raises(XpciError):
        gradient_forward(RealField(G1, z), RealField(G1, np.zeros(G1.shape)), LinearTFState(1e-7))
    with pytest.warns(ValidityWarning):
        gradient_forward(RealField(G1, np.ones(G1.shape)), RealField(G1, np.zeros(G1.shape)),
                         LinearTFState(1e-6))


def test_row_derivative_matches_analytic():
    x, _ = G1.coords()
    lx = G1.extent[0]
    v = np.sin(2 * np.pi * 3 * x / lx) * np.ones(G1.shape)
    ref = 2 * np.pi * 3 / lx * np.cos(2 * np.pi * 3 * x / lx) * np.ones(G1.shape)
    assert np.allclose(row_derivative(v, G1), ref, atol=1e-9 * np.max(np.abs(ref)))


def test_gaussian_psf_unit_sum():
    v = np.zeros(G1.shape)
    v[8, 100] = 1.0
    out = gaussian_psf(v, G1, 3e-6)
    assert out.sum() == pytest.approx(1.0, rel=1e-12)
    assert gaussian_psf(v, G1, 0.0) is v
    with pytest.raises(XpciError):
        gaussian_psf(v, G1, -1.0)


def test_smeared_ripple_matches_variance_model():
    # Resolved phase phi1 plus a ripple phi2 whose period (16 px) is far
    # below the PSF width; the ripple must stay well sampled.
    g = Grid2D(1024, 4, 1e-6)
    x, _ = g.coords()
    k = 2 * np.pi / WL
    tau = LinearTFState(2.5e-7)
    q = 2 * np.pi / 16e-6
    phi1 = smooth_row_phase(g)
    phi2 = 2.0 * np.sin(q * x) * np.ones(g.shape)
    i_in = RealField(g, np.ones(g.shape))
    out = gradient_forward(i_in, RealField(g, phi1 + phi2), tau, psf_width=20e-6).values
    p1 = row_derivative(phi1, g)
    var = np.var(row_derivative(phi2, g)[0])
    model = smeared_forward(i_in, RealField(g, p1), var / k ** 2, tau, WL).values
    err = np.max(np.abs(out - model) / model)
    assert err < 0.02
    # Dropping the dark-field term must do much worse, otherwise the check is vacuous.
    no_df = smeared_forward(i_in, RealField(g, p1), 0.0, tau, WL).values
    assert np.max(np.abs(out - no_df) / no_df) > 10 * err


def synthetic_pair(states, p1, theta_sq, i_a, i_b):
    return tuple((ii, smeared_forward(ii, p1, theta_sq, st, WL)) for ii, st in zip((i_a, i_b), states))


STATES = (LinearTFState(1e-7 + 3e-8j), LinearTFState(-5e-8 + 1e-8j))


def test_darkfield_recovers_gradient_without_scatter():
    i_a = RealField(G1, smooth_row_intensity(G1))
    i_b = RealField(G1, 0.8 * smooth_row_intensity(G1) ** 2)
    phi = RealField(G1, smooth_row_phase(G1))
    meas = tuple((ii, gradient_forward(ii, phi, st)) for ii, st in zip((i_a, i_b), STATES))
    dphi, th2, info = darkfield_solve(meas, STATES, WL, full_output=True)
    ref = row_derivative(phi.values, G1)
    assert rel_err(dphi.values, ref) < 1e-10
    k = 2 * np.pi / WL
    assert np.max(th2.values) < 1e-10 * np.max(ref ** 2) / k ** 2
    assert info["negative_theta_sq"] >= 0


def test_darkfield_recovers_theta_profile():
    k = 2 * np.pi / WL
    x, _ = G1.coords()
    p1 = RealField(G1, row_derivative(smooth_row_phase(G1), G1))
    theta_sq = RealField(G1, (np.max(np.abs(p1.values)) / k) ** 2
                         * (1 + 0.5 * np.cos(2 * np.pi * x / G1.extent[0])) * np.ones(G1.shape))
    i_a = RealField(G1, smooth_row_intensity(G1))
    i_b = RealField(G1, np.sqrt(smooth_row_intensity(G1)))
    meas = synthetic_pair(STATES, p1, theta_sq, i_a, i_b)
    dphi, th2 = darkfield_solve(meas, STATES, WL)
    assert rel_err(dphi.values, p1.values) < 1e-8
    assert rel_err(th2.values, theta_sq.values) < 1e-8


@pytest.mark.parametrize("states", [
    (LinearTFState(1e-7), LinearTFState(1e-7)),
    (LinearTFState(2e-8), LinearTFState(1e-8 + 1e-8j)),  # Re(tau)/|tau|^2 equal
    (LinearTFState(1e-8j), LinearTFState(3e-8j)),
])
def test_darkfield_singular_states_rejected(states):
    i = RealField(G1, np.ones(G1.shape))
    with pytest.raises(XpciError):
        darkfield_solve(((i, i), (i, i)), states, WL)


def test_darkfield_input_checks():
    i = RealField(G1, np.ones(G1.shape))
    with pytest.raises(XpciError):
        darkfield_solve(((i, i),), STATES[:1], WL)
    with pytest.raises(XpciError):
        darkfield_solve(((i, i), (i, i)), STATES, 0.0)
    with pytest.raises(XpciError):
        smeared_forward(i, 0.0, -1.0, STATES[0], WL)


def test_darkfield_clamps_negative_theta():
    i = RealField(G1, np.ones(G1.shape))
    p1 = RealField(G1, row_derivative(smooth_row_phase(G1), G1))
    meas = synthetic_pair(STATES, p1, 0.0, i, i)
    # Depress one output so the solve lands on negative theta^2 somewhere.
    meas = (meas[0], (meas[1][0], RealField(G1, meas[1][1].values * (1 - 1e-3))))
    _, th2, info = darkfield_solve(meas, STATES, WL, full_output=True)
    assert np.all(th2.values >= 0)
    assert info["negative_theta_sq"] > 0
