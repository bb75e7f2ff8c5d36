import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modelock.cavity import (BlowUpError, CavityConfig, ControlState, FiberParams, FieldPair,
                             GainParams, apply_cavity_elements, cavity_jones, field_energy,
                             jones_matrix, make_grid, propagate_fiber, round_trip, sech_pulse,
                             settle)

GRID = make_grid(256, 40.0)
LOSSLESS = GainParams(g0=0.0, Gamma=0.0)
angles = st.floats(-720, 720, allow_nan=False)


def lossless(D=1.0, K=0.0, A=2 / 3, B=1 / 3, kerr=1.0, n_z_steps=200, grid=GRID):
    return CavityConfig(fiber=FiberParams(D=D, K=K, A=A, B=B, kerr=kerr), gain=LOSSLESS,
                        grid=grid, n_z_steps=n_z_steps)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_fields(rng, grid=GRID, amp=1.0):
    # smooth random envelopes: a few low-order Fourier modes under a Gaussian window
    env = np.exp(-grid.t**2 / 20)
    def one():
        c = rng.normal(size=6) + 1j * rng.normal(size=6)
        return amp * env * sum(ck * np.exp(1j * k * 0.3 * grid.t) for k, ck in enumerate(c)) / 3
    return FieldPair(one(), one(), grid)


# ---------------------------------------------------------------- grid & fields

def test_grid_examples():
    g = make_grid(16, 16.0)
    assert g.dt == 1.0
    assert np.max(np.abs(g.omega)) == pytest.approx(np.pi)
    assert make_grid(256, 40.0).dt == 0.15625
    with pytest.raises(ValueError, match="n must be a power of two"):
        make_grid(17, 40.0)
    with pytest.raises(ValueError):
        make_grid(8, 40.0)
    with pytest.raises(ValueError):
        make_grid(64, 0.0)


def test_grid_frequencies_pair_up():
    w = GRID.omega
    assert np.allclose(np.sort(w[1:GRID.n // 2]), np.sort(-w[GRID.n // 2 + 1:]))
    assert GRID.t[GRID.n // 2] == 0.0


def test_sech_pulse_and_energy():
    f = sech_pulse(GRID, 1.0, 0.0)
    assert f.u[GRID.n // 2] == 1.0
    assert np.all(f.v == 0)
    assert field_energy(f) == pytest.approx(2.0, abs=1e-8)
    assert field_energy(sech_pulse(GRID, 1.0, 1.0)) == pytest.approx(4.0, abs=1e-8)
    assert field_energy(sech_pulse(GRID, 0.0, 0.0)) == 0.0


def test_fieldpair_rejects_wrong_length():
    with pytest.raises(ValueError):
        FieldPair(np.zeros(10, complex), np.zeros(256, complex), GRID)


# ---------------------------------------------------------------- fiber propagation

def test_linear_gaussian_broadening():
    cfg = lossless(D=1.0, kerr=0.0)
    T0 = 1.0
    u0 = np.exp(-GRID.t**2 / (2 * T0**2)).astype(complex)
    out = propagate_fiber(FieldPair(u0, np.zeros_like(u0), GRID), cfg)
    q = T0**2 + 1j * cfg.fiber.D * cfg.z_length
    exact = T0 / np.sqrt(q) * np.exp(-GRID.t**2 / (2 * q))
    assert rel_l2(np.abs(out.u), np.abs(exact)) < 1e-6
    assert np.all(out.v == 0)


def test_fundamental_soliton():
    cfg = lossless(D=1.0)
    f = sech_pulse(GRID, 1.0, 0.0)
    propagate_fiber(f, cfg)  # compile outside the timed region
    t0 = time.perf_counter()
    out = propagate_fiber(f, cfg)
    elapsed = time.perf_counter() - t0
    assert rel_l2(np.abs(out.u), np.abs(f.u)) < 1e-4
    # phase advances by z/2 at the pulse center
    assert np.angle(out.u[GRID.n // 2]) == pytest.approx(0.5, abs=1e-3)
    assert elapsed < 1.0


def _soliton_error(n_z):
    cfg = lossless(D=1.0, n_z_steps=n_z)
    out = propagate_fiber(sech_pulse(GRID, 1.0, 0.0), cfg)
    exact = np.exp(0.5j) / np.cosh(GRID.t)
    return rel_l2(out.u, exact)


def test_second_order_convergence():
    errs = [_soliton_error(n) for n in (5, 10, 20, 40, 80)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.5 <= r <= 4.5 for r in ratios), ratios


@pytest.mark.parametrize("A,B", [(2 / 3, 1 / 3), (0.5, 0.2), (1.0, 0.7)])
def test_lossless_energy_conservation(A, B):
    rng = np.random.default_rng(7)
    f = random_fields(rng)
    cfg = lossless(D=0.4, K=0.3, A=A, B=B)
    E0 = field_energy(f)
    out = propagate_fiber(f, cfg)
    assert abs(field_energy(out) - E0) / E0 < 1e-6


def test_birefringence_is_a_pure_phase():
    rng = np.random.default_rng(1)
    f = random_fields(rng)
    cfg = lossless(D=0.0, K=0.1, kerr=0.0)
    out = propagate_fiber(f, cfg)
    z = cfg.z_length
    assert np.allclose(out.u, f.u * np.exp(-1j * 0.1 * z), rtol=0, atol=1e-12)
    assert np.allclose(out.v, f.v * np.exp(1j * 0.1 * z), rtol=0, atol=1e-12)
    assert np.max(np.abs(np.abs(out.u) - np.abs(f.u))) < 1e-12


def test_cw_fixed_point_of_saturable_gain():
    g = GainParams(g0=1.73, e0=1.0, tau=0.0, Gamma=0.1)
    cfg = CavityConfig(gain=g, grid=GRID, n_z_steps=50)
    E = g.e0 * (2 * g.g0 / g.Gamma - 1)
    u = np.full(GRID.n, np.sqrt(E / GRID.window), dtype=complex)
    out = propagate_fiber(FieldPair(u, np.zeros_like(u), GRID), cfg)
    assert abs(field_energy(out) - E) / E < 1e-6


def test_zero_field_is_fixed():
    z = sech_pulse(GRID, 0.0, 0.0)
    out = settle(z, ControlState(10, 20, 30, 40), CavityConfig(n_z_steps=20), 5)
    assert np.all(out.u == 0) and np.all(out.v == 0)


def test_blowup_is_reported():
    cfg = lossless(A=0.5, B=0.2, n_z_steps=1)  # general A, B: integrated numerically
    huge = sech_pulse(GRID, 1e60, 1e60)
    with pytest.raises(BlowUpError, match="round trip 0"):
        with np.errstate(all="ignore"):
            propagate_fiber(huge, cfg)


def test_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        propagate_fiber(sech_pulse(make_grid(64, 20.0)), CavityConfig())


# ---------------------------------------------------------------- Jones optics

def test_jones_examples():
    q = np.exp(1j * np.pi / 4)
    assert np.allclose(jones_matrix("quarter", 0), np.diag([q.conjugate(), q]), atol=1e-15)
    assert np.allclose(jones_matrix("quarter", 90), np.diag([q, q.conjugate()]), atol=1e-15)
    assert np.allclose(jones_matrix("half", 0), np.diag([-1j, 1j]))
    P = jones_matrix("polarizer", 0)
    assert np.allclose(P @ np.array([0.3 + 1j, -2.0]), [0.3 + 1j, 0.0])
    with pytest.raises(ValueError):
        jones_matrix("mirror", 0)


def test_all_zero_angles_pass_u_and_block_v():
    f = sech_pulse(GRID, 1.0, 0.7)
    out = apply_cavity_elements(f, ControlState(0, 0, 0, 0))
    assert np.allclose(np.abs(out.u), np.abs(f.u), atol=1e-15)
    assert np.allclose(out.v, 0, atol=1e-15)


def test_crossed_polarizer_blocks_u():
    # explicit product: qwp1(0) @ P(90) @ hwp(0) @ qwp2(0)
    expected = (jones_matrix("quarter", 0) @ jones_matrix("polarizer", 90)
                @ jones_matrix("half", 0) @ jones_matrix("quarter", 0))
    J = cavity_jones(ControlState(0, 0, 0, 90))
    assert np.allclose(J, expected)
    out = apply_cavity_elements(sech_pulse(GRID, 1.0, 1.0), ControlState(0, 0, 0, 90))
    assert np.allclose(out.u, 0, atol=1e-15)


def test_element_order_is_configurable():
    ctrl = ControlState(10, 20, 30, 40)
    J = cavity_jones(ctrl, ("qwp1", "polarizer"))
    assert np.allclose(J, jones_matrix("polarizer", 40) @ jones_matrix("quarter", 10))


@settings(max_examples=200, deadline=None)
@given(angles, angles, angles, angles)
def test_waveplates_are_unitary(a1, a2, a3, ap):
    J = cavity_jones(ControlState(a1, a2, a3, ap), include_polarizer=False)
    assert np.allclose(J.conj().T @ J, np.eye(2), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(angles, angles, angles, angles, st.integers(0, 2**32 - 1))
def test_full_pass_never_adds_energy(a1, a2, a3, ap, seed):
    f = random_fields(np.random.default_rng(seed))
    out = apply_cavity_elements(f, ControlState(a1, a2, a3, ap))
    assert field_energy(out) <= field_energy(f) * (1 + 1e-12)


def test_energy_bound_bulk_random_cases():
    rng = np.random.default_rng(3)
    a = rng.uniform(-360, 360, size=(10_000, 4))
    x = rng.normal(size=(10_000, 2)) + 1j * rng.normal(size=(10_000, 2))
    for ang, vec in zip(a, x):
        J = cavity_jones(ControlState(*ang))
        Jw = cavity_jones(ControlState(*ang), include_polarizer=False)
        e0 = np.vdot(vec, vec).real
        assert np.vdot(J @ vec, J @ vec).real <= e0 * (1 + 1e-12)
        assert abs(np.vdot(Jw @ vec, Jw @ vec).real - e0) <= 1e-12 * e0


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["quarter", "half", "polarizer"]), angles)
def test_angles_wrap_modulo_360(kind, a):
    assert np.allclose(jones_matrix(kind, a), jones_matrix(kind, a + 360.0), atol=1e-12)


def test_control_state_rejects_non_finite():
    with pytest.raises(ValueError):
        ControlState(np.nan, 0, 0, 0)
    c = ControlState(1, 2, 3, 4)
    assert ControlState.from_array(c.as_array()) == c
    assert c.with_angles(alpha3=-400.0).alpha3 == -400.0


# ---------------------------------------------------------------- round trips

CAV = CavityConfig(n_z_steps=20)
CTRL = ControlState(-25.0, 19.1, -12.6, -55.6)


def test_round_trip_equals_settle_one():
    f = sech_pulse(GRID, 1.0, 1.0)
    a, b = round_trip(f, CTRL, CAV), settle(f, CTRL, CAV, 1)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_round_trip_is_fiber_then_elements():
    f = sech_pulse(GRID, 1.0, 0.5)
    manual = apply_cavity_elements(propagate_fiber(f, CAV), CTRL)
    auto = round_trip(f, CTRL, CAV)
    assert np.allclose(auto.u, manual.u, atol=1e-13) and np.allclose(auto.v, manual.v, atol=1e-13)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_settle_composes_bit_for_bit(n, m):
    f = sech_pulse(GRID, 1.0, 1.0)
    a = settle(settle(f, CTRL, CAV, n), CTRL, CAV, m)
    b = settle(f, CTRL, CAV, n + m)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_settle_shapes_and_validation():
    out = settle(sech_pulse(GRID), CTRL, CAV, 3)
    assert out.u.shape == (256,) and out.grid == GRID
    assert np.all(np.isfinite(out.stack()))
    with pytest.raises(ValueError):
        settle(sech_pulse(GRID), CTRL, CAV, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        CavityConfig(n_z_steps=0)
    with pytest.raises(ValueError):
        CavityConfig(element_order=("qwp1", "lens"))
    with pytest.raises(ValueError):
        GainParams(e0=0.0)
    with pytest.raises(ValueError):
        FiberParams(K=np.inf)
    assert CavityConfig().with_birefringence(0.3).fiber.K == 0.3
