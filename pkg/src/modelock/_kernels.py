"""Compiled inner loops for the cavity propagator.

``rocket_fft`` registers ``numpy.fft`` with numba, so the split-step loop runs
entirely in nopython mode. All kernels are pure: inputs are never modified.
"""
import numpy as np
import numba as nb
import rocket_fft  # noqa: F401  (registers np.fft for numba)

_S = np.sqrt(0.5)


@nb.njit(cache=True, nogil=True)
def _nonlinear_rhs(u, v, A, B, kerr, out_u, out_v):
    for j in range(u.shape[0]):
        uj = u[j]
        vj = v[j]
        au = uj.real * uj.real + uj.imag * uj.imag
        av = vj.real * vj.real + vj.imag * vj.imag
        out_u[j] = 1j * kerr * ((au + A * av) * uj + B * vj * vj * np.conj(uj))
        out_v[j] = 1j * kerr * ((A * au + av) * vj + B * uj * uj * np.conj(vj))


@nb.njit(cache=True, nogil=True)
def _nonlinear_step(X, dz, A, B, kerr, exact):
    """Advance the pointwise nonlinear part of the CNLS by dz, in place."""
    n = X.shape[1]
    if exact:
        # A + B == 1: in the circular basis the nonlinearity is a pure phase.
        c1 = kerr * (1.0 + A - B) / 2.0
        c2 = kerr * (1.0 + B)
        for j in range(n):
            u = X[0, j]
            v = X[1, j]
            p = (u + 1j * v) * _S
            m = (u - 1j * v) * _S
            ap = p.real * p.real + p.imag * p.imag
            am = m.real * m.real + m.imag * m.imag
            p = p * np.exp(1j * dz * (c1 * ap + c2 * am))
            m = m * np.exp(1j * dz * (c1 * am + c2 * ap))
            X[0, j] = (p + m) * _S
            X[1, j] = -1j * (p - m) * _S
        return
    u0 = X[0].copy()
    v0 = X[1].copy()
    k1u = np.empty(n, np.complex128)
    k1v = np.empty(n, np.complex128)
    k2u = np.empty(n, np.complex128)
    k2v = np.empty(n, np.complex128)
    k3u = np.empty(n, np.complex128)
    k3v = np.empty(n, np.complex128)
    k4u = np.empty(n, np.complex128)
    k4v = np.empty(n, np.complex128)
    _nonlinear_rhs(u0, v0, A, B, kerr, k1u, k1v)
    _nonlinear_rhs(u0 + 0.5 * dz * k1u, v0 + 0.5 * dz * k1v, A, B, kerr, k2u, k2v)
    _nonlinear_rhs(u0 + 0.5 * dz * k2u, v0 + 0.5 * dz * k2v, A, B, kerr, k3u, k3v)
    _nonlinear_rhs(u0 + dz * k3u, v0 + dz * k3v, A, B, kerr, k4u, k4v)
    for j in range(n):
        X[0, j] = u0[j] + dz / 6.0 * (k1u[j] + 2 * k2u[j] + 2 * k3u[j] + k4u[j])
        X[1, j] = v0[j] + dz / 6.0 * (k1v[j] + 2 * k2v[j] + 2 * k3v[j] + k4v[j])


@nb.njit(cache=True, nogil=True)
def _linear_half_step(Uh, phase_u, phase_v, gain_shape, loss, dt, e0):
    """Half-step of dispersion, birefringence and saturable gain.

    Returns the energy that the gain was saturated with (NaN/Inf flags blow-up).
    """
    n = Uh.shape[1]
    energy = 0.0
    for i in range(2):
        for j in range(n):
            energy += Uh[i, j].real * Uh[i, j].real + Uh[i, j].imag * Uh[i, j].imag
    energy *= dt / n
    if not np.isfinite(energy):
        return energy
    sat = 1.0 / (1.0 + energy / e0)
    for j in range(n):
        g = np.exp(gain_shape[j] * sat - loss)
        Uh[0, j] *= phase_u[j] * g
        Uh[1, j] *= phase_v[j] * g
    return energy


@nb.njit(cache=True, nogil=True)
def cavity_kernel(U, omega, dt, D, K, A, B, kerr, g0, e0, tau, gamma,
                  z_length, n_steps, jones, apply_jones, n_trips):
    """Run ``n_trips`` round trips of fiber propagation (+ optional Jones matrix).

    Returns ``(fields, failed_trip, failed_step)``; ``failed_trip == -1`` on
    success, otherwise the trip/step where a non-finite value appeared.
    """
    n = U.shape[1]
    dz = z_length / n_steps
    half = 0.5 * dz
    phase_u = np.empty(n, np.complex128)
    phase_v = np.empty(n, np.complex128)
    gain_shape = np.empty(n, np.float64)
    for j in range(n):
        w2 = omega[j] * omega[j]
        phase_u[j] = np.exp(-1j * (0.5 * D * w2 + K) * half)
        phase_v[j] = np.exp(-1j * (0.5 * D * w2 - K) * half)
        gain_shape[j] = 2.0 * g0 * (1.0 - tau * w2) * half
    loss = gamma * half
    exact = abs(1.0 - A - B) < 1e-12
    X = U.copy()
    for trip in range(n_trips):
        Uh = np.fft.fft(X)
        for step in range(n_steps):
            e = _linear_half_step(Uh, phase_u, phase_v, gain_shape, loss, dt, e0)
            if not np.isfinite(e):
                return X, trip, step
            X = np.fft.ifft(Uh)
            _nonlinear_step(X, dz, A, B, kerr, exact)
            Uh = np.fft.fft(X)
            e = _linear_half_step(Uh, phase_u, phase_v, gain_shape, loss, dt, e0)
            if not np.isfinite(e):
                return X, trip, step
        X = np.fft.ifft(Uh)
        if apply_jones:
            for j in range(n):
                u = X[0, j]
                v = X[1, j]
                X[0, j] = jones[0, 0] * u + jones[0, 1] * v
                X[1, j] = jones[1, 0] * u + jones[1, 1] * v
        for j in range(n):
            if not (np.isfinite(X[0, j].real) and np.isfinite(X[0, j].imag)
                    and np.isfinite(X[1, j].real) and np.isfinite(X[1, j].imag)):
                return X, trip, n_steps
    return X, -1, -1
