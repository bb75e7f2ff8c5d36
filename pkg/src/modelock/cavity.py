"""Polarization-resolved cavity model of a passively mode-locked fiber laser.

Each round trip propagates the two orthogonal field envelopes ``u`` (fast) and
``v`` (slow) through the fiber with a symmetric split-step Fourier scheme for
the coupled, dissipative nonlinear Schroedinger equations, then applies the
lumped waveplates and polarizer as a single 2x2 Jones matrix.

All quantities are dimensionless (distance in cavity lengths).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from modelock._kernels import cavity_kernel

ELEMENT_KINDS = ("quarter", "half", "polarizer")

# Element -> (Jones kind, angle field on ControlState)
ELEMENTS = {
    "qwp1": ("quarter", "alpha1"),
    "qwp2": ("quarter", "alpha2"),
    "hwp": ("half", "alpha3"),
    "polarizer": ("polarizer", "alpha_p"),
}
# Order in which the propagating field meets the elements after the fiber.
DEFAULT_ELEMENT_ORDER = ("qwp2", "hwp", "polarizer", "qwp1")

ANGLE_NAMES = ("alpha1", "alpha2", "alpha3", "alpha_p")


class BlowUpError(RuntimeError):
    """Raised when a propagation produces non-finite field samples."""

    def __init__(self, trip: int, z: float):
        self.trip = trip
        self.z = z
        super().__init__(
            f"field blew up (non-finite) in round trip {trip} at z = {z:.4g}; "
            "reduce the step size or check the physical parameters")


@dataclass(frozen=True)
class TimeGrid:
    """Periodic time grid with ``n`` points spanning ``window``."""

    n: int
    window: float

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not self.window > 0:
            raise ValueError(f"window must be positive, got {self.window}")

    @property
    def dt(self) -> float:
        return self.window / self.n

    @cached_property
    def t(self) -> np.ndarray:
        """Sample times, with ``t = 0`` at index ``n // 2``."""
        return (np.arange(self.n) - self.n // 2) * self.dt

    @cached_property
    def omega(self) -> np.ndarray:
        """Angular frequencies in numpy FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dt)


def make_grid(n: int = 256, window: float = 40.0) -> TimeGrid:
    if n < 16 or n & (n - 1):
        raise ValueError(f"n must be a power of two (>= 16), got {n}")
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    return TimeGrid(int(n), float(window))


@dataclass(frozen=True)
class FieldPair:
    """The two polarization envelopes on a shared grid."""

    u: np.ndarray
    v: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        if self.u.shape != (self.grid.n,) or self.v.shape != (self.grid.n,):
            raise ValueError(
                f"fields must have length {self.grid.n}, got {self.u.shape} and {self.v.shape}")

    @classmethod
    def from_array(cls, arr: np.ndarray, grid: TimeGrid) -> "FieldPair":
        return cls(np.array(arr[0], dtype=complex), np.array(arr[1], dtype=complex), grid)

    def stack(self) -> np.ndarray:
        return np.ascontiguousarray(np.stack([self.u, self.v]).astype(np.complex128))

    def scaled(self, c: complex) -> "FieldPair":
        return FieldPair(self.u * c, self.v * c, self.grid)


@dataclass(frozen=True)
class FiberParams:
    D: float = 0.4
    K: float = 0.1
    A: float = 2.0 / 3.0
    B: float = 1.0 / 3.0
    kerr: float = 1.0  # overall nonlinear coefficient; 0 turns the Kerr terms off

    def __post_init__(self):
        for name in ("D", "K", "A", "B", "kerr"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class GainParams:
    g0: float = 1.73
    e0: float = 1.0
    tau: float = 0.1
    Gamma: float = 0.1

    def __post_init__(self):
        if not self.e0 > 0:
            raise ValueError("e0 must be positive")
        if self.g0 < 0 or self.tau < 0 or self.Gamma < 0:
            raise ValueError("g0, tau and Gamma must be non-negative")


@dataclass(frozen=True)
class CavityConfig:
    fiber: FiberParams = field(default_factory=FiberParams)
    gain: GainParams = field(default_factory=GainParams)
    grid: TimeGrid = field(default_factory=make_grid)
    z_length: float = 1.0
    n_z_steps: int = 200
    element_order: tuple[str, ...] = DEFAULT_ELEMENT_ORDER

    def __post_init__(self):
        if self.n_z_steps < 1:
            raise ValueError("n_z_steps must be >= 1")
        if not self.z_length > 0:
            raise ValueError("z_length must be positive")
        unknown = set(self.element_order) - set(ELEMENTS)
        if unknown:
            raise ValueError(f"unknown cavity elements {sorted(unknown)}")

    def with_birefringence(self, K: float) -> "CavityConfig":
        return replace(self, fiber=replace(self.fiber, K=float(K)))


@dataclass(frozen=True)
class ControlState:
    """Waveplate and polarizer angles in degrees (not wrapped)."""

    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    alpha_p: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("control angles must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.alpha3, self.alpha_p], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "ControlState":
        return cls(*(float(x) for x in a))

    def get(self, name: str) -> float:
        return getattr(self, name)

    def with_angles(self, **angles: float) -> "ControlState":
        return replace(self, **{k: float(v) for k, v in angles.items()})


def sech_pulse(grid: TimeGrid, amp_u: float = 1.0, amp_v: float = 1.0) -> FieldPair:
    s = 1.0 / np.cosh(grid.t)
    return FieldPair(amp_u * s + 0j, amp_v * s + 0j, grid)


def field_energy(fields: FieldPair) -> float:
    return float(fields.grid.dt * (np.sum(np.abs(fields.u) ** 2) + np.sum(np.abs(fields.v) ** 2)))


def _rotation(alpha: float) -> np.ndarray:
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s], [s, c]])


_PLATES = {
    "quarter": np.diag([np.exp(-1j * np.pi / 4), np.exp(1j * np.pi / 4)]),
    "half": np.diag([-1j, 1j]),
    "polarizer": np.diag([1.0 + 0j, 0.0]),
}


def jones_matrix(kind: str, alpha_deg: float) -> np.ndarray:
    """Jones matrix of a waveplate/polarizer rotated by ``alpha_deg`` degrees."""
    if kind not in _PLATES:
        raise ValueError(f"unknown element kind {kind!r}; expected one of {ELEMENT_KINDS}")
    a = np.deg2rad(np.mod(alpha_deg, 360.0))
    return _rotation(a) @ _PLATES[kind] @ _rotation(-a)


def cavity_jones(ctrl: ControlState, order: Sequence[str] = DEFAULT_ELEMENT_ORDER,
                 include_polarizer: bool = True) -> np.ndarray:
    """Composite matrix of the lumped elements, applied in propagation ``order``."""
    J = np.eye(2, dtype=complex)
    for name in order:
        kind, angle = ELEMENTS[name]
        if kind == "polarizer" and not include_polarizer:
            continue
        J = jones_matrix(kind, ctrl.get(angle)) @ J
    return J


def apply_cavity_elements(fields: FieldPair, ctrl: ControlState,
                          order: Sequence[str] = DEFAULT_ELEMENT_ORDER,
                          include_polarizer: bool = True) -> FieldPair:
    J = cavity_jones(ctrl, order, include_polarizer)
    u = J[0, 0] * fields.u + J[0, 1] * fields.v
    v = J[1, 0] * fields.u + J[1, 1] * fields.v
    return FieldPair(u, v, fields.grid)


def _run(fields: FieldPair, config: CavityConfig, jones: np.ndarray | None,
         n_trips: int) -> FieldPair:
    if fields.grid != config.grid:
        raise ValueError("fields and config use different grids")
    fp, gp, g = config.fiber, config.gain, config.grid
    apply = jones is not None
    J = np.ascontiguousarray(jones if apply else np.eye(2), dtype=np.complex128)
    out, bad_trip, bad_step = cavity_kernel(
        fields.stack(), g.omega, g.dt, fp.D, fp.K, fp.A, fp.B, fp.kerr,
        gp.g0, gp.e0, gp.tau, gp.Gamma, config.z_length, config.n_z_steps,
        J, apply, int(n_trips))
    if bad_trip >= 0:
        raise BlowUpError(int(bad_trip), bad_step * config.z_length / config.n_z_steps)
    return FieldPair(out[0], out[1], g)


def propagate_fiber(fields: FieldPair, config: CavityConfig) -> FieldPair:
    """Advance the fields through one fiber segment of length ``z_length``.

    Symmetric (Strang) splitting: half linear step in the Fourier domain
    (dispersion, birefringence, bandwidth-limited saturable gain and loss,
    with the gain saturated by the energy at the start of that half step),
    a full nonlinear step, then the second linear half step.
    """
    return _run(fields, config, None, 1)


def round_trip(fields: FieldPair, ctrl: ControlState, config: CavityConfig) -> FieldPair:
    return settle(fields, ctrl, config, 1)


def settle(fields: FieldPair, ctrl: ControlState, config: CavityConfig,
           n_trips: int) -> FieldPair:
    """Apply ``n_trips`` full round trips (fiber, then the lumped elements)."""
    if n_trips < 1:
        raise ValueError("n_trips must be >= 1")
    return _run(fields, config, cavity_jones(ctrl, config.element_order), n_trips)


def dump_fields_csv(fields: FieldPair, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["t", "re_u", "im_u", "re_v", "im_v"])
        for row in zip(fields.grid.t, fields.u.real, fields.u.imag, fields.v.real, fields.v.imag):
            w.writerow([repr(float(x)) for x in row])
