"""3-DOF surface vessel with two propellers (surge force, yaw torque).

The model is

    q_dot = J(theta) v
    M v_dot + C(v) v + D v = G tau + w

with diagonal ``M`` and ``D``. Heading is carried as an unwrapped real.
The virtual leader is a vessel with the same model driven by a known
open-loop input, see :class:`ReferenceProfile`.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, replace
from typing import NamedTuple

import numpy as np
from numba import njit


@dataclass(frozen=True)
class VesselParams:
    """Diagonal inertia and damping constants (SI units)."""

    m11: float
    m22: float
    m33: float
    d11: float
    d22: float
    d33: float

    def __post_init__(self):
        for name, value in zip(("m11", "m22", "m33", "d11", "d22", "d33"), astuple(self)):
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"VesselParams.{name} must be finite and > 0, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def scaled(self, factors) -> VesselParams:
        """Return a copy with each constant multiplied by the matching factor."""
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (6,))
        return VesselParams(*(float(a * f) for a, f in zip(astuple(self), factors)))

    @property
    def mass_matrix(self) -> np.ndarray:
        return np.diag([self.m11, self.m22, self.m33])

    @property
    def damping_matrix(self) -> np.ndarray:
        return np.diag([self.d11, self.d22, self.d33])


# laboratory-scale vessel used throughout the simulation study
NOMINAL_PARAMS = VesselParams(m11=1.012, m22=1.982, m33=0.354, d11=3.436, d22=18.99, d33=0.864)

# input selection: surge force and yaw torque act on rows 1 and 3
INPUT_MATRIX = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])


class Pose(NamedTuple):
    x: float
    y: float
    theta: float


class BodyVelocity(NamedTuple):
    vx: float
    vy: float
    omega: float


class ControlInput(NamedTuple):
    tau_x: float
    tau_omega: float


@dataclass(frozen=True)
class ReferenceProfile:
    """Open-loop input of the virtual leader: ``(tau_x0, amp * sin(freq * t))``."""

    tau_x0: float = 2.0
    amp: float = 0.3
    freq: float = 0.3

    def __post_init__(self):
        if not math.isfinite(self.tau_x0):
            raise ValueError("ReferenceProfile.tau_x0 must be finite")
        if not (math.isfinite(self.amp) and self.amp >= 0.0):
            raise ValueError("ReferenceProfile.amp must be >= 0")
        if not (math.isfinite(self.freq) and self.freq > 0.0):
            raise ValueError("ReferenceProfile.freq must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.tau_x0, self.amp, self.freq], dtype=float)

    def with_amp(self, amp: float) -> ReferenceProfile:
        return replace(self, amp=amp)


# ---------------------------------------------------------------------------
# scalar kernels, shared by the public functions and the compiled integrator


@njit(cache=True)
def _body_accel(vx, vy, om, tx, tw, wx, wy, ww, m11, m22, m33, d11, d22, d33):
    ax = (tx + wx + m22 * vy * om - d11 * vx) / m11
    ay = (wy - m11 * vx * om - d22 * vy) / m22
    aw = (tw + ww - (m22 - m11) * vx * vy - d33 * om) / m33
    return ax, ay, aw


@njit(cache=True)
def _pose_rate(theta, vx, vy, om):
    c = math.cos(theta)
    s = math.sin(theta)
    return c * vx - s * vy, s * vx + c * vy, om


@njit(cache=True)
def _reference_torque(t, tau_x0, amp, freq):
    return tau_x0, amp * math.sin(freq * t)


# ---------------------------------------------------------------------------


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def coriolis_matrix(v, p: VesselParams) -> np.ndarray:
    """Coriolis and centrifugal matrix ``C(v)``; skew-symmetric by construction."""
    vx, vy, _ = v
    a = -p.m22 * vy
    b = p.m11 * vx
    return np.array([[0.0, 0.0, a], [0.0, 0.0, b], [-a, -b, 0.0]])


def body_accel(v, u, w, p: VesselParams) -> np.ndarray:
    """Body-frame acceleration ``M^-1 (G tau + w - C(v) v - D v)``."""
    w = (0.0, 0.0, 0.0) if w is None else w
    return np.array(_body_accel(*map(float, v), *map(float, u), *map(float, w), *astuple(p)))


def pose_rate(q, v) -> np.ndarray:
    return np.array(_pose_rate(float(q[2]), *map(float, v)))


def reference_torque(t: float, profile: ReferenceProfile) -> ControlInput:
    return ControlInput(*_reference_torque(float(t), profile.tau_x0, profile.amp, profile.freq))


def reference_accel(t: float, v_d, profile: ReferenceProfile, p: VesselParams) -> np.ndarray:
    """Acceleration of the virtual leader; the third entry is the analytic yaw acceleration."""
    return body_accel(v_d, reference_torque(t, profile), None, p)
