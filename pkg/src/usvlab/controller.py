"""Leader-follower tracking controller for one vessel.

Kinematic layer: saturated-linear virtual velocities

    vx* = -kx ex + vx_leader
    w*  = -ktheta tanh(etheta) + w_leader

and a sway virtual velocity ``vy*`` integrated from the unactuated sway
equation. Kinetic layer: a PD+ law restricted to the surge and yaw channels,
with no damping injection on sway.

The controller consumes the leader's body velocity and acceleration. Both are
assumed to be broadcast alongside the relative pose.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .vessel import ControlInput, VesselParams


class GainWarning(UserWarning):
    """A gain violates a sufficient (not necessary) stability condition."""


@dataclass(frozen=True)
class Gains:
    kx: float = 0.2
    ktheta: float = 0.2
    kdx: float = 10.0
    komega: float = 10.0

    def __post_init__(self):
        for name in ("kx", "ktheta", "komega"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"Gains.{name} must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.kdx) and self.kdx >= 0.0):
            raise ValueError(f"Gains.kdx must be finite and >= 0, got {self.kdx!r}")

    @property
    def kdy(self) -> float:
        # no damping injection on the unactuated channel
        return 0.0

    @property
    def damping_injection(self) -> np.ndarray:
        return np.diag([self.kdx, self.kdy, self.komega])

    def as_array(self) -> np.ndarray:
        return np.array([self.kx, self.ktheta, self.kdx, self.komega], dtype=float)

    def check(self, p: VesselParams, omega_bar_d: float) -> bool:
        """Warn (don't raise) when ``kdx`` is below the velocity-tracking bound."""
        bound = min_kdx(p, omega_cap(self, omega_bar_d))
        if self.kdx < bound:
            warnings.warn(
                f"kdx={self.kdx:g} is below m11^2 wM^2/(2 d22)={bound:.6g}; "
                "exponential velocity tracking is no longer guaranteed",
                GainWarning,
                stacklevel=2,
            )
            return False
        return True


class BodyError(NamedTuple):
    ex: float
    ey: float
    etheta: float


@dataclass
class ControllerState:
    """Integrator state of the sway virtual velocity; start it at the leader's sway velocity."""

    vy_star: float = 0.0


class VirtualControl(NamedTuple):
    vx_star: float
    vy_star: float
    omega_star: float
    vx_star_dot: float
    vy_star_dot: float
    omega_star_dot: float

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx_star, self.vy_star, self.omega_star])

    @property
    def acceleration(self) -> np.ndarray:
        return np.array([self.vx_star_dot, self.vy_star_dot, self.omega_star_dot])


# ---------------------------------------------------------------------------
# scalar kernels


@njit(cache=True)
def _body_error(x, y, th, xl, yl, thl, dx, dy):
    c = math.cos(th)
    s = math.sin(th)
    rx = x - xl - dx
    ry = y - yl - dy
    return c * rx + s * ry, -s * rx + c * ry, th - thl


@njit(cache=True)
def _error_rates(ex, ey, eth, vx, vy, om, vxl, vyl, oml):
    c = math.cos(eth)
    s = math.sin(eth)
    dex = om * ey + vx - vxl * c - vyl * s
    dey = -om * ex + vy + vxl * s - vyl * c
    return dex, dey, om - oml


@njit(cache=True)
def _virtual_controls(ex, eth, vxl, oml, kx, kth):
    return -kx * ex + vxl, -kth * math.tanh(eth) + oml


@njit(cache=True)
def _vy_star_rate(vxs, oms, vys, m11, m22, d22):
    return -(m11 / m22) * vxs * oms - (d22 / m22) * vys


@njit(cache=True)
def _virtual_control_rates(eth, dex, deth, axl, awl, kx, kth):
    th = math.tanh(eth)
    return -kx * dex + axl, -kth * (1.0 - th * th) * deth + awl


@njit(cache=True)
def _pd_plus_torque(vx, vy, om, vxs, vys, oms, axs, aws, kdx, kom, m11, m22, m33, d11, d22, d33):
    # rows 1 and 3 of M v*' + C(v) v* + D v* - Kd (v - v*)
    tx = m11 * axs - m22 * vy * oms + d11 * vxs - kdx * (vx - vxs)
    tw = m33 * aws + m22 * vy * vxs - m11 * vx * vys + d33 * oms - kom * (om - oms)
    return tx, tw


# ---------------------------------------------------------------------------


def body_error(q, q_leader, offset=(0.0, 0.0)) -> BodyError:
    return BodyError(*_body_error(*map(float, q), *map(float, q_leader), float(offset[0]), float(offset[1])))


def error_rates(e, v, v_leader) -> np.ndarray:
    return np.array(_error_rates(*map(float, e), *map(float, v), *map(float, v_leader)))


def virtual_controls(e, v_leader, g: Gains) -> tuple[float, float]:
    return _virtual_controls(float(e[0]), float(e[2]), float(v_leader[0]), float(v_leader[2]), g.kx, g.ktheta)


def vy_star_rate(vx_star: float, omega_star: float, vy_star: float, p: VesselParams) -> float:
    return _vy_star_rate(float(vx_star), float(omega_star), float(vy_star), p.m11, p.m22, p.d22)


def virtual_control_rates(e, e_rates, v_leader_dot, g: Gains) -> tuple[float, float]:
    return _virtual_control_rates(
        float(e[2]), float(e_rates[0]), float(e_rates[2]),
        float(v_leader_dot[0]), float(v_leader_dot[2]), g.kx, g.ktheta,
    )


def pd_plus_torque(v, vc: VirtualControl, g: Gains, p: VesselParams):
    tx, tw = _pd_plus_torque(
        *map(float, v), vc.vx_star, vc.vy_star, vc.omega_star, vc.vx_star_dot, vc.omega_star_dot,
        g.kdx, g.komega, p.m11, p.m22, p.m33, p.d11, p.d22, p.d33,
    )
    return ControlInput(tx, tw)


def virtual_control(e, v, v_leader, v_leader_dot, state: ControllerState, g: Gains, p: VesselParams) -> VirtualControl:
    """Assemble ``v*`` and its time derivative for one follower."""
    vxs, oms = virtual_controls(e, v_leader, g)
    rates = error_rates(e, v, v_leader)
    axs, aws = virtual_control_rates(e, rates, v_leader_dot, g)
    ays = vy_star_rate(vxs, oms, state.vy_star, p)
    return VirtualControl(vxs, state.vy_star, oms, axs, ays, aws)


def omega_cap(g: Gains, omega_bar_d: float) -> float:
    """Uniform bound on ``|w*|``: ``ktheta + omega_bar_d``."""
    return g.ktheta + omega_bar_d


def min_kdx(p: VesselParams, omega_m: float) -> float:
    return p.m11**2 * omega_m**2 / (2.0 * p.d22)
