"""Multi-vessel formation over a directed spanning tree.

Agent 0 is the virtual leader. Every follower ``i`` tracks its parent with a
world-frame displacement ``(dx_i, dy_i)`` using the single-pair controller
from :mod:`usvlab.controller`. The swarm state is one array of shape
``(n + 1, 7)`` with columns ``x, y, theta, vx, vy, omega, vy_star``; the
``vy_star`` column of agent 0 is unused and stays at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .controller import (
    Gains,
    _body_error,
    _error_rates,
    _pd_plus_torque,
    _virtual_control_rates,
    _virtual_controls,
    _vy_star_rate,
)
from .errors import CyclicTopology, DanglingParent, NonFiniteState
from .vessel import NOMINAL_PARAMS, BodyVelocity, Pose, ReferenceProfile, VesselParams, _body_accel, _pose_rate, _reference_torque

X, Y, THETA, VX, VY, OMEGA, VY_STAR = range(7)
STATE_WIDTH = 7


@dataclass(frozen=True)
class Topology:
    """Parent map: ``parent[k]`` is the leader of agent ``k + 1``; 0 is the virtual leader."""

    parent: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))

    @classmethod
    def chain(cls, n: int) -> Topology:
        return cls(tuple(range(n)))

    @property
    def n_agents(self) -> int:
        return len(self.parent)

    def full_parent(self) -> np.ndarray:
        """Parent index for every agent including the virtual leader (-1)."""
        return np.array((-1,) + self.parent, dtype=np.int64)

    def children(self, agent: int) -> list[int]:
        return [k + 1 for k, p in enumerate(self.parent) if p == agent]


def validate_topology(t: Topology) -> None:
    """Raise unless every agent's parent precedes it; this makes the graph a tree rooted at 0."""
    if not t.parent:
        raise ValueError("topology must contain at least one follower")
    n = len(t.parent)
    for k, p in enumerate(t.parent):
        agent = k + 1
        if 0 <= p < agent:
            continue
        # a loop through other agents is a cycle; anything else points nowhere useful
        seen, cur = set(), p
        while 1 <= cur <= n and cur != agent and cur not in seen:
            seen.add(cur)
            cur = t.parent[cur - 1]
        if cur == agent and p != agent:
            raise CyclicTopology(k, f"agent {agent} (index {k}) lies on a parent cycle through agent {p}")
        raise DanglingParent(
            k, f"agent {agent} (index {k}) has parent {p}; a parent must be 0 or an agent with a lower index"
        )


class Model(NamedTuple):
    """Array form of a :class:`FormationConfig`, as consumed by the compiled kernels."""

    parent: np.ndarray  # (N,) int64
    ctrl: np.ndarray  # (N, 6) controller model parameters
    plant: np.ndarray  # (N, 6) true vessel parameters
    gains: np.ndarray  # (N, 4) kx, ktheta, kdx, komega
    offsets: np.ndarray  # (N, 2)
    profile: np.ndarray  # (3,) tau_x0, amp, freq


def _tuple_of(seq, n, kind, name):
    out = tuple(seq)
    if len(out) != n:
        raise ValueError(f"FormationConfig.{name} has {len(out)} entries, expected {n}")
    for item in out:
        if not isinstance(item, kind):
            raise TypeError(f"FormationConfig.{name} entries must be {kind.__name__}")
    return out


@dataclass(frozen=True)
class FormationConfig:
    topology: Topology
    params: tuple[VesselParams, ...]
    gains: tuple[Gains, ...]
    offsets: tuple[tuple[float, float], ...]
    initial_poses: tuple[Pose, ...]
    initial_velocities: tuple[BodyVelocity, ...] | None = None
    reference: ReferenceProfile = field(default_factory=ReferenceProfile)
    reference_params: VesselParams = NOMINAL_PARAMS
    reference_pose: Pose = Pose(0.0, 0.0, 0.0)
    reference_velocity: BodyVelocity = BodyVelocity(0.0, 0.0, 0.0)
    # None means the plant matches the controller model exactly
    plant_params: tuple[VesselParams, ...] | None = None

    def __post_init__(self):
        validate_topology(self.topology)
        n = self.topology.n_agents
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("params", _tuple_of(self.params, n, VesselParams, "params"))
        set_("gains", _tuple_of(self.gains, n, Gains, "gains"))
        offsets = tuple((float(a), float(b)) for a, b in self.offsets)
        if len(offsets) != n:
            raise ValueError(f"FormationConfig.offsets has {len(offsets)} entries, expected {n}")
        set_("offsets", offsets)
        poses = tuple(Pose(*map(float, q)) for q in self.initial_poses)
        if len(poses) != n:
            raise ValueError(f"FormationConfig.initial_poses has {len(poses)} entries, expected {n}")
        set_("initial_poses", poses)
        vels = self.initial_velocities
        vels = tuple(BodyVelocity(0.0, 0.0, 0.0) for _ in range(n)) if vels is None else vels
        vels = tuple(BodyVelocity(*map(float, v)) for v in vels)
        if len(vels) != n:
            raise ValueError(f"FormationConfig.initial_velocities has {len(vels)} entries, expected {n}")
        set_("initial_velocities", vels)
        set_("reference_pose", Pose(*map(float, self.reference_pose)))
        set_("reference_velocity", BodyVelocity(*map(float, self.reference_velocity)))
        if self.plant_params is not None:
            set_("plant_params", _tuple_of(self.plant_params, n, VesselParams, "plant_params"))

    @property
    def n_agents(self) -> int:
        return self.topology.n_agents

    @property
    def plant(self) -> tuple[VesselParams, ...]:
        return self.params if self.plant_params is None else self.plant_params

    @cached_property
    def model(self) -> Model:
        ref = self.reference_params.as_array()
        return Model(
            parent=self.topology.full_parent(),
            ctrl=np.vstack([ref] + [p.as_array() for p in self.params]),
            plant=np.vstack([ref] + [p.as_array() for p in self.plant]),
            gains=np.vstack([np.zeros(4)] + [g.as_array() for g in self.gains]),
            offsets=np.array([(0.0, 0.0)] + list(self.offsets), dtype=float),
            profile=self.reference.as_array(),
        )

    def initial_state(self) -> SwarmState:
        data = np.zeros((self.n_agents + 1, STATE_WIDTH))
        data[0, :3] = self.reference_pose
        data[0, 3:6] = self.reference_velocity
        for i, (q, v) in enumerate(zip(self.initial_poses, self.initial_velocities), start=1):
            data[i, :3] = q
            data[i, 3:6] = v
        # vy* starts at the leader's sway velocity
        parent = self.topology.full_parent()
        for i in range(1, self.n_agents + 1):
            data[i, VY_STAR] = data[parent[i], VY]
        return SwarmState(data)


def exact_formation_poses(cfg_offsets: Sequence[tuple[float, float]], topology: Topology,
                          reference_pose: Pose = Pose(0.0, 0.0, 0.0)) -> tuple[Pose, ...]:
    """Poses that put every follower exactly at its offset from its parent, headings aligned."""
    parent = topology.full_parent()
    xy = np.zeros((topology.n_agents + 1, 2))
    xy[0] = reference_pose[:2]
    for i in range(1, topology.n_agents + 1):
        xy[i] = xy[parent[i]] + np.asarray(cfg_offsets[i - 1], dtype=float)
    return tuple(Pose(float(x), float(y), float(reference_pose[2])) for x, y in xy[1:])


@dataclass
class SwarmState:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != STATE_WIDTH:
            raise ValueError(f"swarm state must have shape (n + 1, {STATE_WIDTH}), got {self.data.shape}")

    @property
    def n_agents(self) -> int:
        return self.data.shape[0] - 1

    @property
    def poses(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def velocities(self) -> np.ndarray:
        return self.data[:, 3:6]

    @property
    def vy_star(self) -> np.ndarray:
        return self.data[1:, VY_STAR]

    def copy(self) -> SwarmState:
        return SwarmState(self.data.copy())


@njit(cache=True)
def _swarm_rhs(t, S, W, parent, ctrl, plant, gains, offsets, profile, dS, tau):
    """Fill ``dS`` and ``tau`` in one ascending pass; parents are always evaluated first."""
    for i in range(S.shape[0]):
        th = S[i, 2]
        vx = S[i, 3]
        vy = S[i, 4]
        om = S[i, 5]
        pp = plant[i]
        if i == 0:
            tx, tw = _reference_torque(t, profile[0], profile[1], profile[2])
            dvys = 0.0
        else:
            p = parent[i]
            cp = ctrl[i]
            kx = gains[i, 0]
            kth = gains[i, 1]
            ex, ey, eth = _body_error(S[i, 0], S[i, 1], th, S[p, 0], S[p, 1], S[p, 2], offsets[i, 0], offsets[i, 1])
            vxl = S[p, 3]
            vyl = S[p, 4]
            oml = S[p, 5]
            vxs, oms = _virtual_controls(ex, eth, vxl, oml, kx, kth)
            dex, dey, deth = _error_rates(ex, ey, eth, vx, vy, om, vxl, vyl, oml)
            axs, aws = _virtual_control_rates(eth, dex, deth, dS[p, 3], dS[p, 5], kx, kth)
            vys = S[i, 6]
            dvys = _vy_star_rate(vxs, oms, vys, cp[0], cp[1], cp[4])
            tx, tw = _pd_plus_torque(vx, vy, om, vxs, vys, oms, axs, aws, gains[i, 2], gains[i, 3],
                                     cp[0], cp[1], cp[2], cp[3], cp[4], cp[5])
        ax, ay, aw = _body_accel(vx, vy, om, tx, tw, W[i, 0], W[i, 1], W[i, 2],
                                 pp[0], pp[1], pp[2], pp[3], pp[4], pp[5])
        dx, dy, dth = _pose_rate(th, vx, vy, om)
        dS[i, 0] = dx
        dS[i, 1] = dy
        dS[i, 2] = dth
        dS[i, 3] = ax
        dS[i, 4] = ay
        dS[i, 5] = aw
        dS[i, 6] = dvys
        tau[i, 0] = tx
        tau[i, 1] = tw


def _disturbance_array(w, n_rows: int) -> np.ndarray:
    """Per-agent disturbance padded with a zero row for the virtual leader."""
    if w is None:
        return np.zeros((n_rows, 3))
    w = np.asarray(w, dtype=float)
    if w.shape == (n_rows - 1, 3):
        return np.vstack([np.zeros((1, 3)), w])
    if w.shape == (n_rows, 3):
        return w
    raise ValueError(f"disturbance must have shape ({n_rows - 1}, 3), got {w.shape}")


def swarm_derivative(t: float, s: SwarmState, cfg: FormationConfig, w=None, return_torque: bool = False):
    """Time derivative of the full swarm state; ``w`` is the per-follower disturbance ``(n, 3)``."""
    data = s.data if isinstance(s, SwarmState) else np.asarray(s, dtype=float)
    if not np.all(np.isfinite(data)):
        raise NonFiniteState(f"non-finite swarm state at t={t}")
    m = cfg.model
    dS = np.empty_like(data)
    tau = np.empty((data.shape[0], 2))
    _swarm_rhs(float(t), data, _disturbance_array(w, data.shape[0]), m.parent, m.ctrl, m.plant, m.gains,
               m.offsets, m.profile, dS, tau)
    if not np.all(np.isfinite(dS)):
        raise NonFiniteState(f"non-finite swarm derivative at t={t}")
    rate = SwarmState(dS)
    return (rate, tau) if return_torque else rate


class FormationErrors(NamedTuple):
    """Error coordinates of every follower; leading axes follow the input state."""

    e: np.ndarray  # (..., n, 3) ex, ey, etheta
    vbar_y: np.ndarray  # (..., n)
    vtilde: np.ndarray  # (..., n, 3)
    vstar: np.ndarray  # (..., n, 3)

    @property
    def ep_norm(self) -> np.ndarray:
        return np.hypot(self.e[..., 0], self.e[..., 1])

    @property
    def vtilde_norm(self) -> np.ndarray:
        return np.linalg.norm(self.vtilde, axis=-1)


def formation_errors(s, cfg: FormationConfig) -> FormationErrors:
    """Body-frame errors, sway virtual-velocity error and velocity error of every follower.

    Accepts a single state ``(n + 1, 7)`` or a stacked history ``(K, n + 1, 7)``.
    """
    data = s.data if isinstance(s, SwarmState) else np.asarray(s, dtype=float)
    parent = cfg.topology.full_parent()[1:]
    gains = np.array([g.as_array() for g in cfg.gains])
    fol = data[..., 1:, :]
    lead = data[..., parent, :]
    off = np.asarray(cfg.offsets)

    th = fol[..., THETA]
    c, sn = np.cos(th), np.sin(th)
    rx = fol[..., X] - lead[..., X] - off[:, 0]
    ry = fol[..., Y] - lead[..., Y] - off[:, 1]
    ex = c * rx + sn * ry
    ey = -sn * rx + c * ry
    eth = th - lead[..., THETA]
    e = np.stack([ex, ey, eth], axis=-1)

    vxs = -gains[:, 0] * ex + lead[..., VX]
    oms = -gains[:, 1] * np.tanh(eth) + lead[..., OMEGA]
    vstar = np.stack([vxs, fol[..., VY_STAR], oms], axis=-1)
    vtilde = fol[..., VX:OMEGA + 1] - vstar
    vbar_y = fol[..., VY_STAR] - lead[..., VY]
    return FormationErrors(e, vbar_y, vtilde, vstar)


def error_coordinate_rates(t: float, s: SwarmState, cfg: FormationConfig, w=None) -> np.ndarray:
    """Rates ``(ex', ey', vbar_y', etheta')`` of every follower, straight from the controller pipeline."""
    data = s.data if isinstance(s, SwarmState) else np.asarray(s, dtype=float)
    ds = swarm_derivative(t, SwarmState(data), cfg, w).data
    err = formation_errors(data, cfg)
    parent = cfg.topology.full_parent()
    out = np.empty((cfg.n_agents, 4))
    for i in range(1, cfg.n_agents + 1):
        p = parent[i]
        dex, dey, deth = _error_rates(*err.e[i - 1], *data[i, VX:OMEGA + 1], *data[p, VX:OMEGA + 1])
        out[i - 1] = (dex, dey, ds[i, VY_STAR] - ds[p, VY], deth)
    return out


def coupling_matrices(e, g: Gains, p: VesselParams) -> tuple[np.ndarray, np.ndarray]:
    """Interconnection matrices ``H(e_i)`` (leader velocity error) and ``G(e_i)`` (own velocity error).

    Rows follow the error coordinates ``(ex, ey, vbar_y, etheta)``.
    """
    ex, ey, eth = map(float, e)
    c, s, th = math.cos(eth), math.sin(eth), math.tanh(eth)
    r = p.m11 / p.m22
    H = np.array([
        [1.0 - c, -s, ey],
        [s, 1.0 - c, -ex],
        [r * g.ktheta * th, 0.0, r * g.kx * ex],
        [0.0, 0.0, 0.0],
    ])
    G = np.array([
        [1.0, 0.0, ey],
        [0.0, 1.0, -ex],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return H, G
