"""JSON scenario files: parsing, validation and canonical serialization.

Layout (every block optional except ``agents``)::

    {
      "vessel":     {"m11": ..., "m22": ..., "m33": ..., "d11": ..., "d22": ..., "d33": ...},
      "gains":      {"kx": 0.2, "ktheta": 0.2, "kdx": 10, "komega": 10},
      "reference":  {"tau_x0": 2, "amp": 0.3, "freq": 0.3, "params": {...}, "pose": [0, 0, 0], "velocity": [0, 0, 0]},
      "topology":   [0, 1, 2, 3],
      "agents":     [{"offset": [dx, dy], "pose": [x, y, theta], "velocity": [vx, vy, omega],
                      "gains": {...}, "params": {...}, "plant_params": {...}}, ...],
      "simulation": {"dt": 0.001, "t_end": 150, "record_stride": 10},
      "noise":      {"power": 0.1, "sample_time": 0.01},
      "montecarlo": {"runs": 100, "uncertainty": [0.5, 1.5], "init_pos_sigma": 5, "init_vel_sigma": 5,
                     "heading_range": [-3.14159, 3.14159], "seed": 0, "jobs": 1,
                     "noise": {"power": 0.1, "sample_time": 0.01}},
      "analysis":   {"window": 20.94, "window_grid": [...], "horizon": 300, "dt": 0.001, "sample_stride": 10}
    }

An agent without ``pose`` starts exactly in formation: at its parent's initial
pose plus its offset, with the parent's heading and velocity. Omitting
``noise`` disables the disturbance. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, NamedTuple

from .controller import Gains
from .errors import ParseError, TopologyError, ValidationError
from .formation import FormationConfig, Topology, validate_topology
from .sim import MonteCarloConfig, SimConfig
from .stability import AnalysisConfig
from .vessel import NOMINAL_PARAMS, BodyVelocity, Pose, ReferenceProfile, VesselParams

PARAM_KEYS = ("m11", "m22", "m33", "d11", "d22", "d33")
GAIN_KEYS = ("kx", "ktheta", "kdx", "komega")


@dataclass(frozen=True)
class MonteCarloNoise:
    power: float
    sample_time: float


class Scenario(NamedTuple):
    formation: FormationConfig
    sim: SimConfig
    montecarlo: MonteCarloConfig
    analysis: AnalysisConfig
    # disturbance used by the Monte Carlo study; None falls back to ``sim``
    montecarlo_noise: MonteCarloNoise | None = None

    def montecarlo_sim(self) -> SimConfig:
        if self.montecarlo_noise is None:
            return self.sim
        return replace(self.sim, noise_power=self.montecarlo_noise.power,
                       noise_sample_time=self.montecarlo_noise.sample_time)


# ---------------------------------------------------------------------------
# field helpers


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ValidationError(path or "<root>", "must be an object")
    for key in obj:
        if key not in allowed:
            raise ValidationError(f"{path}.{key}" if path else key, "unknown key")


def _number(obj, key, path, default=None, *, positive=False, nonneg=False, integer=False):
    where = f"{path}.{key}" if path else key
    if key not in obj:
        if default is None:
            raise ValidationError(where, "is required")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(where, "must be a number")
    if not math.isfinite(value):
        raise ValidationError(where, "must be finite")
    if integer and int(value) != value:
        raise ValidationError(where, "must be an integer")
    if positive and not value > 0:
        raise ValidationError(where, "must be > 0")
    if nonneg and not value >= 0:
        raise ValidationError(where, "must be >= 0")
    return int(value) if integer else float(value)


def _vector(obj, key, path, length, default=None):
    where = f"{path}.{key}"
    if key not in obj:
        if default is None:
            raise ValidationError(where, "is required")
        return default
    value = obj[key]
    if not isinstance(value, list) or len(value) != length:
        raise ValidationError(where, f"must be a list of {length} numbers")
    holder = {str(i): v for i, v in enumerate(value)}
    return tuple(_number(holder, str(i), where) for i in range(length))


def _params(obj, path, base: VesselParams) -> VesselParams:
    _check_keys(obj, PARAM_KEYS, path)
    values = {k: _number(obj, k, path, getattr(base, k), positive=True) for k in PARAM_KEYS}
    return VesselParams(**values)


def _gains(obj, path, base: Gains) -> Gains:
    _check_keys(obj, GAIN_KEYS, path)
    kx = _number(obj, "kx", path, base.kx, positive=True)
    kt = _number(obj, "ktheta", path, base.ktheta, positive=True)
    kdx = _number(obj, "kdx", path, base.kdx, nonneg=True)
    kom = _number(obj, "komega", path, base.komega, positive=True)
    return Gains(kx, kt, kdx, kom)


# ---------------------------------------------------------------------------
# parsing


def parse_config_dict(raw: dict, source: str = "<config>") -> Scenario:
    _check_keys(raw, ("vessel", "gains", "reference", "topology", "agents", "simulation", "noise",
                      "montecarlo", "analysis", "description"), "")

    vessel = _params(raw.get("vessel", {}), "vessel", NOMINAL_PARAMS)
    base_gains = _gains(raw.get("gains", {}), "gains", Gains())

    ref_raw = raw.get("reference", {})
    _check_keys(ref_raw, ("tau_x0", "amp", "freq", "params", "pose", "velocity"), "reference")
    profile = ReferenceProfile(
        _number(ref_raw, "tau_x0", "reference", 2.0),
        _number(ref_raw, "amp", "reference", 0.3, nonneg=True),
        _number(ref_raw, "freq", "reference", 0.3, positive=True),
    )
    ref_params = _params(ref_raw.get("params", {}), "reference.params", vessel)
    ref_pose = Pose(*_vector(ref_raw, "pose", "reference", 3, (0.0, 0.0, 0.0)))
    ref_vel = BodyVelocity(*_vector(ref_raw, "velocity", "reference", 3, (0.0, 0.0, 0.0)))

    agents = raw.get("agents")
    if not isinstance(agents, list) or not agents:
        raise ValidationError("agents", "must be a nonempty list")
    n = len(agents)

    topo_raw = raw.get("topology", list(range(n)))
    if not isinstance(topo_raw, list) or len(topo_raw) != n:
        raise ValidationError("topology", f"must be a list of {n} parent indices")
    holder = {str(i): v for i, v in enumerate(topo_raw)}
    topology = Topology(tuple(_number(holder, str(i), "topology", integer=True) for i in range(n)))
    try:
        validate_topology(topology)
    except TopologyError as exc:
        raise ValidationError(f"topology[{exc.index}]", str(exc)) from None

    params, plant, gains, offsets, poses, vels = [], [], [], [], [], []
    any_plant = False
    abs_pose = [ref_pose]
    abs_vel = [ref_vel]
    for k, a in enumerate(agents):
        path = f"agents[{k}]"
        _check_keys(a, ("offset", "pose", "velocity", "gains", "params", "plant_params"), path)
        offset = _vector(a, "offset", path, 2)
        p = _params(a.get("params", {}), f"{path}.params", vessel)
        if "plant_params" in a:
            any_plant = True
            plant.append(_params(a["plant_params"], f"{path}.plant_params", p))
        else:
            plant.append(p)
        parent = topology.parent[k]
        if "pose" in a:
            pose = Pose(*_vector(a, "pose", path, 3))
        else:
            lead = abs_pose[parent]
            pose = Pose(lead.x + offset[0], lead.y + offset[1], lead.theta)
        vel = BodyVelocity(*_vector(a, "velocity", path, 3, tuple(abs_vel[parent] if "pose" not in a else (0.0, 0.0, 0.0))))
        abs_pose.append(pose)
        abs_vel.append(vel)
        params.append(p)
        gains.append(_gains(a.get("gains", {}), f"{path}.gains", base_gains))
        offsets.append(offset)
        poses.append(pose)
        vels.append(vel)

    formation = FormationConfig(
        topology=topology, params=tuple(params), gains=tuple(gains), offsets=tuple(offsets),
        initial_poses=tuple(poses), initial_velocities=tuple(vels), reference=profile,
        reference_params=ref_params, reference_pose=ref_pose, reference_velocity=ref_vel,
        plant_params=tuple(plant) if any_plant else None,
    )

    sim_raw = raw.get("simulation", {})
    _check_keys(sim_raw, ("dt", "t_end", "record_stride"), "simulation")
    noise_raw = raw.get("noise")
    power, ts = _noise_block(noise_raw, "noise")
    sim = _sim_config(sim_raw, power, ts)

    mc_raw = raw.get("montecarlo", {})
    _check_keys(mc_raw, ("runs", "uncertainty", "init_pos_sigma", "init_vel_sigma", "heading_range", "seed",
                         "jobs", "noise"), "montecarlo")
    unc = _vector(mc_raw, "uncertainty", "montecarlo", 2, (0.5, 1.5))
    if not 0 < unc[0] <= unc[1]:
        raise ValidationError("montecarlo.uncertainty", "must satisfy 0 < low <= high")
    heading = _vector(mc_raw, "heading_range", "montecarlo", 2, (-math.pi, math.pi))
    if not heading[0] <= heading[1]:
        raise ValidationError("montecarlo.heading_range", "must satisfy low <= high")
    mc = MonteCarloConfig(
        n_runs=_number(mc_raw, "runs", "montecarlo", 100, nonneg=True, integer=True),
        uncertainty_low=unc[0], uncertainty_high=unc[1],
        init_pos_sigma=_number(mc_raw, "init_pos_sigma", "montecarlo", 5.0, nonneg=True),
        init_vel_sigma=_number(mc_raw, "init_vel_sigma", "montecarlo", 5.0, nonneg=True),
        heading_range=heading,
        master_seed=_number(mc_raw, "seed", "montecarlo", 0, nonneg=True, integer=True),
        n_jobs=_number(mc_raw, "jobs", "montecarlo", 1, positive=True, integer=True),
    )
    mc_noise = None
    if "noise" in mc_raw:
        mc_noise = MonteCarloNoise(*_noise_block(mc_raw["noise"], "montecarlo.noise"))
        _sim_config(sim_raw, mc_noise.power, mc_noise.sample_time, noise_path="montecarlo.noise")

    an_raw = raw.get("analysis", {})
    _check_keys(an_raw, ("window", "window_grid", "horizon", "dt", "sample_stride"), "analysis")
    d = AnalysisConfig()
    grid = an_raw.get("window_grid", list(d.window_grid))
    if not isinstance(grid, list) or not grid:
        raise ValidationError("analysis.window_grid", "must be a nonempty list of numbers")
    holder = {str(i): v for i, v in enumerate(grid)}
    grid = tuple(_number(holder, str(i), "analysis.window_grid", positive=True) for i in range(len(grid)))
    window = _number(an_raw, "window", "analysis", d.window, positive=True)
    horizon = _number(an_raw, "horizon", "analysis", d.horizon, positive=True)
    if horizon < 2 * window:
        raise ValidationError("analysis.horizon", "must be at least twice analysis.window")
    analysis = AnalysisConfig(
        window=window, window_grid=grid, horizon=horizon,
        dt=_number(an_raw, "dt", "analysis", d.dt, positive=True),
        sample_stride=_number(an_raw, "sample_stride", "analysis", d.sample_stride, positive=True, integer=True),
    )
    return Scenario(formation, sim, mc, analysis, mc_noise)


def _noise_block(obj, path):
    if obj is None:
        return 0.0, 0.01
    _check_keys(obj, ("power", "sample_time"), path)
    return (_number(obj, "power", path, 0.0, nonneg=True),
            _number(obj, "sample_time", path, 0.01, positive=True))


def _sim_config(sim_raw, power, ts, noise_path="noise") -> SimConfig:
    dt = _number(sim_raw, "dt", "simulation", 1e-3, positive=True)
    t_end = _number(sim_raw, "t_end", "simulation", 150.0, positive=True)
    stride = _number(sim_raw, "record_stride", "simulation", 10, positive=True, integer=True)
    if dt > ts:
        raise ValidationError("simulation.dt", f"must be <= {noise_path}.sample_time ({ts:g})")
    ratio = ts / dt
    if abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ValidationError(f"{noise_path}.sample_time", "must be an integer multiple of simulation.dt")
    steps = t_end / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ValidationError("simulation.t_end", "must be an integer multiple of simulation.dt")
    return SimConfig(dt=dt, t_end=t_end, noise_power=power, noise_sample_time=ts, record_stride=stride)


def resolve_config_path(name: str | Path) -> Path:
    """A filesystem path, or the name of a bundled scenario such as ``paper_nominal``."""
    path = Path(name)
    if path.exists():
        return path
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    bundled = resources.files("usvlab") / "configs" / f"{stem}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no config file or bundled scenario named {str(name)!r}")


def bundled_configs() -> list[str]:
    return sorted(p.name[:-5] for p in (resources.files("usvlab") / "configs").iterdir() if p.name.endswith(".json"))


def parse_config(path: str | Path) -> Scenario:
    path = resolve_config_path(path)
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), exc.lineno, exc.colno, exc.msg) from None
    return parse_config_dict(raw, str(path))


# ---------------------------------------------------------------------------
# canonical form


def _params_dict(p: VesselParams) -> dict:
    return {k: getattr(p, k) for k in PARAM_KEYS}


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    """Fully explicit dict that parses back to an equal :class:`Scenario`."""
    fc, sc, mc, ac = s.formation, s.sim, s.montecarlo, s.analysis
    agents = []
    for k in range(fc.n_agents):
        a = {
            "offset": list(fc.offsets[k]),
            "pose": list(fc.initial_poses[k]),
            "velocity": list(fc.initial_velocities[k]),
            "gains": {g: getattr(fc.gains[k], g) for g in GAIN_KEYS},
            "params": _params_dict(fc.params[k]),
        }
        if fc.plant_params is not None:
            a["plant_params"] = _params_dict(fc.plant_params[k])
        agents.append(a)
    out = {
        "reference": {
            "tau_x0": fc.reference.tau_x0, "amp": fc.reference.amp, "freq": fc.reference.freq,
            "params": _params_dict(fc.reference_params),
            "pose": list(fc.reference_pose), "velocity": list(fc.reference_velocity),
        },
        "topology": list(fc.topology.parent),
        "agents": agents,
        "simulation": {"dt": sc.dt, "t_end": sc.t_end, "record_stride": sc.record_stride},
        "noise": {"power": sc.noise_power, "sample_time": sc.noise_sample_time},
        "montecarlo": {
            "runs": mc.n_runs, "uncertainty": [mc.uncertainty_low, mc.uncertainty_high],
            "init_pos_sigma": mc.init_pos_sigma, "init_vel_sigma": mc.init_vel_sigma,
            "heading_range": list(mc.heading_range), "seed": mc.master_seed, "jobs": mc.n_jobs,
        },
        "analysis": {
            "window": ac.window, "window_grid": list(ac.window_grid), "horizon": ac.horizon,
            "dt": ac.dt, "sample_stride": ac.sample_stride,
        },
    }
    if s.montecarlo_noise is not None:
        out["montecarlo"]["noise"] = {"power": s.montecarlo_noise.power,
                                      "sample_time": s.montecarlo_noise.sample_time}
    return out


def canonical_json(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n"


def config_digest(s: Scenario) -> str:
    return hashlib.sha256(canonical_json(s).encode()).hexdigest()
