"""Fixed-step simulation of the swarm, disturbance generation and the Monte Carlo study."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import Diverged, NonFiniteState
from .formation import STATE_WIDTH, FormationConfig, FormationErrors, _swarm_rhs, formation_errors
from .vessel import BodyVelocity, Pose

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 150.0
    noise_power: float = 0.0
    noise_sample_time: float = 0.01
    record_stride: int = 10

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("SimConfig.dt must be > 0")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("SimConfig.t_end must be > 0")
        if not (self.noise_power >= 0 and math.isfinite(self.noise_power)):
            raise ValueError("SimConfig.noise_power must be >= 0")
        if not (self.noise_sample_time >= self.dt):
            raise ValueError("SimConfig.noise_sample_time must be >= dt")
        ratio = self.noise_sample_time / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("SimConfig.noise_sample_time must be an integer multiple of dt")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError("SimConfig.t_end must be an integer multiple of dt")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("SimConfig.record_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def steps_per_hold(self) -> int:
        return int(round(self.noise_sample_time / self.dt))

    @property
    def record_dt(self) -> float:
        return self.dt * self.record_stride


@dataclass(frozen=True)
class MonteCarloConfig:
    n_runs: int = 100
    uncertainty_low: float = 0.5
    uncertainty_high: float = 1.5
    init_pos_sigma: float = 5.0
    init_vel_sigma: float = 5.0
    heading_range: tuple[float, float] = (-math.pi, math.pi)
    master_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "heading_range", tuple(float(h) for h in self.heading_range))
        if int(self.n_runs) != self.n_runs or self.n_runs < 0:
            raise ValueError("MonteCarloConfig.n_runs must be a non-negative integer")
        if not (0 < self.uncertainty_low <= self.uncertainty_high):
            raise ValueError("MonteCarloConfig requires 0 < uncertainty_low <= uncertainty_high")
        if self.init_pos_sigma < 0 or self.init_vel_sigma < 0:
            raise ValueError("MonteCarloConfig spreads must be >= 0")
        lo, hi = self.heading_range
        if len(self.heading_range) != 2 or not lo <= hi:
            raise ValueError("MonteCarloConfig.heading_range must be an interval (lo, hi)")
        if self.master_seed < 0:
            raise ValueError("MonteCarloConfig.master_seed must be >= 0")
        if self.n_jobs < 1:
            raise ValueError("MonteCarloConfig.n_jobs must be >= 1")


# ---------------------------------------------------------------------------
# integration


def rk4_step(f: Callable, x, t: float, dt: float):
    """One classical Runge-Kutta step of ``x' = f(t, x)``."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _integrate(S0, dt, n_steps, stride, noise, steps_per_hold, parent, ctrl, plant, gains, offsets, profile):
    """RK4 over the swarm ODE, disturbance held over each step. Returns the failing step or -1."""
    N = S0.shape[0]
    K = n_steps // stride + 1
    rec = np.zeros((K, N, 7))
    rec_rate = np.zeros((K, N, 7))
    rec_tau = np.zeros((K, N, 2))
    S = S0.copy()
    k1 = np.empty_like(S)
    k2 = np.empty_like(S)
    k3 = np.empty_like(S)
    k4 = np.empty_like(S)
    tmp = np.empty_like(S)
    tau = np.empty((N, 2))
    scratch = np.empty((N, 2))
    h = 0.5 * dt
    last_hold = noise.shape[0] - 1
    for k in range(n_steps + 1):
        t = k * dt
        W = noise[min(k // steps_per_hold, last_hold)]
        _swarm_rhs(t, S, W, parent, ctrl, plant, gains, offsets, profile, k1, tau)
        if not (np.isfinite(S).all() and np.isfinite(k1).all()):
            return rec, rec_rate, rec_tau, k
        if k % stride == 0:
            j = k // stride
            rec[j] = S
            rec_rate[j] = k1
            rec_tau[j] = tau
        if k == n_steps:
            break
        for a in range(N):
            for b in range(7):
                tmp[a, b] = S[a, b] + h * k1[a, b]
        _swarm_rhs(t + h, tmp, W, parent, ctrl, plant, gains, offsets, profile, k2, scratch)
        for a in range(N):
            for b in range(7):
                tmp[a, b] = S[a, b] + h * k2[a, b]
        _swarm_rhs(t + h, tmp, W, parent, ctrl, plant, gains, offsets, profile, k3, scratch)
        for a in range(N):
            for b in range(7):
                tmp[a, b] = S[a, b] + dt * k3[a, b]
        _swarm_rhs(t + dt, tmp, W, parent, ctrl, plant, gains, offsets, profile, k4, scratch)
        for a in range(N):
            for b in range(7):
                S[a, b] += (dt / 6.0) * (k1[a, b] + 2.0 * k2[a, b] + 2.0 * k3[a, b] + k4[a, b])
    return rec, rec_rate, rec_tau, -1


# ---------------------------------------------------------------------------
# disturbances


class NoiseStream:
    """Zero-order-hold Gaussian disturbance, one 3-vector per agent.

    On ``[k Ts, (k + 1) Ts)`` each channel is an independent draw with standard
    deviation ``sqrt(power / Ts)`` (band-limited white noise of the given power).
    """

    def __init__(self, cfg: SimConfig, seed, n_agents: int, t_end: float | None = None):
        t_end = cfg.t_end if t_end is None else t_end
        self.sample_time = cfg.noise_sample_time
        self.sigma = math.sqrt(cfg.noise_power / cfg.noise_sample_time)
        n_holds = int(math.floor(t_end / self.sample_time + 1e-9)) + 1
        if cfg.noise_power == 0.0:
            self.samples = np.zeros((n_holds, n_agents, 3))
        else:
            rng = np.random.default_rng(seed)
            self.samples = self.sigma * rng.standard_normal((n_holds, n_agents, 3))

    def __call__(self, t: float) -> np.ndarray:
        k = int(math.floor(t / self.sample_time + 1e-9))
        return self.samples[min(max(k, 0), len(self.samples) - 1)]

    def padded(self) -> np.ndarray:
        """Samples with a leading zero row for the virtual leader, as the integrator expects."""
        n_holds, n_agents, _ = self.samples.shape
        out = np.zeros((n_holds, n_agents + 1, 3))
        out[:, 1:] = self.samples
        return out


def noise_stream(cfg: SimConfig, seed, n_agents: int = 1) -> NoiseStream:
    return NoiseStream(cfg, seed, n_agents)


# ---------------------------------------------------------------------------
# single runs


@dataclass
class Trajectory:
    """Decimated history of one run. Agent 0 is the virtual leader."""

    t: np.ndarray  # (K,)
    states: np.ndarray  # (K, n + 1, 7)
    rates: np.ndarray  # (K, n + 1, 7)
    torques: np.ndarray  # (K, n + 1, 2)
    config: FormationConfig = field(repr=False)

    @cached_property
    def errors(self) -> FormationErrors:
        return formation_errors(self.states, self.config)

    @property
    def ep_norm(self) -> np.ndarray:
        return self.errors.ep_norm

    @property
    def etheta(self) -> np.ndarray:
        return self.errors.e[..., 2]

    @property
    def vtilde_norm(self) -> np.ndarray:
        return self.errors.vtilde_norm

    @property
    def vbar_y(self) -> np.ndarray:
        return self.errors.vbar_y

    @property
    def omega_d(self) -> np.ndarray:
        return self.states[:, 0, 5]

    @property
    def omega_dot_d(self) -> np.ndarray:
        return self.rates[:, 0, 5]

    def window(self, t0: float, t1: float = math.inf) -> np.ndarray:
        """Boolean mask of records with ``t0 <= t <= t1``."""
        eps = 1e-9 * max(1.0, abs(t1) if math.isfinite(t1) else 1.0)
        return (self.t >= t0 - eps) & (self.t <= t1 + eps)


def _simulate_arrays(fc: FormationConfig, sc: SimConfig, noise: np.ndarray, s0: np.ndarray, rows=None):
    m = fc.model
    if rows is not None:
        m = type(m)(*(a[:rows] for a in m[:5]), m.profile)
    rec, rec_rate, rec_tau, fail = _integrate(
        np.ascontiguousarray(s0), sc.dt, sc.n_steps, int(sc.record_stride), noise, sc.steps_per_hold, *m
    )
    if fail >= 0:
        raise Diverged(fail * sc.dt)
    t = np.arange(rec.shape[0]) * sc.record_dt
    return t, rec, rec_rate, rec_tau


def run_simulation(fc: FormationConfig, sc: SimConfig, seed=None, initial_state=None) -> Trajectory:
    """Integrate the virtual leader, every follower and every controller state from t = 0.

    Deterministic for a given ``(fc, sc, seed)``; the seed only drives the disturbance.
    """
    s0 = fc.initial_state().data if initial_state is None else np.asarray(initial_state, dtype=float)
    if s0.shape != (fc.n_agents + 1, STATE_WIDTH):
        raise ValueError(f"initial state must have shape {(fc.n_agents + 1, STATE_WIDTH)}")
    if not np.all(np.isfinite(s0)):
        raise NonFiniteState("non-finite initial state")
    noise = NoiseStream(sc, seed, fc.n_agents).padded()
    t, rec, rec_rate, rec_tau = _simulate_arrays(fc, sc, noise, s0)
    return Trajectory(t, rec, rec_rate, rec_tau, fc)


def reference_signals(fc: FormationConfig, t_end: float, dt: float = 1e-3, record_stride: int = 10):
    """Yaw rate of the virtual leader and its analytic derivative on a uniform grid.

    Returns ``(t, omega_d, omega_dot_d)``.
    """
    sc = SimConfig(dt=dt, t_end=t_end, record_stride=record_stride, noise_sample_time=dt)
    s0 = fc.initial_state().data[:1]
    t, rec, rec_rate, _ = _simulate_arrays(fc, sc, np.zeros((1, 1, 3)), s0, rows=1)
    return t, rec[:, 0, 5].copy(), rec_rate[:, 0, 5].copy()


# ---------------------------------------------------------------------------
# Monte Carlo


def child_seed(master_seed: int, run: int) -> int:
    """Seed of run ``run``; depends only on (master_seed, run), so runs may execute in any order."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run),))
    return int(ss.generate_state(1, np.uint64)[0])


def perturbed_config(fc: FormationConfig, mc: MonteCarloConfig, rng: np.random.Generator) -> FormationConfig:
    """Random plant parameters and initial states; controllers keep the nominal model."""
    n = fc.n_agents
    eta = rng.uniform(mc.uncertainty_low, mc.uncertainty_high, size=(n, 6))
    xy = rng.normal(0.0, mc.init_pos_sigma, size=(n, 2))
    theta = rng.uniform(*mc.heading_range, size=n)
    vel = rng.normal(0.0, mc.init_vel_sigma, size=(n, 3))
    return replace(
        fc,
        plant_params=tuple(p.scaled(e) for p, e in zip(fc.params, eta)),
        initial_poses=tuple(Pose(float(a), float(b), float(c)) for (a, b), c in zip(xy, theta)),
        initial_velocities=tuple(BodyVelocity(*map(float, v)) for v in vel),
    )


@dataclass
class RunResult:
    run: int
    seed: int
    ep_norm: np.ndarray | None  # (K, n) or None when diverged
    diverged_at: float | None = None


def run_one(fc: FormationConfig, sc: SimConfig, mc: MonteCarloConfig, run: int, seed: int) -> RunResult:
    model_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    cfg = perturbed_config(fc, mc, np.random.default_rng(model_ss))
    try:
        traj = run_simulation(cfg, sc, seed=noise_ss)
    except Diverged as exc:
        log.warning("run %d diverged at t=%.3f", run, exc.t)
        return RunResult(run, seed, None, exc.t)
    return RunResult(run, seed, traj.ep_norm)


def _run_one_star(args):
    return run_one(*args)


@dataclass
class MonteCarloSummary:
    t: np.ndarray  # (K,)
    emin: np.ndarray  # (K, n)
    emedian: np.ndarray
    emax: np.ndarray
    ep_norm: np.ndarray  # (R, K, n), completed runs only
    runs: list[int]  # run index of every row of ep_norm
    seeds: list[int]  # child seed of every run, diverged or not
    diverged: list[tuple[int, float]]

    @property
    def n_completed(self) -> int:
        return len(self.runs)

    def final_error_stats(self) -> dict:
        if not self.n_completed:
            return {}
        final = self.ep_norm[:, -1, :]
        return {
            "mean": final.mean(axis=0).tolist(),
            "median": np.median(final, axis=0).tolist(),
            "max": final.max(axis=0).tolist(),
        }

    def sup_over(self, t0: float, t1: float = math.inf) -> np.ndarray:
        """Per-run, per-agent sup of ``|e_p|`` over ``[t0, t1]``; shape ``(R, n)``."""
        mask = (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)
        return self.ep_norm[:, mask, :].max(axis=1)


def monte_carlo(fc: FormationConfig, sc: SimConfig, mc: MonteCarloConfig, seeds: Sequence[int] | None = None) -> MonteCarloSummary:
    """Repeated noisy runs with random plant parameters and initial states.

    Diverged runs are reported and excluded from the envelopes. ``seeds``
    overrides the per-run child seeds derived from ``mc.master_seed``.
    """
    n_runs = mc.n_runs if seeds is None else len(seeds)
    if seeds is None:
        seeds = [child_seed(mc.master_seed, r) for r in range(n_runs)]
    jobs = [(fc, sc, mc, r, int(s)) for r, s in enumerate(seeds)]
    if mc.n_jobs > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=mc.n_jobs) as pool:
            results = list(pool.map(_run_one_star, jobs, chunksize=max(1, n_runs // (4 * mc.n_jobs))))
    else:
        results = [run_one(*job) for job in jobs]
    results.sort(key=lambda r: r.run)

    done = [r for r in results if r.ep_norm is not None]
    n = fc.n_agents
    if done:
        stack = np.stack([r.ep_norm for r in done])
        t = np.arange(stack.shape[1]) * sc.record_dt
        emin, emed, emax = stack.min(axis=0), np.median(stack, axis=0), stack.max(axis=0)
    else:
        stack = np.zeros((0, 0, n))
        t = np.zeros(0)
        emin = emed = emax = np.zeros((0, n))
    return MonteCarloSummary(
        t=t, emin=emin, emedian=emed, emax=emax, ep_norm=stack,
        runs=[r.run for r in done],
        seeds=[r.seed for r in results],
        diverged=[(r.run, r.diverged_at) for r in results if r.ep_norm is None],
    )
