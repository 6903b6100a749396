"""Numerical certificates for the kinematic-level design.

Covers the persistency-of-excitation level of the reference yaw rate, the
admissible bound on its magnitude, the L2-gain constants of the two
interconnected error subsystems together with the small-gain verdict, and the
Lyapunov/storage functions used to check those claims along trajectories.

Integrals use the composite trapezoid rule on uniformly spaced samples.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .controller import Gains, min_kdx, omega_cap
from .errors import WindowTooLong
from .formation import FormationConfig, formation_errors
from .vessel import VesselParams


@dataclass(frozen=True)
class PEMetrics:
    mu: float
    T_window: float
    omega_bar_d: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"PEMetrics.mu must be > 0, got {self.mu!r}")
        if not self.T_window > 0:
            raise ValueError("PEMetrics.T_window must be > 0")
        if not self.omega_bar_d >= 0:
            raise ValueError("PEMetrics.omega_bar_d must be >= 0")


@dataclass(frozen=True)
class GainConstants:
    alpha: float
    beta: float
    gamma1: float
    gamma2: float
    product: float
    limit_rhs: float
    above_rhs: float
    # a weight strictly between gamma1 and 1/gamma2; None unless product < 1
    lam: float | None = None

    @property
    def smallgain_ok(self) -> bool:
        return self.product < 1.0


# ---------------------------------------------------------------------------
# excitation


def _cumtrapz(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros(len(y))
    np.cumsum(0.5 * dx * (y[1:] + y[:-1]), out=out[1:])
    return out


def _window_samples(n_samples: int, T: float, dt: float) -> int:
    n = int(round(T / dt))
    span = (n_samples - 1) * dt
    if n < 1 or n > n_samples - 1:
        raise WindowTooLong(f"window T={T:g} s does not fit in a span of {span:g} s")
    return n


def pe_level(omega_samples, T: float, dt: float) -> float:
    """Smallest integral of ``omega^2`` over any window of length ``T``.

    ``T`` is rounded to a whole number of samples.
    """
    w = np.asarray(omega_samples, dtype=float)
    n = _window_samples(len(w), T, dt)
    c = _cumtrapz(w * w, dt)
    return float(np.min(c[n:] - c[:-n]))


def omega_bar(omega_samples, omega_dot_samples) -> float:
    w = np.asarray(omega_samples, dtype=float)
    wd = np.asarray(omega_dot_samples, dtype=float)
    if w.size == 0 or wd.size == 0:
        raise ValueError("omega_bar needs nonempty sample buffers")
    return float(max(np.max(np.abs(w)), np.max(np.abs(wd))))


def pe_metrics(omega_samples, omega_dot_samples, T: float, dt: float) -> PEMetrics:
    n = _window_samples(len(omega_samples), T, dt)
    return PEMetrics(pe_level(omega_samples, T, dt), n * dt, omega_bar(omega_samples, omega_dot_samples))


def feasibility_bound(p: VesselParams, pe: PEMetrics) -> float:
    """Largest admissible ``omega_bar_d`` for the given excitation level."""
    mu, T = pe.mu, pe.T_window
    return (p.d22 / p.m11 * mu**2 / (4.0 * mu * T + T**2)) ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# gain constants


def least_alpha(pe: PEMetrics, kx: float) -> float:
    wb, T, mu = pe.omega_bar_d, pe.T_window, pe.mu
    return max(wb, 2.0 * wb**2 / kx * (1.0 + T / (4.0 * mu) * (1.0 + kx) ** 2))


def gain_constants(p: VesselParams, pe: PEMetrics, kx: float) -> GainConstants:
    """L2-gain constants of the position-error and sway-error subsystems.

    ``alpha`` is taken at its least admissible value. ``above_rhs`` and
    ``limit_rhs`` are the finite-``kx`` and ``kx -> 0`` upper bounds on the
    gain product; note that ``above_rhs`` carries ``(1 + kx^2)`` where
    ``alpha`` carries ``(1 + kx)^2``.
    """
    if not kx > 0:
        raise ValueError("kx must be > 0")
    wb, T, mu = pe.omega_bar_d, pe.T_window, pe.mu
    alpha = least_alpha(pe, kx)
    beta = 1.0 + 2.0 * wb**2 * T + alpha + wb
    gamma1 = 2.0 * T * beta / mu
    gamma2 = p.m11 * kx * wb / p.d22
    product = gamma1 * gamma2
    lead = 2.0 * T * p.m11 / (mu * p.d22) * kx * wb
    above = lead * (1.0 + 2.0 * wb**2 * T + 2.0 * wb + 2.0 * wb**2 / kx * (1.0 + T / (4.0 * mu) * (1.0 + kx**2)))
    limit = 4.0 * T * p.m11 * wb**3 / (mu * p.d22) * (1.0 + T / (4.0 * mu))
    lam = math.sqrt(gamma1 / gamma2) if product < 1.0 and gamma2 > 0 else None
    return GainConstants(alpha, beta, gamma1, gamma2, product, limit, above, lam)


def kx_bar(p: VesselParams, pe: PEMetrics) -> float:
    """Supremum of the ``kx`` for which the gain product stays below one (0 if none)."""
    f = lambda k: gain_constants(p, pe, k).product - 1.0  # noqa: E731
    lo = 1e-12
    if f(lo) >= 0:
        return 0.0
    hi = 1e-3
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            return math.inf
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-12)


# ---------------------------------------------------------------------------
# Lyapunov apparatus


def upsilon(omega_samples, t: float, pe: PEMetrics, dt: float) -> float:
    """Time-varying weight ``1 + 2 wb^2 T - (2/T) int_t^{t+T} int_t^m omega^2 ds dm``."""
    w = np.asarray(omega_samples, dtype=float)
    n = int(round(pe.T_window / dt))
    k = int(round(t / dt))
    if k < 0 or k + n > len(w) - 1:
        raise WindowTooLong(f"[{t:g}, {t + pe.T_window:g}] is not covered by the samples")
    seg = w[k:k + n + 1]
    inner = _cumtrapz(seg * seg, dt)
    outer = float(np.sum(0.5 * dt * (inner[1:] + inner[:-1])))
    T = n * dt
    return 1.0 + 2.0 * pe.omega_bar_d**2 * T - 2.0 / T * outer


def upsilon_series(omega_samples, pe: PEMetrics, dt: float) -> np.ndarray:
    """``upsilon`` at every sample whose window is fully covered; length ``len(omega) - n``."""
    w = np.asarray(omega_samples, dtype=float)
    n = _window_samples(len(w), pe.T_window, dt)
    T = n * dt
    c = _cumtrapz(w * w, dt)
    c2 = _cumtrapz(c, dt)
    k = np.arange(len(w) - n)
    double = c2[k + n] - c2[k] - T * c[k]
    return 1.0 + 2.0 * pe.omega_bar_d**2 * T - 2.0 / T * double


class LyapunovValues(NamedTuple):
    W1: np.ndarray | float
    V1: np.ndarray | float
    V2: np.ndarray | float
    V_strict: np.ndarray | float
    V_vel: np.ndarray | float
    U: np.ndarray | float


def lyapunov_suite(e, vbar_y, vtilde, consts: GainConstants, pe: PEMetrics, p: VesselParams,
                   omega_d, upsilon_value) -> LyapunovValues:
    """Evaluate every Lyapunov and storage function of a single leader-follower pair.

    Arguments broadcast, so stacked histories (``e`` of shape ``(K, 3)``) work.
    ``V_strict`` is NaN unless the small-gain condition holds.
    """
    e = np.asarray(e, dtype=float)
    vt = np.asarray(vtilde, dtype=float)
    vbar_y = np.asarray(vbar_y, dtype=float)
    ex, ey = e[..., 0], e[..., 1]
    W1 = 0.5 * (upsilon_value + consts.alpha) * (ex**2 + ey**2) - omega_d * ex * ey
    V1 = 2.0 * pe.T_window / pe.mu * W1
    V2 = p.m22 / (2.0 * p.d22) * vbar_y**2
    V_strict = V1 + consts.lam**2 * V2 if consts.lam is not None else np.full_like(V1, np.nan)
    V_vel = 0.5 * (p.m11 * vt[..., 0] ** 2 + p.m22 * vt[..., 1] ** 2 + p.m33 * vt[..., 2] ** 2)
    U = np.sum(e**2, axis=-1) + np.sum(vt**2, axis=-1) + vbar_y**2
    out = LyapunovValues(W1, V1, V2, V_strict, V_vel, U)
    if np.ndim(W1) == 0:
        return LyapunovValues(*(float(x) for x in out))
    return out


def w1_bounds(ep_sq, pe: PEMetrics, consts: GainConstants):
    """Quadratic sandwich ``(|e_p|^2 / 2, (1 + 2 wb^2 T + alpha + wb) |e_p|^2 / 2)`` on ``W1``."""
    wb, T = pe.omega_bar_d, pe.T_window
    return 0.5 * ep_sq, 0.5 * (1.0 + 2.0 * wb**2 * T + consts.alpha + wb) * ep_sq


class CascadeFields(NamedTuple):
    A_ep: np.ndarray  # (2,)
    B1: np.ndarray  # (2,)
    B2: float
    F: np.ndarray  # (4,) rows ex, ey, vbar_y, etheta


def cascade_fields(xi, leader, g: Gains, p: VesselParams) -> CascadeFields:
    """Nominal drift of one pair's error coordinates ``xi = (ex, ey, vbar_y, etheta)``.

    ``leader`` holds the reference signals ``(vx_d, vy_d, omega_d)`` at the same instant.
    """
    ex, ey, vb, eth = map(float, xi)
    vxd, vyd, wd = map(float, leader)
    c, s, th = math.cos(eth), math.sin(eth), math.tanh(eth)
    kx, kt = g.kx, g.ktheta
    r = p.m11 / p.m22
    A_ep = np.array([-kx * ex + wd * ey, -wd * ex])
    B1 = np.array([
        vxd * (1.0 - c) - vyd * s - kt * ey * th,
        vxd * s + vyd * (1.0 - c) + kt * ex * th,
    ])
    B2 = (vxd - kx * ex) * r * kt * th
    F = np.array([
        A_ep[0] + B1[0],
        A_ep[1] + vb + B1[1],
        -p.d22 / p.m22 * vb + r * kx * wd * ex + B2,
        -kt * th,
    ])
    return CascadeFields(A_ep, B1, float(B2), F)


def reduced_field(ep, vbar_y, omega_d, kx: float, p: VesselParams):
    """Right-hand side of the feedback pair obtained with ``etheta = 0``: ``(ep', vbar_y')``."""
    ex, ey = ep
    dep = np.array([-kx * ex + omega_d * ey, -omega_d * ex + vbar_y])
    dvb = -p.d22 / p.m22 * vbar_y + p.m11 / p.m22 * kx * omega_d * ex
    return dep, dvb


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class AnalysisConfig:
    window: float = 20.94
    window_grid: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0, 60.0)
    horizon: float = 300.0
    dt: float = 1e-3
    sample_stride: int = 10

    def __post_init__(self):
        object.__setattr__(self, "window_grid", tuple(float(x) for x in self.window_grid))
        if not self.window > 0 or any(x <= 0 for x in self.window_grid):
            raise ValueError("AnalysisConfig windows must be > 0")
        if not self.horizon >= 2 * self.window:
            raise ValueError("AnalysisConfig.horizon must cover at least two windows")
        if not self.dt > 0 or self.sample_stride < 1:
            raise ValueError("AnalysisConfig.dt must be > 0 and sample_stride >= 1")

    @property
    def sample_dt(self) -> float:
        return self.dt * self.sample_stride


@dataclass
class StabilityReport:
    pe: PEMetrics
    constants: GainConstants
    feasibility_bound_rhs: float
    kx: float
    kx_bar: float
    pe_ok: bool
    bound_ok: bool
    smallgain_ok: bool
    kdx_ok: bool
    best_window: dict
    pe_grid: list[dict] = field(default_factory=list)
    agents: list[dict] = field(default_factory=list)
    kx_scan: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pe"]["omega_bar_d"] = self.pe.omega_bar_d
        out["constants"]["smallgain_ok"] = self.constants.smallgain_ok
        return out


def _window_entry(p, omega, omega_dot, T, dt):
    pe = pe_metrics(omega, omega_dot, T, dt)
    bound = feasibility_bound(p, pe)
    return pe, {"T": pe.T_window, "mu": pe.mu, "bound": bound, "margin": bound - pe.omega_bar_d}


def certify(fc: FormationConfig, ac: AnalysisConfig = AnalysisConfig(), kx_grid: Sequence[float] | None = None,
            signals=None) -> StabilityReport:
    """Check every hypothesis of the kinematic-level design on the configured reference.

    The headline PE pair uses ``ac.window``; ``best_window`` is the grid entry
    with the widest feasibility margin. Gain constants use the largest ``kx``
    among the followers, which is the worst case since the product grows with ``kx``.
    """
    if signals is None:
        from .sim import reference_signals

        _, omega, omega_dot = reference_signals(fc, ac.horizon, ac.dt, ac.sample_stride)
    else:
        omega, omega_dot = signals
    dt = ac.sample_dt
    span = (len(omega) - 1) * dt
    p = fc.reference_params

    pe, headline = _window_entry(p, omega, omega_dot, ac.window, dt)
    grid = []
    for T in sorted(set(ac.window_grid) | {ac.window}):
        if 2 * T > span + 1e-9:
            continue
        grid.append(_window_entry(p, omega, omega_dot, T, dt)[1])
    best = max(grid, key=lambda row: row["margin"]) if grid else headline

    bound = headline["bound"]
    kx = max(g.kx for g in fc.gains)
    consts = gain_constants(p, pe, kx)

    agents = []
    for i, (g, ap) in enumerate(zip(fc.gains, fc.params), start=1):
        w_m = omega_cap(g, pe.omega_bar_d)
        c_i = gain_constants(ap, pe, g.kx)
        bound_kdx = min_kdx(ap, w_m)
        agents.append({
            "agent": i, "kx": g.kx, "ktheta": g.ktheta, "kdx": g.kdx, "komega": g.komega,
            "omega_M": w_m, "min_kdx": bound_kdx, "kdx_ok": g.kdx >= bound_kdx,
            "gamma2": c_i.gamma2, "product": c_i.product, "above_rhs": c_i.above_rhs,
            "smallgain_ok": c_i.smallgain_ok,
        })
        g.check(ap, pe.omega_bar_d)

    scan = []
    for k in kx_grid or ():
        c = gain_constants(p, pe, float(k))
        scan.append({"kx": float(k), "alpha": c.alpha, "gamma1": c.gamma1, "gamma2": c.gamma2,
                     "product": c.product, "above_rhs": c.above_rhs, "smallgain_ok": c.smallgain_ok})

    return StabilityReport(
        pe=pe, constants=consts, feasibility_bound_rhs=bound, kx=kx, kx_bar=kx_bar(p, pe),
        pe_ok=pe.mu > 0, bound_ok=pe.omega_bar_d <= bound, smallgain_ok=consts.smallgain_ok,
        kdx_ok=all(a["kdx_ok"] for a in agents), best_window=best, pe_grid=grid, agents=agents,
        kx_scan=scan,
    )


# ---------------------------------------------------------------------------
# trajectory diagnostics


def diagnose(t, states, fc: FormationConfig, pe: PEMetrics, consts: GainConstants,
             settle_tol: float = 1e-3, step_tol: float = 1e-6) -> list[dict]:
    """Lyapunov checks along a recorded run, one dict per follower.

    ``states`` is ``(K, n + 1, 7)`` on the uniform grid ``t``. Upsilon needs a
    full window ahead, so the tail of length ``T`` is not assessed.
    """
    t = np.asarray(t, dtype=float)
    dt = float(t[1] - t[0])
    omega = states[:, 0, 5]
    ups = upsilon_series(omega, pe, dt)
    m = len(ups)
    err = formation_errors(states, fc)
    out = []
    for i in range(fc.n_agents):
        p = fc.params[i]
        e, vb, vt = err.e[:m, i], err.vbar_y[:m, i], err.vtilde[:m, i]
        lv = lyapunov_suite(e, vb, vt, consts, pe, p, omega[:m], ups)
        ep_sq = e[:, 0] ** 2 + e[:, 1] ** 2
        lo, hi = w1_bounds(ep_sq, pe, consts)
        d_vel = np.diff(lv.V_vel)
        settled = (np.abs(e[:, 2]) < settle_tol) & (np.linalg.norm(vt, axis=-1) < settle_tol)
        idx = int(np.argmax(settled)) if settled.any() else None
        row = {
            "agent": i + 1,
            "upsilon_in_bounds": bool(np.all((ups >= 1 + pe.omega_bar_d**2 * pe.T_window - 1e-9)
                                             & (ups <= 1 + 2 * pe.omega_bar_d**2 * pe.T_window + 1e-9))),
            "w1_sandwich_ok": bool(np.all((lv.W1 >= lo - 1e-12) & (lv.W1 <= hi + 1e-12))),
            "v_vel_max_increase": float(d_vel.max()) if d_vel.size else 0.0,
            "v_vel_nonincreasing": bool(np.all(d_vel <= step_tol)),
            "settle_time": float(t[idx]) if idx is not None else None,
            "final_ep_norm": float(np.sqrt(ep_sq[-1])),
            "final_etheta": float(e[-1, 2]),
        }
        if consts.lam is not None and idx is not None:
            dv = np.diff(lv.V_strict[idx:])
            row["v_strict_max_increase"] = float(dv.max()) if dv.size else 0.0
        out.append(row)
    return out
