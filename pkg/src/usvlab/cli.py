"""Command-line entry points: ``simulate``, ``montecarlo``, ``check-gains`` and ``analyze``.

Exit codes: 0 success, 1 validation or usage error, 2 divergence.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import Scenario, canonical_json, parse_config
from .controller import GainWarning
from .errors import ConfigError, Diverged, IoError, WindowTooLong
from .io import (jsonable, read_trajectory, write_config_copy, write_envelopes, write_json, write_manifest, write_report,
                 write_trajectory)
from .sim import monte_carlo, run_simulation
from .stability import certify, diagnose, gain_constants, pe_metrics
from .vessel import reference_accel

log = logging.getLogger("usvlab")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2
DEFAULT_SEED = 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _kx_grid(text: str) -> list[float]:
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:n, got {text!r}") from None
    if n < 1 or not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"need 0 < lo <= hi and n >= 1, got {text!r}")
    return np.linspace(lo, hi, n).tolist()


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="usvlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="single closed-loop run")
    p.add_argument("--config", required=True, help="JSON file or bundled scenario name")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)

    p = sub.add_parser("montecarlo", help="randomized robustness batch")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--runs", type=_nonneg_int)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--t-end", type=float)

    p = sub.add_parser("check-gains", help="certify gains against the stability conditions")
    p.add_argument("--config", required=True)
    p.add_argument("--kx-grid", type=_kx_grid, metavar="LO:HI:N")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("analyze", help="PE metrics and Lyapunov diagnostics of a stored run")
    p.add_argument("--trajectory", required=True, type=Path)
    p.add_argument("--config", help="defaults to config.json next to the trajectory")
    p.add_argument("--out", type=Path)
    return ap


def resolve_seed(flag, config_seed=None) -> int:
    """flag > USVLAB_SEED > config > default."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("USVLAB_SEED")
    if env not in (None, ""):
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"USVLAB_SEED: must be an integer, got {env!r}") from None
        if value < 0:
            raise ConfigError("USVLAB_SEED: must be >= 0")
        return value
    return DEFAULT_SEED if config_seed is None else int(config_seed)


def _with_sim_overrides(s: Scenario, dt=None, t_end=None) -> Scenario:
    sc = s.sim
    try:
        if dt is not None:
            noise_ts = sc.noise_sample_time if sc.noise_sample_time >= dt else dt
            sc = replace(sc, dt=dt, noise_sample_time=noise_ts)
        if t_end is not None:
            sc = replace(sc, t_end=t_end)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return s._replace(sim=sc)


def _now() -> _dt.datetime:
    return _dt.datetime.now(_dt.timezone.utc)


def cmd_simulate(args, argv) -> int:
    started = _now()
    s = _with_sim_overrides(parse_config(args.config), args.dt, args.t_end)
    seed = resolve_seed(args.seed)
    try:
        traj = run_simulation(s.formation, s.sim, seed=seed)
    except Diverged as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    canonical = canonical_json(s)
    files = write_trajectory(traj, args.out)
    files.append(write_config_copy(canonical, args.out))
    write_manifest(args.out, canonical_config=canonical, seed=seed, argv=argv, command="simulate",
                   started=started, files=files)
    ep, eth = traj.ep_norm[-1], traj.etheta[-1]
    for i in range(s.formation.n_agents):
        print(f"agent {i + 1}: |e_p|={ep[i]:.3e} m  e_theta={eth[i]:+.3e} rad at t={traj.t[-1]:g} s")
    return EXIT_OK


def cmd_montecarlo(args, argv) -> int:
    started = _now()
    s = parse_config(args.config)
    if args.t_end is not None:
        s = _with_sim_overrides(s, t_end=args.t_end)
    mc = s.montecarlo
    seed = resolve_seed(args.seed, mc.master_seed)
    try:
        mc = replace(mc, master_seed=seed,
                     n_runs=mc.n_runs if args.runs is None else args.runs,
                     n_jobs=mc.n_jobs if args.jobs is None else args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    s = s._replace(montecarlo=mc)
    summary = monte_carlo(s.formation, s.montecarlo_sim(), mc)
    canonical = canonical_json(s)
    files = write_envelopes(summary, args.out)
    files.append(write_config_copy(canonical, args.out))
    write_manifest(args.out, canonical_config=canonical, seed=seed, argv=argv, command="montecarlo",
                   started=started, files=files)
    print(f"{summary.n_completed}/{len(summary.seeds)} runs completed")
    if summary.n_completed:
        final = summary.final_error_stats()
        print("final |e_p| max per agent: " + " ".join(f"{v:.3e}" for v in final["max"]))
    if summary.diverged:
        for run, t in summary.diverged:
            log.error("run %d diverged at t=%.3f s", run, t)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_check_gains(args, argv) -> int:
    started = _now()
    s = parse_config(args.config)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GainWarning)
        report = certify(s.formation, s.analysis, kx_grid=args.kx_grid)
    for w in caught:
        log.warning("%s", w.message)
    pe, c = report.pe, report.constants
    print(f"mu={pe.mu:.4f}  T={pe.T_window:.4f}  omega_bar_d={pe.omega_bar_d:.4f}")
    print(f"feasibility bound={report.feasibility_bound_rhs:.4f}  bound_ok={report.bound_ok}")
    print(f"kx={report.kx:g}  gamma1={c.gamma1:.6g}  gamma2={c.gamma2:.6g}  product={c.product:.4f}  "
          f"smallgain_ok={report.smallgain_ok}  kx_bar={report.kx_bar:.5f}")
    print(f"above_rhs={c.above_rhs:.4f}  limit_rhs={c.limit_rhs:.4f}  kdx_ok={report.kdx_ok}")
    bw = report.best_window
    print(f"widest margin: T={bw['T']:g} mu={bw['mu']:.4f} bound={bw['bound']:.4f} margin={bw['margin']:.4f}")
    if args.out is not None:
        canonical = canonical_json(s)
        files = [write_report(report, args.out), write_config_copy(canonical, args.out)]
        write_manifest(args.out, canonical_config=canonical, seed=None, argv=argv, command="check-gains",
                       started=started, files=files)
    return EXIT_OK


def _leader_yaw_accel(t, states, fc) -> np.ndarray:
    """Analytic yaw acceleration of the virtual leader from its stored state."""
    return np.array([reference_accel(tk, states[k, 0, 3:6], fc.reference, fc.reference_params)[2]
                     for k, tk in enumerate(t)])


def cmd_analyze(args, argv) -> int:
    started = _now()
    cfg_path = args.config if args.config is not None else args.trajectory.with_name("config.json")
    s = parse_config(cfg_path)
    fc = s.formation
    t, states, _ = read_trajectory(args.trajectory, fc)
    if len(t) < 3:
        raise ConfigError(f"{args.trajectory}: need at least three records")
    dt = float(t[1] - t[0])
    omega = states[:, 0, 5]
    omega_dot = _leader_yaw_accel(t, states, fc)
    try:
        pe = pe_metrics(omega, omega_dot, s.analysis.window, dt)
    except WindowTooLong as exc:
        raise ConfigError(f"analysis.window: {exc}") from None
    kx = max(g.kx for g in fc.gains)
    consts = gain_constants(fc.reference_params, pe, kx)
    agents = diagnose(t, states, fc, pe, consts)
    result = {"pe": {"mu": pe.mu, "T_window": pe.T_window, "omega_bar_d": pe.omega_bar_d},
              "constants": dict(asdict(consts), smallgain_ok=consts.smallgain_ok),
              "agents": agents}
    print(json.dumps(jsonable(result), indent=2, sort_keys=True))
    if args.out is not None:
        files = [write_json(result, Path(args.out) / "analysis.json")]
        canonical = canonical_json(s)
        write_manifest(args.out, canonical_config=canonical, seed=None, argv=argv, command="analyze",
                       started=started, files=files)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "montecarlo": cmd_montecarlo, "check-gains": cmd_check_gains,
            "analyze": cmd_analyze}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (ConfigError, FileNotFoundError, IoError) as exc:
        print(f"usvlab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Diverged as exc:
        print(f"usvlab: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
