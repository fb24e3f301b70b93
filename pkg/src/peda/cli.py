"""Command-line entry point and file orchestration for all pipelines.

Subcommands: spinup, truth, obs, assimilate, evaluate, gradcheck, verify,
twin. Every run writes into a directory named <config-hash>-<timestamp>
under --out and starts by saving the fully resolved configuration, so a
run directory can be re-run bit-for-bit (single-threaded outputs are
deterministic; the timestamp only names the directory).
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .assim import AssimProblem, MinimizerLog, assimilate, cost
from .config import ConfigError, RunConfig, config_hash, emit_config, parse_config
from .dynamics import (
    DiagnosticsRecorder,
    ModelConfig,
    Trajectory,
    chain_recorders,
    integrate,
    mode_state,
    random_state,
)
from .floats import FloatSet, ObsSet
from .grid import NormParams, StateField, read_state, write_state
from .tlm_adjoint import grad_cost
from .twin import (
    TwinConfig,
    make_background,
    rms_error,
    run_twin,
    seed_floats,
    synth_obs,
    truth_run,
    write_diagnostics_csv,
    write_error_csv,
)
from .verify import (
    check_energy_inequality,
    check_nonlinear_bound,
    check_w_bound,
    picard_vs_nonlinear,
)

SUBCOMMANDS = ("spinup", "truth", "obs", "assimilate", "evaluate", "gradcheck",
               "verify", "twin")


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run directories and common output helpers
# ---------------------------------------------------------------------------

def make_run_dir(rc: RunConfig, out: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    d = Path(out) / f"{config_hash(rc)}-{stamp}"
    n = 0
    cand = d
    while cand.exists():
        n += 1
        cand = Path(str(d) + f"-{n}")
    cand.mkdir(parents=True)
    (cand / "resolved.cfg").write_text(emit_config(rc))
    return cand


def _write_trajectory(dirpath: Path, traj: Trajectory, every: int) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    last = len(traj.states) - 1
    for n, X in enumerate(traj.states):
        if n % every == 0 or n == last:
            write_state(dirpath, f"state_{n:06d}", X)


def _read_trajectory(dirpath: Path):
    d = Path(dirpath)
    if not d.is_dir():
        raise CliError(f"missing trajectory directory {d}")
    idx = sorted(int(p.name.split("_")[1]) for p in d.glob("state_*_u.peda"))
    if not idx:
        raise CliError(f"no state snapshots under {d}")
    return idx, [read_state(d, f"state_{n:06d}") for n in idx]


# ---------------------------------------------------------------------------
# subcommand pipelines
# ---------------------------------------------------------------------------

def _cmd_spinup(rc: RunConfig, rundir: Path) -> None:
    tc = rc.twin_config()
    mc = tc.model_config()
    diag = DiagnosticsRecorder(tc.dt)
    X = integrate(StateField.zeros(mc.grid), mc, tc.spinup_steps, recorder=diag)
    write_state(rundir, "spinup", X)
    write_diagnostics_csv(rundir / "diagnostics.csv", diag)


def _cmd_truth(rc: RunConfig, rundir: Path) -> None:
    tc = rc.twin_config()
    diag = DiagnosticsRecorder(tc.dt)
    traj, _ = truth_run(tc, diag)
    _write_trajectory(rundir / "truth", traj, rc.run_record_every)
    write_diagnostics_csv(rundir / "diagnostics.csv", diag)


def _cmd_obs(rc: RunConfig, rundir: Path) -> None:
    tc = rc.twin_config()
    traj, _ = truth_run(tc)
    obs, _ = synth_obs(traj, tc)
    obs.to_csv(rundir / "obs.csv")


def _cmd_assimilate(rc: RunConfig, rundir: Path) -> None:
    tc = rc.twin_config()
    mc = tc.model_config()
    obs_path = rc.paths_obs_file
    traj, _ = truth_run(tc)
    if obs_path:
        obs = ObsSet.from_csv(obs_path)
        fs0 = seed_floats(tc)
    else:
        obs, fs0 = synth_obs(traj, tc)
    if rc.paths_background_dir:
        Xb = read_state(Path(rc.paths_background_dir), "background")
        if Xb.grid.shape != mc.grid.shape:
            raise CliError(f"background grid {Xb.grid.shape} does not match "
                           f"configured grid {mc.grid.shape}")
    else:
        Xb = make_background(traj.states[0], tc.s_b)
    problem = AssimProblem(
        mc, tc.window_steps, Xb, fs0, obs, omega=tc.omega,
        sigma2_u=tc.sigma_u**2, sigma2_v=tc.sigma_v**2,
        sigma2_theta=tc.sigma_theta**2, freeze_theta=tc.freeze_theta,
        background_norm=rc.assim_background_norm, norm_params=rc.norm_params())
    Xa, log = assimilate(problem, tc.outer_loops, tc.inner_iters, tc.cg_tol)
    write_state(rundir, "analysis", Xa)
    write_state(rundir, "background", Xb)
    log.to_csv(rundir / "minlog.csv")
    if rc.run_plots:
        from .plots import plot_minimization
        plot_minimization(log, rundir / "fig_minimization.png")


def _cmd_evaluate(rc: RunConfig, rundir: Path) -> None:
    if not rc.paths_run_dir or not rc.paths_ref_dir:
        raise CliError("evaluate needs [paths] run_dir and ref_dir")
    idx_a, states_a = _read_trajectory(Path(rc.paths_run_dir))
    idx_b, states_b = _read_trajectory(Path(rc.paths_ref_dir))
    if idx_a != idx_b:
        raise CliError(f"snapshot indices differ: {idx_a[:3]}... vs {idx_b[:3]}...")
    ga, gb = states_a[0].grid, states_b[0].grid
    if ga.shape != gb.shape:
        raise CliError(f"snapshot grids differ: {ga.shape} vs {gb.shape}")
    series = rms_error(states_a, states_b, rc.model_dt)
    with open(rundir / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "E_u", "E_v"])
        for i, n in enumerate(idx_a):
            w.writerow([repr(n * rc.model_dt), repr(float(series.e_u[i])),
                        repr(float(series.e_v[i]))])


def _cmd_gradcheck(rc: RunConfig, rundir: Path) -> None:
    tc = rc.twin_config()
    mc = tc.model_config()
    traj, _ = truth_run(tc)
    obs, fs0 = synth_obs(traj, tc)
    Xb = make_background(traj.states[0], tc.s_b)
    problem = AssimProblem(
        mc, tc.window_steps, Xb, fs0, obs, omega=tc.omega,
        sigma2_u=tc.sigma_u**2, sigma2_v=tc.sigma_v**2,
        sigma2_theta=tc.sigma_theta**2, freeze_theta=tc.freeze_theta,
        background_norm=rc.assim_background_norm, norm_params=rc.norm_params())
    cb, grad = grad_cost(Xb, problem)
    eps = rc.gradcheck_fd_eps
    rows = []
    for k in range(rc.gradcheck_directions):
        d = random_state(mc.grid, seed=[rc.run_seed, 90, k], amplitude=1.0,
                         project=False)
        d = problem.apply_control_mask(d)
        d = (1.0 / d.norm()) * d
        jp = cost(Xb + eps * d, problem).J
        jm = cost(Xb + (-eps) * d, problem).J
        fd = (jp - jm) / (2.0 * eps)
        an = grad.dot(d)
        rel = abs(an - fd) / max(abs(an), 1e-300)
        rows.append((k, an, fd, rel))
    with open(rundir / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "analytic", "fd", "rel_error"])
        for k, an, fd, rel in rows:
            w.writerow([k, repr(an), repr(fd), repr(rel)])
    worst = max(r[3] for r in rows)
    print(f"gradcheck: {len(rows)} directions, worst relative error {worst:.3e}")


def _cmd_verify(rc: RunConfig, rundir: Path) -> None:
    which = rc.verify_check
    g = rc.grid()
    if which in ("all", "wbound"):
        from .grid import Grid
        gw = Grid(rc.grid_nx, rc.grid_ny, rc.verify_wbound_nz, rc.grid_a)
        with open(rundir / "wbound.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "lhs", "rhs", "margin", "pass"])
            npass = 0
            for s in range(rc.verify_samples):
                X = random_state(gw, seed=[rc.run_seed, 10, s],
                                 amplitude=rc.verify_amplitude)
                lhs, rhs, ok = check_w_bound(X)
                npass += ok
                w.writerow([s, repr(lhs), repr(rhs), repr(rhs - lhs),
                            int(ok)])
        print(f"wbound: {npass}/{rc.verify_samples} pass")
    if which in ("all", "energy"):
        p = rc.norm_params()
        mc = ModelConfig(g, rc.phys(), dt=rc.model_dt, linear=True)
        with open(rundir / "energy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "time", "lhs", "rhs", "margin"])
            allpass = True
            for s in range(rc.verify_samples):
                X0 = random_state(g, seed=[rc.run_seed, 20, s],
                                  amplitude=rc.verify_amplitude)
                F = random_state(g, seed=[rc.run_seed, 21, s],
                                 amplitude=rc.verify_amplitude, project=False)
                rep = check_energy_inequality(X0, F, mc, rc.verify_t_final, p)
                allpass = allpass and rep.passed
                for i in range(len(rep.times)):
                    w.writerow([s, repr(float(rep.times[i])), repr(float(rep.lhs[i])),
                                repr(float(rep.rhs[i])),
                                repr(float(rep.rhs[i] - rep.lhs[i]))])
        print(f"energy: {'pass' if allpass else 'FAIL'} over "
              f"{rc.verify_samples} runs (C1..C4 = {rep.C1:.6g}, {rep.C2:.6g}, "
              f"{rep.C3:.6g}, {rep.C4:.6g})")
    if which in ("all", "nlbound"):
        with open(rundir / "nlbound.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "ratio_u", "ratio_v", "ratio_theta",
                        "max_ratio", "degenerate"])
            worst = 0.0
            for s in range(rc.verify_samples):
                X1 = mode_state(g, seed=[rc.run_seed, 30, s],
                                amplitude=rc.verify_amplitude)
                X2 = mode_state(g, seed=[rc.run_seed, 31, s],
                                amplitude=rc.verify_amplitude)
                rep = check_nonlinear_bound(X1, X2, rc.norms_m)
                worst = max(worst, rep.max_ratio)
                w.writerow([s] + [repr(r) for r in rep.ratios]
                           + [repr(rep.max_ratio), int(rep.degenerate)])
        print(f"nlbound: max ratio {worst:.6e} over {rc.verify_samples} pairs")
    if which in ("all", "picard"):
        mc = ModelConfig(g, rc.phys(), dt=rc.model_dt, linear=False)
        X0 = random_state(g, seed=[rc.run_seed, 40], amplitude=rc.verify_amplitude)
        run, rel = picard_vs_nonlinear(X0, mc, rc.verify_picard_t,
                                       rc.verify_picard_max_n, rc.verify_picard_tol)
        with open(rundir / "picard.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "ratio"])
            for i, r in enumerate(run.residuals, start=1):
                ratio = run.residuals[i - 1] / run.residuals[i - 2] \
                    if i >= 2 and run.residuals[i - 2] > 0 else float("nan")
                w.writerow([i, repr(r), repr(ratio)])
        print(f"picard: converged={run.converged} after {run.iterations} "
              f"iterations, rel L2 vs nonlinear = {rel:.3e}")


def _cmd_twin(rc: RunConfig, rundir: Path) -> None:
    tc = rc.twin_config()
    truth_diag = DiagnosticsRecorder(tc.dt)
    result = run_twin(tc, truth_diagnostics=truth_diag)
    w = result.last

    w.obs.to_csv(rundir / "obs.csv")
    write_error_csv(rundir / "errors.csv", w.errors_bg, w.errors_an)
    w.minlog.to_csv(rundir / "minlog.csv")
    write_diagnostics_csv(rundir / "diagnostics_truth.csv", truth_diag)
    for name, traj in (("background", w.bg_traj), ("analysis", w.an_traj)):
        diag = DiagnosticsRecorder(tc.dt)
        for n, X in enumerate(traj.states):
            diag(n, X)
        write_diagnostics_csv(rundir / f"diagnostics_{name}.csv", diag)
    write_state(rundir, "truth_start", w.truth_traj.states[0])
    write_state(rundir, "background", w.problem.Xb)
    write_state(rundir, "analysis", w.Xa)

    if rc.run_plots:
        from .plots import plot_error_series, plot_minimization, plot_surface_speed
        plot_minimization(w.minlog, rundir / "fig_minimization.png")
        plot_error_series(w.errors_bg, w.errors_an, rundir / "fig_errors.png")
        level = tc.nz - 2
        plot_surface_speed(
            {"truth": w.truth_traj.states[-1],
             "background": w.bg_traj.states[-1],
             "analysis": w.an_traj.states[-1]},
            level, rundir / "fig_surface_speed.png")

    print(f"twin: Jo {w.Jo_initial:.6g} -> {w.Jo_final:.6g} "
          f"(ratio {w.Jo_final / max(w.Jo_initial, 1e-300):.4f})")
    print(f"twin: E_u(T) background {w.errors_bg.e_u[-1]:.4f} "
          f"analysis {w.errors_an.e_u[-1]:.4f}; "
          f"E_v(T) background {w.errors_bg.e_v[-1]:.4f} "
          f"analysis {w.errors_an.e_v[-1]:.4f}")


_DISPATCH = {
    "spinup": _cmd_spinup,
    "truth": _cmd_truth,
    "obs": _cmd_obs,
    "assimilate": _cmd_assimilate,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
    "verify": _cmd_verify,
    "twin": _cmd_twin,
}


def run(subcommand: str, rc: RunConfig, out: str = "runs") -> int:
    """Execute one pipeline; returns the process exit status."""
    if subcommand not in SUBCOMMANDS:
        raise CliError(f"unknown subcommand {subcommand!r}")
    rundir = make_run_dir(rc, out)
    print(f"run directory: {rundir}")
    _DISPATCH[subcommand](rc, rundir)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="peda",
        description="Primitive-equations Lagrangian data assimilation, "
                    "desk scale")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                metavar="|".join(SUBCOMMANDS))
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="configuration file path")
        p.add_argument("--out", default="runs", help="parent output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (1 = deterministic reference mode)")
        p.add_argument("--seed", type=int, default=None,
                       help="override [run] seed")
        if name == "verify":
            p.add_argument("check", nargs="?", default=None,
                           choices=("all", "wbound", "energy", "nlbound",
                                    "picard"),
                           help="which verification to run")
    args = parser.parse_args(argv)

    try:
        text = ""
        if args.config is not None:
            path = Path(args.config)
            if not path.exists():
                raise CliError(f"missing config file {path}")
            text = path.read_text()
        rc = parse_config(text)
        if args.seed is not None:
            rc.values["run_seed"] = int(args.seed)
        if args.threads is not None:
            rc.values["run_threads"] = int(args.threads)
        if getattr(args, "check", None):
            rc.values["verify_check"] = args.check
        return run(args.subcommand, rc, args.out)
    except Exception as exc:  # one-line machine-parseable error contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
