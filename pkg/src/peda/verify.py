"""Numerical checks of the model's energy structure.

Implements, with grid quadrature in place of the continuous integrals:

* the vertical-velocity bound  |w|^2 <= a^2 (|du/dx|^2 + |dv/dy|^2),
  checked with a 5% quadrature slack;
* the linear-system energy inequality

      |X(t)|_{2,m}^2 + |grad X(t)|_{2,m}^2 + (1/nu) int_0^t |dX/dt|_{2,m}^2
        <= exp(C1 t) ( C2 |X0|_{2,m}^2 + C3 |grad X0|_{2,m}^2
                       + C4 int_0^T |F|_{2,m}^2 )

  with the closed-form constants
      C1 = 2 max( 1 + 2 a^2/nu ... see energy_constants ),
      C2 = 2 + 4/(K nu),  C3 = 4 + 4 a^2/nu,  C4 = 2 + 8/nu,
  all norms K-weighted on the temperature contributions, and K large
  enough: K >= 2 max(4 a^2/nu^2, 2 gamma beta);
* the quadratic bound on the advection terms, checked as a bounded ratio
  (the continuous constant is order one only for the continuous norms);
* the fixed-point construction: iterates X^{n+1} solve the linear system
  forced by the advection of X^n, contract on a short window, and the
  limit cross-checks the nonlinear integrator.

The time derivative entering the inequality is the recorded per-step
effective tendency (X_{n+1} - X_n)/dt, which for Heun equals the stage
average of the two tendencies exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ModelConfig, Trajectory, diagnose_w, integrate
from .grid import (
    Grid,
    NormParams,
    StateField,
    ddx,
    ddy,
    ddz,
    grad_norm_sq_2m,
    inner,
    norm_2m,
    norm_U,
    recommended_K,
)

W_BOUND_SLACK = 0.05


class VerifyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# inequality (w bound)
# ---------------------------------------------------------------------------

def check_w_bound(X: StateField) -> tuple[float, float, bool]:
    """(lhs, rhs, pass): |w|^2 vs a^2(|du/dx|^2 + |dv/dy|^2) with 5% slack."""
    g = X.grid
    w = diagnose_w(g, X.u, X.v)
    lhs = inner(g, w, w)
    ux = ddx(g, X.u)
    vy = ddy(g, X.v)
    rhs = g.a**2 * (inner(g, ux, ux) + inner(g, vy, vy))
    return lhs, rhs, lhs <= rhs * (1.0 + W_BOUND_SLACK)


# ---------------------------------------------------------------------------
# linear energy inequality
# ---------------------------------------------------------------------------

def energy_constants(a: float, nu: float, K: float, gamma: float, beta: float,
                     alpha: float) -> tuple[float, float, float, float]:
    """Closed-form C1..C4 of the linear energy estimate."""
    c1 = 2.0 * max(
        1.0 + 2.0 * alpha**2 / nu,
        (1.0 + abs(gamma - beta / K)) / (1.0 + 2.0 * alpha**2 / nu),
        max(1.0, a**2 * abs(K * gamma - beta))
        + 2.0 * gamma * a**2 * (K * gamma + beta) / nu,
    )
    c2 = 2.0 + 4.0 / (K * nu)
    c3 = 4.0 + 4.0 * a**2 / nu
    c4 = 2.0 + 8.0 / nu
    return c1, c2, c3, c4


@dataclass
class EnergyReport:
    C1: float
    C2: float
    C3: float
    C4: float
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    passed: bool

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs


def check_energy_inequality(X0: StateField, F: StateField, cfg: ModelConfig,
                            T: float, p: NormParams) -> EnergyReport:
    """Integrate the linear system with static forcing F and compare both
    sides of the energy inequality at every step."""
    if not cfg.linear:
        raise VerifyError("the energy inequality applies to the linear model")
    ph = cfg.phys
    kmin = recommended_K(cfg.grid.a, ph.nu, ph.gamma, ph.beta)
    if p.K < kmin:
        raise VerifyError(f"K={p.K} below the required 2*max(4a^2/nu^2, "
                          f"2*gamma*beta) = {kmin}")
    c1, c2, c3, c4 = energy_constants(cfg.grid.a, ph.nu, p.K, ph.gamma,
                                      ph.beta, ph.alpha)
    nsteps = max(1, int(round(T / cfg.dt)))
    cfg_run = ModelConfig(cfg.grid, ph, cfg.dt, linear=True, forcing=cfg.forcing)

    traj = Trajectory()
    integrate(X0, cfg_run, nsteps, recorder=traj, rhs_at=lambda n: F)

    f_sq = norm_2m(F, p) ** 2
    x0_sq = norm_2m(X0, p) ** 2
    g0_sq = grad_norm_sq_2m(X0, p)
    base = c2 * x0_sq + c3 * g0_sq + c4 * (nsteps * cfg.dt) * f_sq

    times, lhs_vals, rhs_vals = [], [], []
    dt_int = 0.0
    for n, X in enumerate(traj.states):
        t = n * cfg.dt
        if n > 0:
            dXdt = (1.0 / cfg.dt) * (traj.states[n] - traj.states[n - 1])
            dt_int += cfg.dt * norm_2m(dXdt, p) ** 2
        lhs = norm_2m(X, p) ** 2 + grad_norm_sq_2m(X, p) + dt_int / ph.nu
        # exp(C1 t) overflows quickly for the conservative C1; cap the
        # exponent so the report stays finite (the inequality only gets
        # slacker there)
        rhs = np.exp(min(c1 * t, 700.0)) * base
        times.append(t)
        lhs_vals.append(lhs)
        rhs_vals.append(rhs)
    lhs_vals = np.array(lhs_vals)
    rhs_vals = np.array(rhs_vals)
    return EnergyReport(c1, c2, c3, c4, np.array(times), lhs_vals, rhs_vals,
                        bool(np.all(lhs_vals <= rhs_vals)))


# ---------------------------------------------------------------------------
# nonlinear-term bound
# ---------------------------------------------------------------------------

def advection_forcing(X1: StateField, X2: StateField) -> StateField:
    """F_i = (U1 . grad2) phi2_i + w1 d(phi2_i)/dz for phi2 in (u2, v2, th2)."""
    g = X1.grid
    w1 = diagnose_w(g, X1.u, X1.v)
    out = []
    for f2 in X2.components():
        out.append(X1.u * ddx(g, f2) + X1.v * ddy(g, f2) + w1 * ddz(g, f2))
    return StateField(g, *out)


@dataclass
class NonlinearBoundReport:
    ratios: tuple[float, float, float]
    max_ratio: float
    degenerate: bool  # zero denominator (X1 or grad X2 vanishing)


def check_nonlinear_bound(X1: StateField, X2: StateField, m: int = 2) -> NonlinearBoundReport:
    """Ratio of |F_i|_{2,m}^2 to (|X1| + a^2 |grad X1|) |grad X1| |grad X2|^2.

    Uses unweighted (K = 1) norms; the bound is stated per component
    without the temperature weighting.
    """
    p = NormParams(m, 1.0)
    g = X1.grid
    F = advection_forcing(X1, X2)
    n1 = norm_2m(X1, p)
    gn1 = float(np.sqrt(grad_norm_sq_2m(X1, p)))
    gn2_sq = grad_norm_sq_2m(X2, p)
    den = (n1 + g.a**2 * gn1) * gn1 * gn2_sq
    if den == 0.0:
        return NonlinearBoundReport((0.0, 0.0, 0.0), 0.0, True)
    ratios = []
    for fi in F.components():
        acc = 0.0
        Xi = StateField(g, fi, np.zeros_like(fi), np.zeros_like(fi))
        acc = norm_2m(Xi, p) ** 2
        ratios.append(acc / den)
    ratios = tuple(float(r) for r in ratios)
    return NonlinearBoundReport(ratios, max(ratios), False)


# ---------------------------------------------------------------------------
# fixed-point (Picard) cross-integrator
# ---------------------------------------------------------------------------

@dataclass
class PicardRun:
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    trajectory: Trajectory | None = None
    times: np.ndarray | None = None

    @property
    def ratios(self) -> list[float]:
        return [b / a for a, b in zip(self.residuals, self.residuals[1:]) if a > 0]


def _traj_residual(traj_a: Trajectory, traj_b: Trajectory, dt: float, nu: float,
                   p: NormParams) -> float:
    """sup_t |dX(t)|_U^2 + int |d(dX)/dt|_{2,m}^2 over the window."""
    sup_sq = 0.0
    dt_int = 0.0
    prev = None
    for a, b in zip(traj_a.states, traj_b.states):
        d = a - b
        sup_sq = max(sup_sq, norm_U(d, p) ** 2)
        if prev is not None:
            dd = (1.0 / dt) * (d - prev)
            dt_int += dt * norm_2m(dd, p) ** 2
        prev = d
    return sup_sq + dt_int


def picard_integrate(X0: StateField, cfg: ModelConfig, T: float,
                     max_n: int = 20, tol: float = 1e-12,
                     p: NormParams | None = None) -> PicardRun:
    """Fixed-point iterates of the nonlinear system on [0, T].

    X^0 is the constant-in-time initial state; each X^{n+1} solves the
    linear system forced by minus the advection terms of X^n, from the
    same initial state. Residuals use the trajectory norm above; three
    consecutive increases abort with a "window too long" diagnostic.
    """
    if cfg.linear:
        raise VerifyError("picard_integrate drives the nonlinear system")
    if p is None:
        p = NormParams(2, 1.0)
    nsteps = max(1, int(round(T / cfg.dt)))
    lin_cfg = ModelConfig(cfg.grid, cfg.phys, cfg.dt, linear=True,
                          forcing=cfg.forcing)

    prev = Trajectory()
    prev.states = [X0.copy() for _ in range(nsteps + 1)]
    run = PicardRun()
    increases = 0
    for n in range(1, max_n + 1):
        rhs_fields = [-1.0 * advection_forcing(Xn, Xn) for Xn in prev.states]
        cur = Trajectory()
        integrate(X0, lin_cfg, nsteps, recorder=cur,
                  rhs_at=lambda i: rhs_fields[i])
        res = _traj_residual(cur, prev, cfg.dt, cfg.phys.nu, p)
        run.residuals.append(res)
        run.iterations = n
        if len(run.residuals) >= 2 and res > run.residuals[-2]:
            increases += 1
            if increases >= 3:
                raise VerifyError(
                    f"residuals increased 3 times in a row (n={n}); "
                    "the window T is too long for contraction")
        else:
            increases = 0
        prev = cur
        if res <= tol:
            run.converged = True
            break
    run.trajectory = prev
    run.times = np.arange(nsteps + 1) * cfg.dt
    return run


def picard_vs_nonlinear(X0: StateField, cfg: ModelConfig, T: float,
                        max_n: int = 20, tol: float = 1e-12):
    """(PicardRun, relative L2 difference of final states) against the
    nonlinear Heun integrator on the same window."""
    run = picard_integrate(X0, cfg, T, max_n, tol)
    nsteps = len(run.trajectory.states) - 1
    ref = Trajectory()
    integrate(X0, cfg, nsteps, recorder=ref)
    d = run.trajectory.states[-1] - ref.states[-1]
    rel = d.norm() / max(ref.states[-1].norm(), 1e-300)
    return run, float(rel)
