"""Hydrostatic primitive-equations core on the periodic box.

Prognostic state X = (u, v, theta). Diagnostics:

    w(x, y, z) = -int_0^z (du/dx + dv/dy) dz'
    p(x, y, z) = p_s(x, y) + beta * int_0^z theta dz'

Tendencies in advective form (U = (u, v), grad2 = horizontal gradient):

    du/dt = nu lap(u) - (U.grad2)u - w du/dz + alpha v - dp/dx + Fu
    dv/dt = nu lap(v) - (U.grad2)v - w dv/dz - alpha u - dp/dy + Fv
    dth/dt= nu lap(th)- (U.grad2)th- w dth/dz - gamma w        + Fth

Linear mode drops the advection products (this is the linear system the
energy checks and the Picard cross-integrator use, with Fu, Fv, Fth as the
prescribed right-hand side).

The rigid lid (vanishing depth-integrated horizontal divergence) is
enforced by projecting the momentum tendency each stage: a doubly periodic
2D Poisson solve for the surface pressure whose horizontal gradient is
removed at the interior z levels. Restricting the correction to interior
levels keeps the Dirichlet rows of the tendency exactly zero; the Poisson
right-hand side carries the compensating factor a/(a - dz) so the
depth-integrated divergence of the projected tendency vanishes to machine
precision.

Time stepping is Heun (RK2): X* = X + dt G(X); X+ = X + dt/2 (G(X)+G(X*)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    Grid,
    StateField,
    cumtrapz_z,
    ddx,
    ddx2d,
    ddy,
    ddy2d,
    ddz,
    laplacian,
    poisson_solve_2d,
    spread_interior,
    trapz_z,
    zero_zbound,
)


class DynamicsError(RuntimeError):
    pass


class CflError(ValueError):
    pass


@dataclass(frozen=True)
class PhysParams:
    """Coriolis alpha, buoyancy coupling beta, stratification gamma,
    viscosity/diffusivity nu."""

    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    nu: float = 0.02

    def __post_init__(self):
        if not self.nu > 0.0:
            raise DynamicsError(f"nu must be positive, got {self.nu}")
        if self.alpha < 0.0 or self.beta < 0.0 or self.gamma < 0.0:
            raise DynamicsError("alpha, beta, gamma must be nonnegative")


@dataclass
class Forcing:
    """Momentum/temperature forcing: none, prescribed fields, or wind.

    Wind is the periodic-domain stand-in for a double-gyre stress:
    Fu = tau0 * cos(y) * g(z) with the per-level weights g concentrated at
    the top interior levels and summing to one; Fv = Fth = 0.
    """

    mode: str = "none"  # none | linear_rhs | wind
    fields: StateField | None = None
    tau0: float = 0.0
    profile: np.ndarray | None = None

    @classmethod
    def none(cls) -> "Forcing":
        return cls()

    @classmethod
    def linear_rhs(cls, fields: StateField) -> "Forcing":
        return cls(mode="linear_rhs", fields=fields)

    @classmethod
    def wind(cls, grid: Grid, tau0: float, profile: np.ndarray | None = None) -> "Forcing":
        if profile is None:
            profile = np.zeros(grid.nz)
            if grid.nz >= 4:
                profile[-2] = 0.5
                profile[-3] = 0.5
            else:
                profile[1] = 1.0
        profile = np.asarray(profile, dtype=float)
        if profile.shape != (grid.nz,):
            raise DynamicsError(f"wind profile must have {grid.nz} levels")
        if np.any(profile < 0.0) or profile[0] != 0.0 or profile[-1] != 0.0:
            raise DynamicsError("wind profile weights must be nonnegative and "
                                "zero at the z boundaries")
        s = profile.sum()
        if not np.isclose(s, 1.0):
            raise DynamicsError(f"wind profile weights must sum to 1, got {s}")
        return cls(mode="wind", tau0=float(tau0), profile=profile)


@dataclass
class ModelConfig:
    grid: Grid
    phys: PhysParams = field(default_factory=PhysParams)
    dt: float = 0.01
    linear: bool = False
    forcing: Forcing = field(default_factory=Forcing.none)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise DynamicsError(f"dt must be positive, got {self.dt}")


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def diagnose_w(grid: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vertical velocity from continuity; w = 0 at z = 0 by construction."""
    return -cumtrapz_z(grid, ddx(grid, u) + ddy(grid, v))


def diagnose_pressure(grid: Grid, theta: np.ndarray, p_s: np.ndarray,
                      beta: float) -> np.ndarray:
    """Hydrostatic pressure: surface value plus beta * int_0^z theta."""
    if p_s.shape != (grid.nx, grid.ny):
        raise DynamicsError(f"p_s shape {p_s.shape} != {(grid.nx, grid.ny)}")
    return p_s[:, :, None] + beta * cumtrapz_z(grid, theta)


def depth_divergence(grid: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Depth-integrated horizontal divergence (the rigid-lid residual)."""
    return trapz_z(grid, ddx(grid, u) + ddy(grid, v))


# ---------------------------------------------------------------------------
# rigid-lid projection
# ---------------------------------------------------------------------------

def _proj_scale(grid: Grid) -> float:
    return grid.a / (grid.a - grid.dz)


def project_rigid_lid(grid: Grid, gu: np.ndarray, gv: np.ndarray):
    """Remove the surface-pressure gradient from the momentum tendencies.

    Solves the composed centered-difference Poisson problem for p_s from
    the depth-averaged divergence and subtracts its gradient at the
    interior levels, leaving the depth-integrated divergence of the result
    at machine zero and the boundary rows untouched.
    """
    db = (trapz_z(grid, ddx(grid, gu)) + trapz_z(grid, ddy(grid, gv))) / grid.a
    ps = poisson_solve_2d(grid, db * _proj_scale(grid))
    gu2 = gu - spread_interior(grid, ddx2d(grid, ps))
    gv2 = gv - spread_interior(grid, ddy2d(grid, ps))
    return gu2, gv2, ps


def project_state(X: StateField) -> StateField:
    """Make an initial state satisfy the rigid-lid constraint.

    Subtracts a divergent barotropic correction carried by a parabolic
    vertical profile (zero at z = 0, a; unit trapezoid mean), so the
    Dirichlet rows stay exact zeros.
    """
    g = X.grid
    db = (trapz_z(g, ddx(g, X.u)) + trapz_z(g, ddy(g, X.v))) / g.a
    phi = poisson_solve_2d(g, db)
    z = g.z
    prof = z * (g.a - z)
    prof = prof / (float((g.zweights * prof).sum()) / g.a)
    cu = ddx2d(g, phi)[:, :, None] * prof[None, None, :]
    cv = ddy2d(g, phi)[:, :, None] * prof[None, None, :]
    return StateField(g, X.u - cu, X.v - cv, X.theta.copy())


# ---------------------------------------------------------------------------
# forcing and tendency
# ---------------------------------------------------------------------------

def forcing_fields(grid: Grid, forcing: Forcing) -> StateField | None:
    if forcing.mode == "none":
        return None
    if forcing.mode == "linear_rhs":
        if forcing.fields is None:
            raise DynamicsError("linear_rhs forcing needs fields")
        return forcing.fields
    if forcing.mode == "wind":
        fu = forcing.tau0 * np.cos(grid.y)[None, :, None] \
            * forcing.profile[None, None, :] * np.ones((grid.nx, 1, 1))
        return StateField(grid, fu, grid.zeros(), grid.zeros())
    raise DynamicsError(f"unknown forcing mode {forcing.mode!r}")


def tendency(X: StateField, cfg: ModelConfig, rhs: StateField | None = None):
    """Projected tendency and the surface pressure it used.

    ``rhs`` adds extra per-call forcing fields on top of cfg.forcing (the
    Picard cross-integrator drives the linear model this way).
    """
    g = cfg.grid
    ph = cfg.phys
    u, v, th = X.components()
    w = diagnose_w(g, u, v)
    pbar = ph.beta * cumtrapz_z(g, th)

    gu = ph.nu * laplacian(g, u) + ph.alpha * v - ddx(g, pbar)
    gv = ph.nu * laplacian(g, v) - ph.alpha * u - ddy(g, pbar)
    gt = ph.nu * laplacian(g, th) - ph.gamma * w

    if not cfg.linear:
        gu -= u * ddx(g, u) + v * ddy(g, u) + w * ddz(g, u)
        gv -= u * ddx(g, v) + v * ddy(g, v) + w * ddz(g, v)
        gt -= u * ddx(g, th) + v * ddy(g, th) + w * ddz(g, th)

    F = forcing_fields(g, cfg.forcing)
    if F is not None:
        gu += F.u
        gv += F.v
        gt += F.theta
    if rhs is not None:
        gu += rhs.u
        gv += rhs.v
        gt += rhs.theta

    gu = zero_zbound(gu)
    gv = zero_zbound(gv)
    gt = zero_zbound(gt)
    gu, gv, ps = project_rigid_lid(g, gu, gv)
    return StateField(g, gu, gv, gt), ps


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def cfl_check(X: StateField, cfg: ModelConfig) -> float:
    """Largest stable dt: half the min of the diffusive and advective limits.
    The advective limit only binds in nonlinear mode (the linear system
    carries no advection terms)."""
    g = cfg.grid
    hmin = min(g.dx, g.dy, g.dz)
    diff = hmin**2 / (6.0 * cfg.phys.nu)
    adv = np.inf
    if not cfg.linear:
        w = diagnose_w(g, X.u, X.v)
        for h, f in ((g.dx, X.u), (g.dy, X.v), (g.dz, w)):
            m = float(np.abs(f).max())
            if m > 0.0:
                adv = min(adv, h / m)
    return 0.5 * min(diff, adv)


def step(X: StateField, cfg: ModelConfig, rhs0: StateField | None = None,
         rhs1: StateField | None = None, check_cfl: bool = True) -> StateField:
    """One Heun step; boundary zeros of X are preserved exactly."""
    if check_cfl:
        allowed = cfl_check(X, cfg)
        if cfg.dt > allowed:
            raise CflError(f"dt={cfg.dt:.6g} exceeds the stable limit {allowed:.6g}")
    if rhs1 is None:
        rhs1 = rhs0
    g1, _ = tendency(X, cfg, rhs0)
    xs = X + cfg.dt * g1
    g2, _ = tendency(xs, cfg, rhs1)
    return X + (0.5 * cfg.dt) * (g1 + g2)


class Trajectory:
    """Recorder keeping every state (full-window checkpointing)."""

    def __init__(self):
        self.states: list[StateField] = []

    def __call__(self, n: int, X: StateField) -> None:
        if n != len(self.states):
            raise DynamicsError(f"recorder got step {n}, expected {len(self.states)}")
        self.states.append(X)

    def __len__(self):
        return len(self.states)


def chain_recorders(*recorders):
    recs = [r for r in recorders if r is not None]

    def rec(n, X):
        for r in recs:
            r(n, X)

    return rec


def integrate(X0: StateField, cfg: ModelConfig, nsteps: int, recorder=None,
              rhs_at=None, check_cfl: bool = True) -> StateField:
    """Apply ``step`` nsteps times; the recorder sees every state.

    ``rhs_at(n)`` supplies extra forcing fields at step boundary n (the two
    Heun stages of step n use rhs_at(n) and rhs_at(n+1)).
    """
    if nsteps < 0:
        raise DynamicsError(f"nsteps must be >= 0, got {nsteps}")
    X = X0.copy()
    if recorder is not None:
        recorder(0, X)
    for n in range(nsteps):
        r0 = rhs_at(n) if rhs_at is not None else None
        r1 = rhs_at(n + 1) if rhs_at is not None else None
        X = step(X, cfg, r0, r1, check_cfl=check_cfl)
        if not X.is_finite():
            raise DynamicsError(f"non-finite state at step {n + 1}")
        if recorder is not None:
            recorder(n + 1, X)
    return X


# ---------------------------------------------------------------------------
# diagnostics series and random states
# ---------------------------------------------------------------------------

def kinetic_energy(X: StateField) -> float:
    from .grid import inner
    g = X.grid
    return 0.5 * (inner(g, X.u, X.u) + inner(g, X.v, X.v))


class DiagnosticsRecorder:
    """Collects per-step rows: step, time, kinetic energy, |theta|^2, max
    depth-integrated divergence."""

    def __init__(self, dt: float):
        self.dt = dt
        self.rows: list[tuple] = []

    def __call__(self, n: int, X: StateField) -> None:
        from .grid import inner
        g = X.grid
        ke = kinetic_energy(X)
        th2 = inner(g, X.theta, X.theta)
        maxdiv = float(np.abs(depth_divergence(g, X.u, X.v)).max())
        self.rows.append((n, n * self.dt, ke, th2, maxdiv))


def _smooth2d(rng: np.random.Generator, grid: Grid, kmax: int) -> np.ndarray:
    """Band-limited random 2D field with unit-ish amplitude."""
    c = np.zeros((grid.nx, grid.ny // 2 + 1), dtype=complex)
    for kx in range(-kmax, kmax + 1):
        for ky in range(0, kmax + 1):
            re, im = rng.normal(size=2)
            c[kx % grid.nx, ky] = re + 1j * im
    f = np.fft.irfft2(c, s=(grid.nx, grid.ny))
    m = float(np.abs(f).max())
    return f / m if m > 0 else f


def mode_state(grid: Grid, seed, amplitude: float = 0.1, kmax: int = 2,
               jmax: int = 2, project: bool = True) -> StateField:
    """Seeded random state built from explicit trigonometric modes.

    The coefficients depend only on the seed, not on the grid, so the same
    continuous field can be sampled on different resolutions (used by the
    cross-resolution ratio sweeps)."""
    rng = np.random.default_rng(seed)
    x, y, z = np.meshgrid(grid.x, grid.y, grid.z, indexing="ij")
    comps = []
    for _ in range(3):
        f = np.zeros(grid.shape)
        for kx in range(0, kmax + 1):
            for ky in range(0, kmax + 1):
                for j in range(1, jmax + 1):
                    c, px, py = rng.normal(size=3)
                    f += c * np.cos(kx * x + px) * np.cos(ky * y + py) \
                        * np.sin(j * np.pi * z / grid.a)
        m = float(np.abs(f).max())
        if m > 0:
            f *= amplitude / m
        f[:, :, 0] = 0.0
        f[:, :, -1] = 0.0
        comps.append(f)
    X = StateField(grid, *comps)
    return project_state(X) if project else X


def random_state(grid: Grid, seed, amplitude: float = 0.1, kmax: int = 2,
                 jmax: int = 2, project: bool = True) -> StateField:
    """Seeded smooth random state: band-limited in (x, y), sine modes in z,
    exact zeros at the Dirichlet rows, optionally projected onto the
    rigid-lid constraint."""
    rng = np.random.default_rng(seed)
    z = grid.z
    comps = []
    for _ in range(3):
        f = np.zeros(grid.shape)
        for j in range(1, jmax + 1):
            f += _smooth2d(rng, grid, kmax)[:, :, None] \
                * np.sin(j * np.pi * z / grid.a)[None, None, :]
        m = float(np.abs(f).max())
        if m > 0:
            f *= amplitude / m
        f[:, :, 0] = 0.0
        f[:, :, -1] = 0.0
        comps.append(f)
    X = StateField(grid, *comps)
    return project_state(X) if project else X
