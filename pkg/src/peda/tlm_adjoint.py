"""Hand-coded tangent-linear and adjoint of the coupled model/float map,
and the gradient of the assimilation cost.

One composite step maps (X_n, xi_n) to (X_{n+1}, xi_{n+1}): a Heun model
step followed by the float update that uses the (X_n, X_{n+1}) pair. The
tangent map differentiates every nonlinear kernel (advection products,
interpolation at moving positions) around the checkpointed trajectory;
the adjoint is its exact transpose.

Inner-product conventions (these define what "transpose" and "gradient"
mean here):

* grid fields pair with the cell-weighted product
  <A, B> = dx*dy*dz * sum(a_i * b_i); prognostic fields vanish on the
  Dirichlet rows, so this equals the trapezoid-quadrature product and is
  the weighting Jb uses;
* float positions pair with the plain Euclidean product.

Internally every field kernel transpose is the plain array transpose (the
uniform cell weight cancels); the single place the weights surface is the
field-from-float scatter, which carries a 1/(dx*dy*dz) factor. Gradients
returned by grad_cost are gradients with respect to the weighted product,
so <grad, d> matches d/de J(X0 + e*d) directly.

Checkpointing stores every state of the nonlinear trajectory (desk scale);
the intermediate Heun stage is recomputed bit-exactly during the sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ModelConfig, Trajectory, forcing_fields, integrate, tendency
from .floats import FloatSet, InterpStencil, advect_floats, wrap_diff
from .grid import (
    StateField,
    cumtrapz_z,
    cumtrapz_z_t,
    ddx,
    ddx2d,
    ddy,
    ddy2d,
    ddz,
    ddz_t,
    laplacian,
    laplacian_t,
    poisson_solve_2d,
    spread_interior,
    sum_interior,
    trapz_z,
    trapz_z_t,
    zero_zbound,
)

__all__ = [
    "AdjointState", "Checkpoints", "CostBreakdown", "run_forward",
    "tlm_step", "adj_step", "grad_cost", "tlm_window", "adj_window",
    "composite_dot",
]


class CheckpointError(ValueError):
    pass


@dataclass
class CostBreakdown:
    Jo: float
    Jb: float
    J: float
    gnorm: float = float("nan")


@dataclass
class AdjointState:
    """Duals of the prognostic fields plus per-float position duals."""

    state: StateField
    xi: np.ndarray | None = None

    @classmethod
    def zeros(cls, grid, nfloats: int | None = None) -> "AdjointState":
        xi = np.zeros((nfloats, 2)) if nfloats is not None else None
        return cls(StateField.zeros(grid), xi)

    def copy(self) -> "AdjointState":
        return AdjointState(self.state.copy(),
                            None if self.xi is None else self.xi.copy())


class Checkpoints:
    """Every state (and float position) along one nonlinear trajectory."""

    def __init__(self, cfg: ModelConfig, states: list[StateField],
                 float_positions: list[np.ndarray] | None = None,
                 z0: float | None = None, ids: np.ndarray | None = None,
                 rhs_at=None):
        self.cfg = cfg
        self.states = states
        self.float_positions = float_positions
        self.z0 = z0
        self.ids = ids
        self.rhs_at = rhs_at

    @property
    def nsteps(self) -> int:
        return len(self.states) - 1

    @property
    def nfloats(self) -> int:
        if self.float_positions is None:
            return 0
        return self.float_positions[0].shape[0]

    def positions_at(self, t: int) -> np.ndarray:
        if self.float_positions is None:
            raise CheckpointError("trajectory carries no floats")
        return self.float_positions[t]


def run_forward(X0: StateField, cfg: ModelConfig, nsteps: int,
                fs0: FloatSet | None = None, rhs_at=None,
                check_cfl: bool = True) -> Checkpoints:
    """Nonlinear forward run with full-window checkpointing."""
    traj = Trajectory()
    integrate(X0, cfg, nsteps, recorder=traj, rhs_at=rhs_at, check_cfl=check_cfl)
    float_positions = None
    z0 = ids = None
    if fs0 is not None:
        fs = fs0.copy()
        order = np.argsort(fs.ids, kind="stable")
        fs = FloatSet(fs.positions[order], fs.z0, fs.ids[order])
        float_positions = [fs.positions.copy()]
        for n in range(nsteps):
            fs = advect_floats(fs, traj.states[n], traj.states[n + 1], cfg.dt)
            float_positions.append(fs.positions.copy())
        z0, ids = fs.z0, fs.ids
    return Checkpoints(cfg, traj.states, float_positions, z0, ids, rhs_at)


# ---------------------------------------------------------------------------
# linearization caches
# ---------------------------------------------------------------------------

class _PointCache:
    """Frozen fields needed to linearize one tendency evaluation."""

    def __init__(self, cfg: ModelConfig, X: StateField):
        from .dynamics import diagnose_w

        g = cfg.grid
        self.X = X
        if not cfg.linear:
            self.w = diagnose_w(g, X.u, X.v)
            self.dfx = [ddx(g, f) for f in X.components()]
            self.dfy = [ddy(g, f) for f in X.components()]
            self.dfz = [ddz(g, f) for f in X.components()]


class _StepCache:
    """Linearization data for one Heun step (both stage points)."""

    def __init__(self, cfg: ModelConfig, Xn: StateField, r0, r1):
        self.r0, self.r1 = r0, r1
        g1, _ = tendency(Xn, cfg, r0)
        xs = Xn + cfg.dt * g1
        self.p1 = _PointCache(cfg, Xn)
        self.p2 = _PointCache(cfg, xs)


def _step_cache(ck: Checkpoints, n: int) -> _StepCache:
    r0 = ck.rhs_at(n) if ck.rhs_at is not None else None
    r1 = ck.rhs_at(n + 1) if ck.rhs_at is not None else None
    return _StepCache(ck.cfg, ck.states[n], r0, r1)


# ---------------------------------------------------------------------------
# tendency TLM / adjoint
# ---------------------------------------------------------------------------

def _tlm_tendency(cfg: ModelConfig, pc: _PointCache, dX: StateField) -> StateField:
    g = cfg.grid
    ph = cfg.phys
    du, dv, dth = dX.components()
    dw = -cumtrapz_z(g, ddx(g, du) + ddy(g, dv))
    dp = ph.beta * cumtrapz_z(g, dth)

    dgu = ph.nu * laplacian(g, du) + ph.alpha * dv - ddx(g, dp)
    dgv = ph.nu * laplacian(g, dv) - ph.alpha * du - ddy(g, dp)
    dgt = ph.nu * laplacian(g, dth) - ph.gamma * dw

    if not cfg.linear:
        u, v, _ = pc.X.components()
        w = pc.w
        for out, df, k in ((dgu, du, 0), (dgv, dv, 1), (dgt, dth, 2)):
            out -= (du * pc.dfx[k] + u * ddx(g, df)
                    + dv * pc.dfy[k] + v * ddy(g, df)
                    + dw * pc.dfz[k] + w * ddz(g, df))

    dgu = zero_zbound(dgu)
    dgv = zero_zbound(dgv)
    dgt = zero_zbound(dgt)
    from .dynamics import project_rigid_lid
    dgu, dgv, _ = project_rigid_lid(g, dgu, dgv)
    return StateField(g, dgu, dgv, dgt)


def _project_rigid_lid_t(grid, lu: np.ndarray, lv: np.ndarray):
    """Plain transpose of the rigid-lid projection."""
    from .dynamics import _proj_scale

    lps = ddx2d(grid, sum_interior(lu)) + ddy2d(grid, sum_interior(lv))
    q = poisson_solve_2d(grid, lps) * (_proj_scale(grid) / grid.a)
    spread = trapz_z_t(grid, q)
    return lu - ddx(grid, spread), lv - ddy(grid, spread)


def _adj_tendency(cfg: ModelConfig, pc: _PointCache, lG: StateField) -> StateField:
    g = cfg.grid
    ph = cfg.phys
    lgu, lgv = _project_rigid_lid_t(g, lG.u, lG.v)
    lgu = zero_zbound(lgu)
    lgv = zero_zbound(lgv)
    lgt = zero_zbound(lG.theta)

    lu = ph.nu * laplacian_t(g, lgu) - ph.alpha * lgv
    lv = ph.nu * laplacian_t(g, lgv) + ph.alpha * lgu
    lt = ph.nu * laplacian_t(g, lgt)
    # pressure chain: dG(u,v) -= grad2( beta * cumint(dth) )
    lt += ph.beta * cumtrapz_z_t(g, ddx(g, lgu) + ddy(g, lgv))
    # w sources: -gamma*dw in the theta row
    lw = -ph.gamma * lgt

    if not cfg.linear:
        u, v, _ = pc.X.components()
        w = pc.w
        lphi = [np.zeros(g.shape) for _ in range(3)]
        lUx = np.zeros(g.shape)
        lUy = np.zeros(g.shape)
        for lg, k in ((lgu, 0), (lgv, 1), (lgt, 2)):
            # dG_k -= du*dfx[k] + u*ddx(dphi_k) + dv*dfy[k] + v*ddy(dphi_k)
            #         + dw*dfz[k] + w*ddz(dphi_k)
            lUx -= pc.dfx[k] * lg
            lUy -= pc.dfy[k] * lg
            lw -= pc.dfz[k] * lg
            lphi[k] += ddx(g, u * lg) + ddy(g, v * lg) - ddz_t(g, w * lg)
        lu += lUx + lphi[0]
        lv += lUy + lphi[1]
        lt += lphi[2]

    # dw = -cumint(ddx du + ddy dv)
    s = cumtrapz_z_t(g, lw)
    lu += ddx(g, s)
    lv += ddy(g, s)
    return StateField(g, lu, lv, lt)


# ---------------------------------------------------------------------------
# float TLM / adjoint
# ---------------------------------------------------------------------------

def _tlm_floats(ck: Checkpoints, n: int, dXn: StateField, dXn1: StateField,
                dxi: np.ndarray) -> np.ndarray:
    g = ck.cfg.grid
    dt = ck.cfg.dt
    Xn, Xn1 = ck.states[n], ck.states[n + 1]
    pos = ck.positions_at(n)
    st1 = InterpStencil(g, pos, ck.z0)
    k1 = np.stack([st1.value(Xn.u), st1.value(Xn.v)], axis=1)
    dk1 = np.stack([
        st1.value(dXn.u) + st1.grad_x(Xn.u) * dxi[:, 0] + st1.grad_y(Xn.u) * dxi[:, 1],
        st1.value(dXn.v) + st1.grad_x(Xn.v) * dxi[:, 0] + st1.grad_y(Xn.v) * dxi[:, 1],
    ], axis=1)
    mid = pos + dt * k1
    dmid = dxi + dt * dk1
    st2 = InterpStencil(g, mid, ck.z0)
    dk2 = np.stack([
        st2.value(dXn1.u) + st2.grad_x(Xn1.u) * dmid[:, 0] + st2.grad_y(Xn1.u) * dmid[:, 1],
        st2.value(dXn1.v) + st2.grad_x(Xn1.v) * dmid[:, 0] + st2.grad_y(Xn1.v) * dmid[:, 1],
    ], axis=1)
    return dxi + 0.5 * dt * (dk1 + dk2)


def _adj_floats(ck: Checkpoints, n: int, lxi1: np.ndarray):
    """Transpose of _tlm_floats. Returns (lxi_n, addX1, addX0): the float
    dual at step n and the field-dual contributions at steps n+1 and n
    (already rescaled by 1/cell for the weighted field pairing)."""
    g = ck.cfg.grid
    dt = ck.cfg.dt
    cell = g.cell
    Xn, Xn1 = ck.states[n], ck.states[n + 1]
    pos = ck.positions_at(n)
    st1 = InterpStencil(g, pos, ck.z0)
    k1 = np.stack([st1.value(Xn.u), st1.value(Xn.v)], axis=1)
    st2 = InterpStencil(g, pos + dt * k1, ck.z0)

    addX1 = StateField.zeros(g)
    addX0 = StateField.zeros(g)

    lk2 = 0.5 * dt * lxi1
    # dk2 = V2 dXn1 + J2 dmid
    st2.scatter(addX1.u, lk2[:, 0] / cell)
    st2.scatter(addX1.v, lk2[:, 1] / cell)
    lmid = np.stack([
        st2.grad_x(Xn1.u) * lk2[:, 0] + st2.grad_x(Xn1.v) * lk2[:, 1],
        st2.grad_y(Xn1.u) * lk2[:, 0] + st2.grad_y(Xn1.v) * lk2[:, 1],
    ], axis=1)
    lxi = lxi1 + lmid
    lk1 = 0.5 * dt * lxi1 + dt * lmid
    # dk1 = V1 dXn + J1 dxi
    st1.scatter(addX0.u, lk1[:, 0] / cell)
    st1.scatter(addX0.v, lk1[:, 1] / cell)
    lxi = lxi + np.stack([
        st1.grad_x(Xn.u) * lk1[:, 0] + st1.grad_x(Xn.v) * lk1[:, 1],
        st1.grad_y(Xn.u) * lk1[:, 0] + st1.grad_y(Xn.v) * lk1[:, 1],
    ], axis=1)
    return lxi, addX1, addX0


# ---------------------------------------------------------------------------
# composite step TLM / adjoint
# ---------------------------------------------------------------------------

def tlm_step(ck: Checkpoints, n: int, dX: StateField,
             dxi: np.ndarray | None = None, cache: _StepCache | None = None):
    """Exact derivative of one composite (model + floats) step at
    checkpoint n."""
    if not (0 <= n < ck.nsteps):
        raise CheckpointError(f"step index {n} outside [0, {ck.nsteps})")
    cfg = ck.cfg
    sc = cache if cache is not None else _step_cache(ck, n)
    dg1 = _tlm_tendency(cfg, sc.p1, dX)
    dxs = dX + cfg.dt * dg1
    dg2 = _tlm_tendency(cfg, sc.p2, dxs)
    dX1 = dX + (0.5 * cfg.dt) * (dg1 + dg2)
    dxi1 = None
    if dxi is not None:
        dxi1 = _tlm_floats(ck, n, dX, dX1, dxi)
    return dX1, dxi1


def adj_step(ck: Checkpoints, n: int, lam: AdjointState,
             cache: _StepCache | None = None) -> AdjointState:
    """Exact transpose of tlm_step at checkpoint n."""
    if not (0 <= n < ck.nsteps):
        raise CheckpointError(f"step index {n} outside [0, {ck.nsteps})")
    cfg = ck.cfg
    sc = cache if cache is not None else _step_cache(ck, n)
    lX1 = lam.state
    lxi_prev = None
    if lam.xi is not None:
        lxi_prev, addX1, addX0 = _adj_floats(ck, n, lam.xi)
        lX1 = lX1 + addX1
    else:
        addX0 = None

    lg2 = (0.5 * cfg.dt) * lX1
    lxs = _adj_tendency(cfg, sc.p2, lg2)
    ldx = lX1 + lxs
    lg1 = (0.5 * cfg.dt) * lX1 + cfg.dt * lxs
    ldx = ldx + _adj_tendency(cfg, sc.p1, lg1)
    if addX0 is not None:
        ldx = ldx + addX0
    return AdjointState(ldx, lxi_prev)


def tlm_window(ck: Checkpoints, dX0: StateField,
               dxi0: np.ndarray | None = None, collect_at=()):
    """Sweep the TLM over the whole window; optionally collect tangent
    float positions at the given time indices."""
    collect = {int(t) for t in collect_at}
    dX = dX0
    dxi = dxi0
    out = {}
    if 0 in collect and dxi is not None:
        out[0] = dxi.copy()
    for n in range(ck.nsteps):
        dX, dxi = tlm_step(ck, n, dX, dxi)
        if (n + 1) in collect and dxi is not None:
            out[n + 1] = dxi.copy()
    return dX, dxi, out


def adj_window(ck: Checkpoints, lam: AdjointState, seeds=None) -> AdjointState:
    """Sweep the adjoint backwards; ``seeds[t]`` is added to the float dual
    when the sweep passes time index t."""
    seeds = seeds or {}
    cur = lam.copy()
    for n in range(ck.nsteps, 0, -1):
        if cur.xi is not None and n in seeds:
            cur.xi = cur.xi + seeds[n]
        cur = adj_step(ck, n - 1, cur)
    if cur.xi is not None and 0 in seeds:
        cur.xi = cur.xi + seeds[0]
    return cur


def _zero_dual(ck: Checkpoints) -> AdjointState:
    nfl = ck.nfloats if ck.float_positions is not None else None
    return AdjointState.zeros(ck.cfg.grid, nfl)


def composite_dot(aX: StateField, axi: np.ndarray | None,
                  bX: StateField, bxi: np.ndarray | None) -> float:
    s = aX.dot(bX)
    if axi is not None and bxi is not None:
        s += float((axi * bxi).sum())
    return s


# ---------------------------------------------------------------------------
# cost gradient
# ---------------------------------------------------------------------------

def _obs_rows(problem, t: int):
    """Observed rows at time t as (position-row indices, observed positions)."""
    ids, d = problem.obs.at_time(t)
    lookup = {int(i): r for r, i in enumerate(problem.fs0.ids)}
    rows = np.array([lookup[int(i)] for i in ids], dtype=np.int64)
    return rows, d


def evaluate_cost_terms(X0: StateField, ck: Checkpoints, problem) -> tuple[float, float]:
    """Jo and Jb at X0 given the checkpointed trajectory."""
    Jo = 0.0
    for t in problem.obs.times():
        rows, d = _obs_rows(problem, t)
        r = wrap_diff(ck.positions_at(t)[rows] - d)
        Jo += 0.5 * float((r * r).sum())
    dxb = X0 - problem.Xb
    Jb = 0.5 * problem.background_quadratic(dxb)
    return Jo, Jb


def grad_cost(X0: StateField, problem, ck: Checkpoints | None = None):
    """Cost breakdown and its gradient (weighted-product convention).

    Runs the nonlinear forward with checkpoints, seeds the float duals with
    the wrapped position residuals at each observation time, sweeps the
    adjoint to t = 0 and adds the background term.
    """
    if ck is None:
        ck = run_forward(X0, problem.cfg, problem.nsteps, problem.fs0)
    Jo, Jb = evaluate_cost_terms(X0, ck, problem)

    seeds = {}
    for t in problem.obs.times():
        rows, d = _obs_rows(problem, t)
        r = wrap_diff(ck.positions_at(t)[rows] - d)
        seed = np.zeros((ck.nfloats, 2))
        np.add.at(seed, rows, r)
        seeds[t] = seed

    lam = _zero_dual(ck)
    lam = adj_window(ck, lam, seeds)
    grad = lam.state + problem.background_gradient(X0 - problem.Xb)
    grad = problem.apply_control_mask(grad)
    cb = CostBreakdown(Jo, Jb, Jo + problem.omega * Jb, grad.norm())
    return cb, grad
