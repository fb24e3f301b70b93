"""Cost function, background norm and the incremental 4D-Var driver.

The cost is

    J(X0) = 1/2 sum_{i,j} |xi_j(t_i) - d_i^j|^2 + (omega/2) |X0 - Xb|_B^2

with the position mismatch taken as the shortest periodic displacement.
B is diagonal (per-variable, optionally per-level variances) and the
B-norm carries the grid quadrature weights, so a one-cell perturbation
delta with variance sigma^2 contributes q*delta^2/sigma^2 with q that
cell's quadrature weight. An optional variant uses the weighted
m-derivative norm of the state space as the background term instead.

Minimization is incremental: each outer loop relinearizes the model and
observation operators around the current trajectory (checkpoints) and a
conjugate-gradient inner loop minimizes the resulting quadratic cost
using exact Hessian-vector products (TLM forward, adjoint back, plus
omega*B^-1). The quadratic model value is logged per inner iteration and
is nonincreasing; a divergence guard returns the best iterate seen.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ModelConfig, project_state
from .floats import FloatSet, ObsSet
from .grid import NormParams, StateField, self_zw, unorm_gradient, zero_zbound
from .tlm_adjoint import (
    Checkpoints,
    CostBreakdown,
    _obs_rows,
    _zero_dual,
    adj_window,
    evaluate_cost_terms,
    grad_cost,
    run_forward,
    tlm_window,
)


class AssimError(ValueError):
    pass


class IndefiniteHessianError(RuntimeError):
    pass


@dataclass
class AssimProblem:
    """Everything one assimilation needs; owns cost/gradient evaluation."""

    cfg: ModelConfig
    nsteps: int
    Xb: StateField
    fs0: FloatSet
    obs: ObsSet
    omega: float = 1.0
    sigma2_u: float | np.ndarray = 1.0
    sigma2_v: float | np.ndarray = 1.0
    sigma2_theta: float | np.ndarray = 1.0
    freeze_theta: bool = False
    # "b": diagonal covariance; "u": weighted m-derivative state norm;
    # "hybrid": diagonal floor plus u_smooth times the state-norm penalty
    # (flat spectrum where the data act, steep at small scales)
    background_norm: str = "b"
    u_smooth: float = 0.05
    norm_params: NormParams = field(default_factory=NormParams)

    def __post_init__(self):
        if self.omega < 0.0:
            raise AssimError(f"omega must be >= 0, got {self.omega}")
        for name in ("sigma2_u", "sigma2_v", "sigma2_theta"):
            s = np.asarray(getattr(self, name), dtype=float)
            if np.any(s <= 0.0):
                raise AssimError(f"{name} must be positive")
        if self.background_norm not in ("b", "u", "hybrid"):
            raise AssimError(f"background_norm must be 'b', 'u' or 'hybrid', "
                             f"got {self.background_norm!r}")
        if self.obs.count:
            tmin, tmax = int(self.obs.time_index.min()), int(self.obs.time_index.max())
            if tmin < 0 or tmax > self.nsteps:
                raise AssimError(
                    f"observation times [{tmin}, {tmax}] outside window "
                    f"[0, {self.nsteps}]")

    def _sigma2(self, name: str) -> np.ndarray:
        s = np.asarray(getattr(self, f"sigma2_{name}"), dtype=float)
        if s.ndim == 0:
            return s.reshape(1, 1, 1)
        if s.shape == (self.cfg.grid.nz,):
            return s[None, None, :]
        raise AssimError(f"sigma2_{name} must be scalar or per-level (nz,)")

    def b_inverse(self, dX: StateField) -> StateField:
        g = dX.grid
        return StateField(g, dX.u / self._sigma2("u"), dX.v / self._sigma2("v"),
                          dX.theta / self._sigma2("theta"))

    def _u_weights(self):
        """Per-variable factors of the U-norm background term: the sigma
        scales keep their meaning across both background families (per-level
        arrays enter through their mean)."""
        w = []
        for name in ("u", "v", "theta"):
            w.append(1.0 / float(np.mean(self._sigma2(name))))
        w[2] *= self.norm_params.K
        return tuple(w)

    def _b_quadratic(self, dX: StateField) -> float:
        g = dX.grid
        zw = self_zw(g)
        area = g.dx * g.dy
        acc = 0.0
        for f, s2 in ((dX.u, self._sigma2("u")), (dX.v, self._sigma2("v")),
                      (dX.theta, self._sigma2("theta"))):
            acc += float((f * f / s2 * zw).sum()) * area
        return acc

    def background_quadratic(self, dX: StateField) -> float:
        """|dX|_B^2 (or the state-norm variants)."""
        from .grid import norm_U
        if self.background_norm == "u":
            return norm_U(dX, self.norm_params, weights=self._u_weights()) ** 2
        if self.background_norm == "hybrid":
            return self._b_quadratic(dX) \
                + self.u_smooth * norm_U(dX, self.norm_params) ** 2
        return self._b_quadratic(dX)

    def background_gradient(self, dX: StateField) -> StateField:
        """Gradient of (omega/2)*background_quadratic in the weighted product."""
        if self.background_norm == "u":
            return self.omega * unorm_gradient(dX, self.norm_params,
                                               weights=self._u_weights())
        if self.background_norm == "hybrid":
            return self.omega * (self.b_inverse(dX)
                                 + self.u_smooth * unorm_gradient(dX, self.norm_params))
        return self.omega * self.b_inverse(dX)

    def apply_control_mask(self, dX: StateField) -> StateField:
        out = StateField(dX.grid, zero_zbound(dX.u), zero_zbound(dX.v),
                         zero_zbound(dX.theta))
        if self.freeze_theta:
            out.theta[:] = 0.0
        return out


# ---------------------------------------------------------------------------
# cost and Hessian
# ---------------------------------------------------------------------------

def cost(X0: StateField, problem: AssimProblem,
         ck: Checkpoints | None = None) -> CostBreakdown:
    if ck is None:
        ck = run_forward(X0, problem.cfg, problem.nsteps, problem.fs0)
    Jo, Jb = evaluate_cost_terms(X0, ck, problem)
    return CostBreakdown(Jo, Jb, Jo + problem.omega * Jb)


def hessian_vec(dX0: StateField, ck: Checkpoints, problem: AssimProblem) -> StateField:
    """Gauss-Newton Hessian application: TLM forward, collect the tangent
    residuals at the observation times, adjoint back, add omega*B^-1."""
    dX0 = problem.apply_control_mask(dX0)
    times = problem.obs.times()
    dxi0 = np.zeros((ck.nfloats, 2)) if ck.float_positions is not None else None
    _, _, tangents = tlm_window(ck, dX0, dxi0, collect_at=times)

    seeds = {}
    for t in times:
        rows, _ = _obs_rows(problem, t)
        seed = np.zeros((ck.nfloats, 2))
        np.add.at(seed, rows, tangents[t][rows])
        seeds[t] = seed

    lam = _zero_dual(ck)
    lam = adj_window(ck, lam, seeds)
    out = lam.state + problem.background_gradient(dX0)
    return problem.apply_control_mask(out)


# ---------------------------------------------------------------------------
# minimizer log
# ---------------------------------------------------------------------------

MINLOG_HEADER = ["outer", "inner", "J", "Jo", "Jb", "gnorm", "stepnorm"]


@dataclass
class MinimizerLog:
    """Per-iteration records. Rows with inner = 0 carry the true cost at the
    linearization point; rows with inner >= 1 carry the quadratic model
    value in the J column, the CG residual norm in gnorm and the increment
    norm so far in stepnorm."""

    rows: list[tuple] = field(default_factory=list)

    def add(self, outer, inner, J, Jo, Jb, gnorm, stepnorm):
        self.rows.append((int(outer), int(inner), float(J), float(Jo),
                          float(Jb), float(gnorm), float(stepnorm)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MINLOG_HEADER)
            for row in self.rows:
                w.writerow([row[0], row[1]] + [repr(x) for x in row[2:]])

    def inner_model_values(self):
        """{outer: [quadratic model values in inner order]}"""
        out: dict[int, list[float]] = {}
        for outer, inner, J, *_ in self.rows:
            if inner >= 1:
                out.setdefault(outer, []).append(J)
        return out


# ---------------------------------------------------------------------------
# inner conjugate gradient
# ---------------------------------------------------------------------------

def inner_solve(g: StateField, hvp, tol: float = 1e-3, max_iter: int = 10,
                log: MinimizerLog | None = None, outer: int = 0,
                j_ref: float = 0.0, jo_ref: float = 0.0, jb_ref: float = 0.0):
    """Conjugate gradient on H d = -g; quadratic model value nonincreasing.

    Negative curvature aborts the outer loop with a diagnostic (cannot
    happen with omega > 0 and exact transposes, which make H SPD).
    """
    grid = g.grid
    x = StateField.zeros(grid)
    hx = StateField.zeros(grid)
    r = -1.0 * g
    rs0 = r.dot(r)
    if rs0 == 0.0:
        return x
    p = r.copy()
    rs = rs0
    for it in range(1, max_iter + 1):
        hp = hvp(p)
        php = p.dot(hp)
        if php <= 0.0:
            raise IndefiniteHessianError(
                f"negative curvature {php:.3e} in inner iteration {it}")
        alpha = rs / php
        x = x + alpha * p
        hx = hx + alpha * hp
        r = r - alpha * hp
        qmodel = 0.5 * x.dot(hx) + g.dot(x)
        if log is not None:
            log.add(outer, it, j_ref + qmodel, jo_ref, jb_ref,
                    float(np.sqrt(r.dot(r))), x.norm())
        rs_new = r.dot(r)
        if np.sqrt(rs_new / rs0) <= tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def assimilate(problem: AssimProblem, outer_loops: int = 5, inner_iters: int = 10,
               cg_tol: float = 1e-3):
    """Incremental 4D-Var: relinearize, solve the quadratic subproblem by
    CG, update, repeat. Returns (analysis, MinimizerLog); the analysis is
    the best-J iterate seen (divergence guard)."""
    from .dynamics import CflError, DynamicsError

    log = MinimizerLog()
    X0 = problem.Xb.copy()
    best_J = np.inf
    best_X = X0
    prev_J = None
    rising = 0
    for outer in range(outer_loops):
        try:
            ck = run_forward(X0, problem.cfg, problem.nsteps, problem.fs0)
            cb, g = grad_cost(X0, problem, ck)
        except (CflError, DynamicsError):
            # a diverged iterate (unstable or non-finite trajectory) ends
            # the outer loop; the best iterate seen is returned
            break
        log.add(outer, 0, cb.J, cb.Jo, cb.Jb, cb.gnorm, 0.0)
        if cb.J < best_J:
            best_J, best_X = cb.J, X0
        if prev_J is not None and cb.J > prev_J:
            rising += 1
            if rising >= 2:
                break
        else:
            rising = 0
        prev_J = cb.J
        dx = inner_solve(g, lambda p: hessian_vec(p, ck, problem),
                         tol=cg_tol, max_iter=inner_iters, log=log,
                         outer=outer, j_ref=cb.J, jo_ref=cb.Jo, jb_ref=cb.Jb)
        # keep the control on the rigid-lid subspace (the state space the
        # model preserves); a constraint-violating barotropic component of
        # an increment would persist through the whole window
        X0 = project_state(X0 + dx)
    try:
        cb, _ = grad_cost(X0, problem)
        log.add(outer_loops, 0, cb.J, cb.Jo, cb.Jb, cb.gnorm, 0.0)
        if cb.J < best_J:
            best_J, best_X = cb.J, X0
    except (CflError, DynamicsError):
        pass
    return best_X, log
