"""Discrete domain, fields, difference operators, quadrature and norms.

The domain is the doubly periodic square torus (x, y) in [0, 2*pi)^2 times
the bounded interval z in [0, a]. Arrays are indexed [ix, iy, iz] with
uniform spacings dx = 2*pi/nx, dy = 2*pi/ny, dz = a/(nz-1). Prognostic
fields carry homogeneous Dirichlet values (exact zeros) at the z boundary
levels.

Operator conventions:

* horizontal derivatives are second-order centered differences with
  periodic wrap; higher orders by repeated application;
* the vertical derivative is centered at interior levels with one-sided
  second-order stencils at z = 0, a (diagnostic use only);
* cumulative vertical integrals and the vertical quadrature are
  trapezoidal, so the z-weight vector is (dz/2, dz, ..., dz, dz/2).

Every linear operator has a hand-coded plain transpose (suffix ``_t``,
exact with respect to the unweighted array dot product). Adjoints with
respect to the trapezoid inner product are the ``*_adjoint`` wrappers.
The composed centered-difference Poisson operator on the horizontal torus
is inverted exactly by Fourier diagonalization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi

SNAPSHOT_MAGIC = b"PEDA"
SNAPSHOT_VERSION = 1


class GridError(ValueError):
    pass


class FieldError(ValueError):
    pass


class PoissonError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cell counts and depth of the periodic box T^2 x (0, a)."""

    nx: int
    ny: int
    nz: int
    a: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise GridError(f"nx and ny must be >= 4, got {self.nx}x{self.ny}")
        if self.nz < 3:
            raise GridError(f"nz must be >= 3, got {self.nz}")
        if not self.a > 0.0:
            raise GridError(f"depth a must be positive, got {self.a}")

    @property
    def dx(self) -> float:
        return TWO_PI / self.nx

    @property
    def dy(self) -> float:
        return TWO_PI / self.ny

    @property
    def dz(self) -> float:
        return self.a / (self.nz - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.a, self.nz)

    @property
    def cell(self) -> float:
        """Uniform cell volume dx*dy*dz (the interior quadrature weight)."""
        return self.dx * self.dy * self.dz

    @property
    def zweights(self) -> np.ndarray:
        """Trapezoid weights along z; sums to a."""
        w = np.full(self.nz, self.dz)
        w[0] = 0.5 * self.dz
        w[-1] = 0.5 * self.dz
        return w

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


# ---------------------------------------------------------------------------
# first and second derivatives
# ---------------------------------------------------------------------------

def ddx(grid: Grid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * grid.dx)


def ddy(grid: Grid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * grid.dy)


def ddx_t(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Plain transpose of ddx (= -ddx; the centered stencil is antisymmetric)."""
    return -ddx(grid, f)


def ddy_t(grid: Grid, f: np.ndarray) -> np.ndarray:
    return -ddy(grid, f)


def ddz(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Centered in the interior, one-sided second order at z = 0, a."""
    h = 2.0 * grid.dz
    out = np.empty_like(f)
    out[:, :, 1:-1] = (f[:, :, 2:] - f[:, :, :-2]) / h
    out[:, :, 0] = (-3.0 * f[:, :, 0] + 4.0 * f[:, :, 1] - f[:, :, 2]) / h
    out[:, :, -1] = (3.0 * f[:, :, -1] - 4.0 * f[:, :, -2] + f[:, :, -3]) / h
    return out


def ddz_t(grid: Grid, g: np.ndarray) -> np.ndarray:
    """Plain transpose of ddz (the one-sided end rows make it asymmetric)."""
    h = 2.0 * grid.dz
    out = np.zeros_like(g)
    gi = g[:, :, 1:-1]
    out[:, :, 2:] += gi / h
    out[:, :, :-2] -= gi / h
    g0 = g[:, :, 0]
    out[:, :, 0] += -3.0 * g0 / h
    out[:, :, 1] += 4.0 * g0 / h
    out[:, :, 2] += -g0 / h
    g1 = g[:, :, -1]
    out[:, :, -1] += 3.0 * g1 / h
    out[:, :, -2] += -4.0 * g1 / h
    out[:, :, -3] += g1 / h
    return out


def d2x(grid: Grid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) / grid.dx**2


def d2y(grid: Grid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / grid.dy**2


def d2z(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Narrow 3-point second derivative; boundary rows are zero (Dirichlet)."""
    out = np.zeros_like(f)
    out[:, :, 1:-1] = (f[:, :, 2:] - 2.0 * f[:, :, 1:-1] + f[:, :, :-2]) / grid.dz**2
    return out


def d2z_t(grid: Grid, g: np.ndarray) -> np.ndarray:
    """Plain transpose of d2z (zero boundary rows become zero columns)."""
    out = np.zeros_like(g)
    gi = g[:, :, 1:-1] / grid.dz**2
    out[:, :, 2:] += gi
    out[:, :, 1:-1] -= 2.0 * gi
    out[:, :, :-2] += gi
    return out


def laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    """3D Laplacian, zero at the z boundary rows."""
    return d2x(grid, f) + d2y(grid, f) + d2z(grid, f)


def laplacian_t(grid: Grid, g: np.ndarray) -> np.ndarray:
    return d2x(grid, g) + d2y(grid, g) + d2z_t(grid, g)


def horizontal_derivative(grid: Grid, f: np.ndarray, axis: str, order: int = 1) -> np.ndarray:
    """Apply the centered first derivative along x or y ``order`` times."""
    if axis not in ("x", "y"):
        raise GridError(f"axis must be 'x' or 'y', got {axis!r}")
    if order < 1:
        raise GridError(f"derivative order must be >= 1, got {order}")
    if 2 * order > min(grid.nx, grid.ny):
        raise GridError(
            f"grid too small for order-{order} stencil on {grid.nx}x{grid.ny}"
        )
    op = ddx if axis == "x" else ddy
    out = f
    for _ in range(order):
        out = op(grid, out)
    return out


def vertical_derivative(grid: Grid, f: np.ndarray) -> np.ndarray:
    return ddz(grid, f)


# ---------------------------------------------------------------------------
# vertical quadrature
# ---------------------------------------------------------------------------

def cumtrapz_z(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Trapezoidal cumulative integral from z = 0; level 0 is exactly zero."""
    out = np.zeros_like(f)
    mids = 0.5 * grid.dz * (f[:, :, :-1] + f[:, :, 1:])
    out[:, :, 1:] = np.cumsum(mids, axis=2)
    return out


def cumtrapz_z_t(grid: Grid, g: np.ndarray) -> np.ndarray:
    """Plain transpose of cumtrapz_z."""
    # suffix sums S_j = sum_{k >= j} g_k, with S_{nz} = 0
    s = np.cumsum(g[:, :, ::-1], axis=2)[:, :, ::-1]
    sp = np.zeros_like(g)
    sp[:, :, :-1] = s[:, :, 1:]
    out = grid.dz * sp + 0.5 * grid.dz * g
    out[:, :, 0] = 0.5 * grid.dz * sp[:, :, 0]
    return out


cumulative_vertical_integral = cumtrapz_z


def trapz_z(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Trapezoid integral over the water column; returns an (nx, ny) array."""
    return (f * self_zw(grid)).sum(axis=2)


def trapz_z_t(grid: Grid, g: np.ndarray) -> np.ndarray:
    return g[:, :, None] * self_zw(grid)


def self_zw(grid: Grid) -> np.ndarray:
    return grid.zweights[None, None, :]


def depth_average(grid: Grid, f: np.ndarray) -> np.ndarray:
    return trapz_z(grid, f) / grid.a


def sum_interior(f: np.ndarray) -> np.ndarray:
    return f[:, :, 1:-1].sum(axis=2)


def spread_interior(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Broadcast a 2D field onto the interior z levels; zero at z = 0, a."""
    out = np.zeros((grid.nx, grid.ny, grid.nz))
    out[:, :, 1:-1] = c[:, :, None]
    return out


def zero_zbound(f: np.ndarray) -> np.ndarray:
    out = f.copy()
    out[:, :, 0] = 0.0
    out[:, :, -1] = 0.0
    return out


# ---------------------------------------------------------------------------
# 2D horizontal helpers (surface-pressure problem)
# ---------------------------------------------------------------------------

def ddx2d(grid: Grid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * grid.dx)


def ddy2d(grid: Grid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * grid.dy)


def poisson_solve_2d(grid: Grid, rhs: np.ndarray) -> np.ndarray:
    """Solve (Dx.Dx + Dy.Dy) p = rhs on the horizontal torus, zero mean.

    The operator is the composition of the centered first differences, so
    its Fourier symbol is -(sin(k dx)/dx)^2 - (sin(l dy)/dy)^2. Modes where
    the symbol vanishes are dropped; any right-hand side built from the
    same centered divergence has no component there, so the solve is exact.
    A residual above 1e-12 (incompatible rhs) is a hard error.
    """
    nx, ny = grid.nx, grid.ny
    sx = np.sin(TWO_PI * np.arange(nx) / nx) / grid.dx
    sy = np.sin(TWO_PI * np.arange(ny // 2 + 1) / ny) / grid.dy
    # the symbol vanishes identically at the zero and Nyquist frequencies;
    # pin them to exact zeros so the null-space mask is not defeated by
    # sin(pi) roundoff
    if nx % 2 == 0:
        sx[nx // 2] = 0.0
    if ny % 2 == 0:
        sy[ny // 2] = 0.0
    eig = -(sx[:, None] ** 2 + sy[None, :] ** 2)
    rhat = np.fft.rfft2(rhs)
    phat = np.zeros_like(rhat)
    nz_mask = eig != 0.0
    phat[nz_mask] = rhat[nz_mask] / eig[nz_mask]
    p = np.fft.irfft2(phat, s=(nx, ny))

    res = ddx2d(grid, ddx2d(grid, p)) + ddy2d(grid, ddy2d(grid, p)) - rhs
    tol = 1e-12 * max(1.0, float(np.abs(rhs).max()))
    if float(np.abs(res).max()) > tol:
        raise PoissonError(
            f"poisson residual {float(np.abs(res).max()):.3e} exceeds {tol:.3e} "
            "(incompatible right-hand side)"
        )
    return p


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------

def inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    """Quadrature inner product: rectangle in (x, y), trapezoid in z."""
    return float((f * g * self_zw(grid)).sum() * grid.dx * grid.dy)


def ddx_adjoint(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Adjoint of ddx in the quadrature inner product (uniform x-weights)."""
    return -ddx(grid, f)


def ddy_adjoint(grid: Grid, f: np.ndarray) -> np.ndarray:
    return -ddy(grid, f)


def _with_zweights(grid, op_t, f):
    zw = self_zw(grid)
    return op_t(grid, f * zw) / zw


def ddz_adjoint(grid: Grid, f: np.ndarray) -> np.ndarray:
    return _with_zweights(grid, ddz_t, f)


def cumtrapz_z_adjoint(grid: Grid, f: np.ndarray) -> np.ndarray:
    return _with_zweights(grid, cumtrapz_z_t, f)


def laplacian_adjoint(grid: Grid, f: np.ndarray) -> np.ndarray:
    return _with_zweights(grid, laplacian_t, f)


# ---------------------------------------------------------------------------
# state vector
# ---------------------------------------------------------------------------

@dataclass
class StateField:
    """The prognostic triple X = (u, v, theta) on one grid.

    Supports the vector-space arithmetic the minimizer needs. ``dot`` is the
    cell-weighted product dx*dy*dz * sum(entries); for valid prognostic
    fields (zero Dirichlet rows) it equals the trapezoid product.
    """

    grid: Grid
    u: np.ndarray
    v: np.ndarray
    theta: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "StateField":
        return cls(grid, grid.zeros(), grid.zeros(), grid.zeros())

    @classmethod
    def from_arrays(cls, grid: Grid, u, v, theta) -> "StateField":
        shape = grid.shape
        arrs = [np.asarray(a, dtype=float) for a in (u, v, theta)]
        for arr in arrs:
            if arr.shape != shape:
                raise FieldError(f"component shape {arr.shape} != grid shape {shape}")
        return cls(grid, *arrs)

    def components(self):
        return (self.u, self.v, self.theta)

    def copy(self) -> "StateField":
        return StateField(self.grid, self.u.copy(), self.v.copy(), self.theta.copy())

    def validate(self) -> None:
        for name, f in zip(("u", "v", "theta"), self.components()):
            if not np.all(np.isfinite(f)):
                raise FieldError(f"non-finite values in {name}")
            if np.any(f[:, :, 0] != 0.0) or np.any(f[:, :, -1] != 0.0):
                raise FieldError(f"{name} is not zero at the z boundary levels")

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(f)) for f in self.components())

    def __add__(self, other: "StateField") -> "StateField":
        return StateField(self.grid, self.u + other.u, self.v + other.v,
                          self.theta + other.theta)

    def __sub__(self, other: "StateField") -> "StateField":
        return StateField(self.grid, self.u - other.u, self.v - other.v,
                          self.theta - other.theta)

    def __mul__(self, c: float) -> "StateField":
        return StateField(self.grid, c * self.u, c * self.v, c * self.theta)

    __rmul__ = __mul__

    def __neg__(self) -> "StateField":
        return self * (-1.0)

    def dot(self, other: "StateField") -> float:
        s = (self.u * other.u).sum() + (self.v * other.v).sum() \
            + (self.theta * other.theta).sum()
        return float(s) * self.grid.cell

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    def max_abs(self) -> float:
        return max(float(np.abs(f).max()) for f in self.components())


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormParams:
    """Derivative order m and temperature weight K of the weighted norms."""

    m: int = 2
    K: float = 1.0

    def __post_init__(self):
        if self.m < 2:
            raise GridError(f"m must be >= 2, got {self.m}")
        if not self.K > 0.0:
            raise GridError(f"K must be positive, got {self.K}")


def recommended_K(a: float, nu: float, gamma: float, beta: float) -> float:
    """Smallest K the energy-inequality derivation allows."""
    return 2.0 * max(4.0 * a**2 / nu**2, 2.0 * gamma * beta)


def multi_indices(m: int) -> list[tuple[int, int]]:
    """All horizontal multi-indices with |alpha| <= m, fixed order."""
    return [(i, t - i) for t in range(m + 1) for i in range(t + 1)]


def _dalpha(grid: Grid, f: np.ndarray, i: int, j: int) -> np.ndarray:
    out = f
    for _ in range(i):
        out = ddx(grid, out)
    for _ in range(j):
        out = ddy(grid, out)
    return out


def _check_stencil(grid: Grid, m: int) -> None:
    if 2 * m > min(grid.nx, grid.ny):
        raise GridError(f"grid {grid.nx}x{grid.ny} too small for m={m} stencils")


def norm_2m(X: StateField, p: NormParams) -> float:
    """K-weighted discrete analog of the m-derivative L2 norm of the triple."""
    g = X.grid
    _check_stencil(g, p.m)
    acc = 0.0
    for (i, j) in multi_indices(p.m):
        for f, wgt in zip(X.components(), (1.0, 1.0, p.K)):
            d = _dalpha(g, f, i, j)
            acc += wgt * inner(g, d, d)
    return float(np.sqrt(acc))


def norm_U(X: StateField, p: NormParams, weights=None) -> float:
    """norm_2m plus all first-derivative terms, K on the theta contributions.
    ``weights`` overrides the per-component factors (default (1, 1, K))."""
    g = X.grid
    _check_stencil(g, p.m)
    if weights is None:
        weights = (1.0, 1.0, p.K)
    acc = 0.0
    for (i, j) in multi_indices(p.m):
        for f, wgt in zip(X.components(), weights):
            d = _dalpha(g, f, i, j)
            acc += wgt * inner(g, d, d)
            for grad in (ddx(g, d), ddy(g, d), ddz(g, d)):
                acc += wgt * inner(g, grad, grad)
    return float(np.sqrt(acc))


def grad_norm_sq_2m(X: StateField, p: NormParams) -> float:
    """Squared 2,m norm of the spatial gradient of the triple (K-weighted)."""
    g = X.grid
    _check_stencil(g, p.m)
    acc = 0.0
    for (i, j) in multi_indices(p.m):
        for f, wgt in zip(X.components(), (1.0, 1.0, p.K)):
            d = _dalpha(g, f, i, j)
            for grad in (ddx(g, d), ddy(g, d), ddz(g, d)):
                acc += wgt * inner(g, grad, grad)
    return acc


def unorm_gradient(X: StateField, p: NormParams, weights=None) -> StateField:
    """Gradient of 0.5*norm_U(X)^2 with respect to the cell-weighted product.

    Applies the plain transpose of every derivative stack against the
    quadrature weights and rescales by the uniform cell weight; boundary
    rows are zeroed (they are not control degrees of freedom).
    """
    g = X.grid
    _check_stencil(g, p.m)
    if weights is None:
        weights = (1.0, 1.0, p.K)
    zw = self_zw(g)
    area = g.dx * g.dy
    out = []
    for f, wgt in zip(X.components(), weights):
        acc = np.zeros_like(f)
        for (i, j) in multi_indices(p.m):
            d = _dalpha(g, f, i, j)
            # transpose of repeated centered derivatives: (-1)^(i+j) * same op
            sign = (-1.0) ** (i + j)
            acc += sign * _dalpha(g, d * zw, i, j)
            for op, op_t in ((ddx, ddx_t), (ddy, ddy_t), (ddz, ddz_t)):
                grad = op(g, d)
                acc += sign * _dalpha(g, op_t(g, grad * zw), i, j)
        out.append(zero_zbound(acc * area * wgt / g.cell))
    return StateField(g, *out)


# ---------------------------------------------------------------------------
# field snapshot files
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIId")


def write_snapshot(path, grid: Grid, values: np.ndarray) -> None:
    """One component per file: magic, version, nx, ny, nz, a, then f64
    little-endian values with x fastest, then y, then z."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise FieldError(f"snapshot shape {values.shape} != grid shape {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
                              grid.nx, grid.ny, grid.nz, grid.a))
        fh.write(values.astype("<f8").flatten(order="F").tobytes())


def read_snapshot(path) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FieldError(f"truncated snapshot header in {path}")
        magic, version, nx, ny, nz, a = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise FieldError(f"bad magic {magic!r} in {path}")
        if version != SNAPSHOT_VERSION:
            raise FieldError(f"unsupported snapshot version {version} in {path}")
        grid = Grid(nx, ny, nz, a)
        raw = fh.read(nx * ny * nz * 8)
        if len(raw) != nx * ny * nz * 8:
            raise FieldError(f"truncated snapshot data in {path}")
    flat = np.frombuffer(raw, dtype="<f8")
    return grid, flat.reshape((nx, ny, nz), order="F").astype(float)


def write_state(dirpath, prefix: str, X: StateField) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for name, f in zip(("u", "v", "theta"), X.components()):
        write_snapshot(d / f"{prefix}_{name}.peda", X.grid, f)


def read_state(dirpath, prefix: str) -> StateField:
    d = Path(dirpath)
    comps = {}
    grid = None
    for name in ("u", "v", "theta"):
        path = d / f"{prefix}_{name}.peda"
        if not path.exists():
            raise FieldError(f"missing snapshot file {path}")
        g, vals = read_snapshot(path)
        if grid is None:
            grid = g
        elif g != grid:
            raise FieldError(f"snapshot grid mismatch in {path}: {g.shape} vs {grid.shape}")
        comps[name] = vals
    return StateField(grid, comps["u"], comps["v"], comps["theta"])
