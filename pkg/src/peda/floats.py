"""Lagrangian floats drifting at fixed depth and the observation operator.

Float positions live on the horizontal torus [0, 2*pi)^2 at a common depth
z0; they follow d(xi)/dt = U(t, xi, z0). Velocities are sampled by
bilinear interpolation in (x, y) with periodic wrap and linear
interpolation in z between the bracketing levels. Advection is Heun in
time using the two consecutive model states of each step, so the float
update aligns one-to-one with the model checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import TWO_PI, Grid, StateField

OBS_CSV_HEADER = ["float_id", "time_index", "x", "y", "noise_sd"]


class FloatError(ValueError):
    pass


class ObsError(ValueError):
    pass


def wrap_positions(pos: np.ndarray) -> np.ndarray:
    return np.mod(pos, TWO_PI)


def wrap_diff(d: np.ndarray) -> np.ndarray:
    """Shortest periodic displacement per component, in (-pi, pi]
    (the +-pi tie breaks toward +pi)."""
    return np.pi - np.mod(np.pi - d, TWO_PI)


@dataclass
class FloatSet:
    positions: np.ndarray  # (M, 2) in [0, 2*pi)^2
    z0: float
    ids: np.ndarray  # (M,) stable integer labels

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise FloatError(f"positions must be (M, 2), got {self.positions.shape}")
        if self.ids.shape != (self.positions.shape[0],):
            raise FloatError("ids must match the number of floats")

    @classmethod
    def seed_uniform(cls, count: int, z0: float, rng: np.random.Generator) -> "FloatSet":
        pos = rng.uniform(0.0, TWO_PI, size=(count, 2))
        return cls(pos, z0, np.arange(count))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "FloatSet":
        return FloatSet(self.positions.copy(), self.z0, self.ids.copy())


# ---------------------------------------------------------------------------
# interpolation kernel (value, position derivatives, transpose scatter)
# ---------------------------------------------------------------------------

class InterpStencil:
    """Corner indices and weights of bilinear-(x,y) / linear-z sampling at a
    batch of positions. z0 is fixed per stencil (floats do not move
    vertically), so the z bracket is shared."""

    def __init__(self, grid: Grid, pos: np.ndarray, z0: float):
        if not (0.0 <= z0 <= grid.a):
            raise FloatError(f"z0={z0} outside [0, {grid.a}]")
        self.grid = grid
        xs = np.mod(pos[:, 0], TWO_PI) / grid.dx
        ys = np.mod(pos[:, 1], TWO_PI) / grid.dy
        ix = np.floor(xs)
        iy = np.floor(ys)
        self.tx = xs - ix
        self.ty = ys - iy
        self.i0 = ix.astype(np.int64) % grid.nx
        self.j0 = iy.astype(np.int64) % grid.ny
        self.i1 = (self.i0 + 1) % grid.nx
        self.j1 = (self.j0 + 1) % grid.ny
        k0 = min(int(z0 / grid.dz), grid.nz - 2)
        self.k0 = k0
        self.tz = z0 / grid.dz - k0

    def _corners(self, f: np.ndarray):
        k0, k1 = self.k0, self.k0 + 1
        return (f[self.i0, self.j0, k0], f[self.i1, self.j0, k0],
                f[self.i0, self.j1, k0], f[self.i1, self.j1, k0],
                f[self.i0, self.j0, k1], f[self.i1, self.j0, k1],
                f[self.i0, self.j1, k1], f[self.i1, self.j1, k1])

    def _wxy(self):
        tx, ty = self.tx, self.ty
        return ((1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty)

    def value(self, f: np.ndarray) -> np.ndarray:
        c = self._corners(f)
        w00, w10, w01, w11 = self._wxy()
        lo = w00 * c[0] + w10 * c[1] + w01 * c[2] + w11 * c[3]
        hi = w00 * c[4] + w10 * c[5] + w01 * c[6] + w11 * c[7]
        return (1 - self.tz) * lo + self.tz * hi

    def grad_x(self, f: np.ndarray) -> np.ndarray:
        """d(value)/dx at the sample points."""
        c = self._corners(f)
        ty = self.ty
        lo = (1 - ty) * (c[1] - c[0]) + ty * (c[3] - c[2])
        hi = (1 - ty) * (c[5] - c[4]) + ty * (c[7] - c[6])
        return ((1 - self.tz) * lo + self.tz * hi) / self.grid.dx

    def grad_y(self, f: np.ndarray) -> np.ndarray:
        c = self._corners(f)
        tx = self.tx
        lo = (1 - tx) * (c[2] - c[0]) + tx * (c[3] - c[1])
        hi = (1 - tx) * (c[6] - c[4]) + tx * (c[7] - c[5])
        return ((1 - self.tz) * lo + self.tz * hi) / self.grid.dy

    def scatter(self, out: np.ndarray, vals: np.ndarray) -> None:
        """Transpose of ``value``: accumulate weights*vals into the field.
        np.add.at applies the updates in float order (ids are kept sorted),
        so the accumulation order is deterministic."""
        w00, w10, w01, w11 = self._wxy()
        k0, k1 = self.k0, self.k0 + 1
        lo = (1 - self.tz) * vals
        hi = self.tz * vals
        np.add.at(out, (self.i0, self.j0, k0), w00 * lo)
        np.add.at(out, (self.i1, self.j0, k0), w10 * lo)
        np.add.at(out, (self.i0, self.j1, k0), w01 * lo)
        np.add.at(out, (self.i1, self.j1, k0), w11 * lo)
        np.add.at(out, (self.i0, self.j0, k1), w00 * hi)
        np.add.at(out, (self.i1, self.j0, k1), w10 * hi)
        np.add.at(out, (self.i0, self.j1, k1), w01 * hi)
        np.add.at(out, (self.i1, self.j1, k1), w11 * hi)


def interp_uv(grid: Grid, u: np.ndarray, v: np.ndarray, pos: np.ndarray,
              z0: float) -> np.ndarray:
    """Velocity samples at positions; returns an (M, 2) array."""
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    st = InterpStencil(grid, pos, z0)
    return np.stack([st.value(u), st.value(v)], axis=1)


# ---------------------------------------------------------------------------
# advection and observation
# ---------------------------------------------------------------------------

def advect_floats(fs: FloatSet, X_start: StateField, X_end: StateField,
                  dt: float) -> FloatSet:
    """Heun update through one model step; floats never interact."""
    g = X_start.grid
    k1 = interp_uv(g, X_start.u, X_start.v, fs.positions, fs.z0)
    mid = fs.positions + dt * k1
    k2 = interp_uv(g, X_end.u, X_end.v, mid, fs.z0)
    new = wrap_positions(fs.positions + 0.5 * dt * (k1 + k2))
    return FloatSet(new, fs.z0, fs.ids.copy())


def observe(trajectory, fs0: FloatSet, obs_times, dt: float) -> dict[int, np.ndarray]:
    """Advect fs0 through the recorded states; emit positions at the
    requested time indices (index 0 is the initial position)."""
    states = trajectory.states if hasattr(trajectory, "states") else trajectory
    times = sorted(set(int(t) for t in obs_times))
    if not times:
        return {}
    if times[0] < 0 or times[-1] > len(states) - 1:
        raise ObsError(
            f"observation time {times[0] if times[0] < 0 else times[-1]} outside "
            f"trajectory [0, {len(states) - 1}]"
        )
    out: dict[int, np.ndarray] = {}
    fs = fs0.copy()
    if 0 in times:
        out[0] = fs.positions.copy()
    for n in range(times[-1]):
        fs = advect_floats(fs, states[n], states[n + 1], dt)
        if (n + 1) in times:
            out[n + 1] = fs.positions.copy()
    return out


# ---------------------------------------------------------------------------
# observation sets
# ---------------------------------------------------------------------------

@dataclass
class ObsSet:
    float_id: np.ndarray  # (N,)
    time_index: np.ndarray  # (N,)
    pos: np.ndarray  # (N, 2) observed positions, wrapped
    noise_sd: np.ndarray  # (N,)

    def __post_init__(self):
        self.float_id = np.asarray(self.float_id, dtype=np.int64)
        self.time_index = np.asarray(self.time_index, dtype=np.int64)
        self.pos = wrap_positions(np.asarray(self.pos, dtype=float))
        self.noise_sd = np.asarray(self.noise_sd, dtype=float)
        n = self.float_id.shape[0]
        if self.time_index.shape != (n,) or self.pos.shape != (n, 2) \
                or self.noise_sd.shape != (n,):
            raise ObsError("inconsistent observation record arrays")

    @property
    def count(self) -> int:
        return self.float_id.shape[0]

    def times(self) -> list[int]:
        return sorted(set(int(t) for t in self.time_index))

    def at_time(self, t: int):
        """Rows observed at time index t, sorted by float id."""
        sel = np.nonzero(self.time_index == t)[0]
        order = np.argsort(self.float_id[sel], kind="stable")
        sel = sel[order]
        return self.float_id[sel], self.pos[sel]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(OBS_CSV_HEADER)
            for i in range(self.count):
                w.writerow([int(self.float_id[i]), int(self.time_index[i]),
                            repr(float(self.pos[i, 0])), repr(float(self.pos[i, 1])),
                            repr(float(self.noise_sd[i]))])

    @classmethod
    def from_csv(cls, path) -> "ObsSet":
        path = Path(path)
        if not path.exists():
            raise ObsError(f"missing observation file {path}")
        fid, tix, xs, ys, sd = [], [], [], [], []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if header != OBS_CSV_HEADER:
                raise ObsError(f"bad observation header in {path}: {header}")
            for row in r:
                if not row:
                    continue
                fid.append(int(row[0]))
                tix.append(int(row[1]))
                xs.append(float(row[2]))
                ys.append(float(row[3]))
                sd.append(float(row[4]))
        return cls(np.array(fid), np.array(tix),
                   np.column_stack([xs, ys]) if fid else np.zeros((0, 2)),
                   np.array(sd))
