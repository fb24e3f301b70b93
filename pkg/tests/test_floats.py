import numpy as np
import pytest

from peda.dynamics import ModelConfig, PhysParams, Trajectory, integrate, random_state
from peda.floats import (
    FloatError,
    FloatSet,
    InterpStencil,
    ObsError,
    ObsSet,
    advect_floats,
    interp_uv,
    observe,
    wrap_diff,
    wrap_positions,
)
from peda.grid import Grid, StateField

TWO_PI = 2 * np.pi


def steady(g, u, v):
    return StateField(g, u, v, np.zeros(g.shape))


class TestWrapping:
    def test_positions_wrapped(self):
        p = wrap_positions(np.array([[7.0, -0.5], [2.0, 13.0]]))
        assert np.all(p >= 0.0) and np.all(p < TWO_PI)

    def test_wrap_diff_range_and_tie(self):
        d = wrap_diff(np.array([np.pi, -np.pi, 3.5, -3.5, 0.25]))
        assert d[0] == pytest.approx(np.pi)
        assert d[1] == pytest.approx(np.pi)  # tie breaks toward +pi
        assert np.all(d > -np.pi) and np.all(d <= np.pi)
        assert d[4] == pytest.approx(0.25)


class TestInterp:
    def test_constant_field(self):
        g = Grid(16, 16, 9)
        u = np.full(g.shape, 0.7)
        v = np.full(g.shape, -0.2)
        out = interp_uv(g, u, v, np.array([[1.234, 4.2], [0.0, 6.1]]), 0.37)
        assert np.allclose(out[:, 0], 0.7)
        assert np.allclose(out[:, 1], -0.2)

    def test_bilinear_exact_in_cell(self):
        # bilinear interpolation reproduces the bilinear combination of the
        # four cell corners exactly
        g = Grid(16, 16, 9)
        rng = np.random.default_rng(0)
        f = rng.normal(size=g.shape)
        tx, ty = 0.3, 0.8
        pos = np.array([[(2 + tx) * g.dx, (3 + ty) * g.dy]])
        st = InterpStencil(g, pos, 0.5)
        val = st.value(f)
        k0, tz = st.k0, st.tz
        man = 0.0
        for (i, j, wxy) in ((2, 3, (1 - tx) * (1 - ty)), (3, 3, tx * (1 - ty)),
                            (2, 4, (1 - tx) * ty), (3, 4, tx * ty)):
            man += wxy * ((1 - tz) * f[i, j, k0] + tz * f[i, j, k0 + 1])
        assert val[0] == pytest.approx(man, abs=1e-14)

    def test_seam_matches_rolled_grid(self):
        g = Grid(16, 16, 9)
        rng = np.random.default_rng(1)
        u = rng.normal(size=g.shape)
        v = rng.normal(size=g.shape)
        pos = np.array([[TWO_PI - g.dx / 2, 1.0]])
        a = interp_uv(g, u, v, pos, 0.5)
        k = 8
        pos2 = wrap_positions(pos + np.array([k * g.dx, 0.0]))
        b = interp_uv(g, np.roll(u, k, axis=0), np.roll(v, k, axis=0), pos2, 0.5)
        assert np.abs(a - b).max() <= 1e-12

    def test_z0_outside_domain(self):
        g = Grid(8, 8, 5, 1.0)
        with pytest.raises(FloatError):
            InterpStencil(g, np.zeros((1, 2)), 1.5)

    def test_gradients_match_fd(self):
        g = Grid(16, 16, 9)
        rng = np.random.default_rng(2)
        f = rng.normal(size=g.shape)
        pos = np.array([[2.13, 3.71]])
        st = InterpStencil(g, pos, 0.43)
        eps = 1e-7
        for col, gfun in ((0, st.grad_x), (1, st.grad_y)):
            dp = pos.copy()
            dp[0, col] += eps
            dm = pos.copy()
            dm[0, col] -= eps
            fd = (InterpStencil(g, dp, 0.43).value(f)
                  - InterpStencil(g, dm, 0.43).value(f)) / (2 * eps)
            assert gfun(f)[0] == pytest.approx(fd[0], rel=1e-6)

    def test_scatter_is_transpose(self):
        g = Grid(12, 12, 7)
        rng = np.random.default_rng(3)
        f = rng.normal(size=g.shape)
        pos = rng.uniform(0, TWO_PI, size=(9, 2))
        st = InterpStencil(g, pos, 0.61)
        lam = rng.normal(size=9)
        out = np.zeros(g.shape)
        st.scatter(out, lam)
        assert float((st.value(f) * lam).sum()) == pytest.approx(
            float((f * out).sum()), rel=1e-13)


class TestAdvect:
    def test_constant_velocity(self):
        g = Grid(16, 16, 9)
        X = steady(g, np.full(g.shape, 0.1), np.zeros(g.shape))
        fs = FloatSet(np.array([[1.0, 1.0]]), 0.5, np.array([0]))
        out = advect_floats(fs, X, X, 1.0)
        assert np.allclose(out.positions, [[1.1, 1.0]])

    def test_wraparound(self):
        g = Grid(16, 16, 9)
        X = steady(g, np.full(g.shape, 0.1), np.zeros(g.shape))
        fs = FloatSet(np.array([[TWO_PI - 0.05, 0.0]]), 0.5, np.array([0]))
        out = advect_floats(fs, X, X, 1.0)
        assert out.positions[0, 0] == pytest.approx(0.05)
        assert out.positions[0, 1] == pytest.approx(0.0)

    def test_steady_shear_vs_fine_reference(self):
        g = Grid(16, 16, 9)
        _, y, _ = np.meshgrid(g.x, g.y, g.z, indexing="ij")
        X = steady(g, np.sin(y), np.zeros(g.shape))
        fs = FloatSet(np.array([[0.5, 2.2]]), 0.5, np.array([0]))
        coarse = fs
        for _ in range(100):
            coarse = advect_floats(coarse, X, X, 0.01)
        fine = fs
        for _ in range(10000):
            fine = advect_floats(fine, X, X, 0.0001)
        assert np.abs(wrap_diff(coarse.positions - fine.positions)).max() <= 1e-4

    def test_curved_field_vs_fine_reference(self):
        g = Grid(16, 16, 9)
        x, y, _ = np.meshgrid(g.x, g.y, g.z, indexing="ij")
        X = steady(g, np.sin(y), 0.5 * np.sin(x))
        fs = FloatSet(np.array([[0.5, 2.2], [4.0, 1.1]]), 0.5, np.array([0, 1]))
        coarse = fs
        for _ in range(100):
            coarse = advect_floats(coarse, X, X, 0.01)
        fine = fs
        for _ in range(10000):
            fine = advect_floats(fine, X, X, 0.0001)
        assert np.abs(wrap_diff(coarse.positions - fine.positions)).max() <= 1e-4

    def test_permutation_equivariance(self):
        g = Grid(16, 16, 9)
        rng = np.random.default_rng(4)
        X = steady(g, rng.normal(size=g.shape), rng.normal(size=g.shape))
        pos = rng.uniform(0, TWO_PI, size=(7, 2))
        fs = FloatSet(pos, 0.5, np.arange(7))
        perm = rng.permutation(7)
        fsp = FloatSet(pos[perm], 0.5, np.arange(7)[perm])
        a = advect_floats(fs, X, X, 0.3)
        b = advect_floats(fsp, X, X, 0.3)
        assert np.array_equal(a.positions[perm], b.positions)

    def test_positions_stay_wrapped(self):
        g = Grid(16, 16, 9)
        rng = np.random.default_rng(5)
        X = steady(g, 3 * rng.normal(size=g.shape), 3 * rng.normal(size=g.shape))
        fs = FloatSet(rng.uniform(0, TWO_PI, size=(20, 2)), 0.5, np.arange(20))
        for _ in range(50):
            fs = advect_floats(fs, X, X, 0.1)
            assert np.all(fs.positions >= 0.0) and np.all(fs.positions < TWO_PI)


class TestObserve:
    def make_traj(self, nsteps=20):
        g = Grid(12, 12, 7)
        ph = PhysParams(alpha=1.0, beta=0.5, gamma=0.5, nu=0.05)
        cfg = ModelConfig(g, ph, dt=0.01)
        traj = Trajectory()
        integrate(random_state(g, seed=6, amplitude=0.3), cfg, nsteps,
                  recorder=traj)
        return g, cfg, traj

    def test_time_zero_returns_initial(self):
        g, cfg, traj = self.make_traj()
        fs = FloatSet(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5, np.array([0, 1]))
        out = observe(traj, fs, [0], cfg.dt)
        assert np.array_equal(out[0], fs.positions)

    def test_zero_velocity_constant_positions(self):
        g = Grid(8, 8, 5)
        cfg = ModelConfig(g, PhysParams(), dt=0.01, linear=True)
        traj = Trajectory()
        integrate(StateField.zeros(g), cfg, 10, recorder=traj)
        fs = FloatSet(np.array([[1.0, 2.0]]), 0.5, np.array([0]))
        out = observe(traj, fs, [0, 5, 10], cfg.dt)
        for t in (0, 5, 10):
            assert np.array_equal(out[t], fs.positions)

    def test_out_of_range_time(self):
        g, cfg, traj = self.make_traj(10)
        fs = FloatSet(np.array([[1.0, 2.0]]), 0.5, np.array([0]))
        with pytest.raises(ObsError):
            observe(traj, fs, [11], cfg.dt)


class TestObsSet:
    def test_csv_roundtrip(self, tmp_path):
        obs = ObsSet(np.array([0, 1, 0]), np.array([5, 5, 10]),
                     np.array([[1.0, 2.0], [3.0, 4.0], [5.5, 0.25]]),
                     np.array([0.01, 0.01, 0.01]))
        path = tmp_path / "obs.csv"
        obs.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "float_id,time_index,x,y,noise_sd"
        back = ObsSet.from_csv(path)
        assert np.array_equal(back.float_id, obs.float_id)
        assert np.array_equal(back.time_index, obs.time_index)
        assert np.array_equal(back.pos, obs.pos)

    def test_at_time_sorted_by_id(self):
        obs = ObsSet(np.array([3, 1, 2]), np.array([5, 5, 5]),
                     np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
                     np.zeros(3))
        ids, pos = obs.at_time(5)
        assert list(ids) == [1, 2, 3]
        assert pos[0, 0] == 2.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ObsError):
            ObsSet.from_csv(tmp_path / "nope.csv")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "obs.csv"
        p.write_text("a,b,c\n")
        with pytest.raises(ObsError):
            ObsSet.from_csv(p)
