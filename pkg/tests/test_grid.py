import numpy as np
import pytest

from peda.grid import (
    Grid,
    GridError,
    FieldError,
    NormParams,
    PoissonError,
    StateField,
    cumtrapz_z,
    cumtrapz_z_adjoint,
    cumtrapz_z_t,
    d2z,
    d2z_t,
    ddx,
    ddx2d,
    ddx_t,
    ddy,
    ddy2d,
    ddy_t,
    ddz,
    ddz_adjoint,
    ddz_t,
    grad_norm_sq_2m,
    horizontal_derivative,
    inner,
    laplacian,
    laplacian_adjoint,
    laplacian_t,
    norm_2m,
    norm_U,
    poisson_solve_2d,
    read_snapshot,
    read_state,
    recommended_K,
    unorm_gradient,
    vertical_derivative,
    write_snapshot,
    write_state,
    zero_zbound,
)


def mesh(g):
    return np.meshgrid(g.x, g.y, g.z, indexing="ij")


class TestGridValidation:
    def test_spacings(self):
        g = Grid(8, 16, 5, 2.0)
        assert g.dx == pytest.approx(2 * np.pi / 8)
        assert g.dy == pytest.approx(2 * np.pi / 16)
        assert g.dz == pytest.approx(0.5)
        assert g.z[0] == 0.0 and g.z[-1] == 2.0

    @pytest.mark.parametrize("args", [(3, 8, 5), (8, 3, 5), (8, 8, 2)])
    def test_too_small(self, args):
        with pytest.raises(GridError):
            Grid(*args)

    def test_nonpositive_depth(self):
        with pytest.raises(GridError):
            Grid(8, 8, 5, 0.0)

    def test_zweights_sum_to_depth(self):
        g = Grid(8, 8, 9, 1.7)
        assert g.zweights.sum() == pytest.approx(1.7)


class TestHorizontalDerivative:
    def test_constant_is_zero(self):
        g = Grid(16, 16, 5)
        f = np.full(g.shape, 3.0)
        assert np.all(horizontal_derivative(g, f, "x") == 0.0)
        assert np.all(horizontal_derivative(g, f, "y", order=2) == 0.0)

    def test_sin_first_derivative(self):
        # error bound (dx^2/6)*max|f'''| = (2*pi/64)^2/6 for sin
        g = Grid(64, 8, 3)
        x, _, _ = mesh(g)
        d = horizontal_derivative(g, np.sin(x), "x")
        assert np.abs(d - np.cos(x)).max() <= 0.005

    def test_sin_second_derivative(self):
        g = Grid(64, 8, 3)
        x, _, _ = mesh(g)
        d = horizontal_derivative(g, np.sin(x), "x", order=2)
        assert np.abs(d + np.sin(x)).max() <= 0.01

    def test_shift_equivariance_exact(self):
        g = Grid(16, 12, 5)
        rng = np.random.default_rng(0)
        f = rng.normal(size=g.shape)
        for axis, roll_axis in (("x", 0), ("y", 1)):
            for k in (1, 3, 7):
                a = horizontal_derivative(g, np.roll(f, k, axis=roll_axis), axis)
                b = np.roll(horizontal_derivative(g, f, axis), k, axis=roll_axis)
                assert np.array_equal(a, b)

    def test_stencil_too_wide(self):
        g = Grid(4, 4, 3)
        with pytest.raises(GridError):
            horizontal_derivative(g, np.zeros(g.shape), "x", order=3)


class TestVerticalOps:
    def test_ddz_parabola(self):
        g = Grid(4, 4, 33, 1.0)
        _, _, z = mesh(g)
        d = vertical_derivative(g, z * (1.0 - z))
        interior = d[:, :, 1:-1]
        expect = (1.0 - 2.0 * z)[:, :, 1:-1]
        assert np.abs(interior - expect).max() <= 0.01

    def test_ddz_constant_zero(self):
        g = Grid(4, 4, 7)
        assert np.all(vertical_derivative(g, np.full(g.shape, 2.5)) == 0.0)

    def test_ddz_linear_exact_interior(self):
        g = Grid(4, 4, 9, 2.0)
        _, _, z = mesh(g)
        d = vertical_derivative(g, 3.0 * z + 1.0)
        assert np.abs(d - 3.0).max() <= 1e-12

    def test_cumtrapz_zero_and_const(self):
        g = Grid(4, 4, 9, 1.0)
        assert np.all(cumtrapz_z(g, np.zeros(g.shape)) == 0.0)
        _, _, z = mesh(g)
        out = cumtrapz_z(g, np.ones(g.shape))
        assert np.abs(out - z).max() <= 1e-14

    def test_cumtrapz_linear(self):
        g = Grid(4, 4, 33, 1.0)
        _, _, z = mesh(g)
        out = cumtrapz_z(g, z)
        assert np.abs(out - z**2 / 2).max() <= 1e-3

    def test_cumtrapz_starts_at_zero(self):
        g = Grid(4, 4, 9)
        rng = np.random.default_rng(1)
        out = cumtrapz_z(g, rng.normal(size=g.shape))
        assert np.all(out[:, :, 0] == 0.0)


class TestTransposes:
    """Every linear operator satisfies <L f, g> = <f, L* g>."""

    @pytest.mark.parametrize("op,op_t", [
        (ddx, ddx_t), (ddy, ddy_t), (ddz, ddz_t), (d2z, d2z_t),
        (cumtrapz_z, cumtrapz_z_t), (laplacian, laplacian_t),
    ])
    def test_plain_transpose(self, op, op_t):
        g = Grid(12, 10, 7, 1.3)
        rng = np.random.default_rng(5)
        f = rng.normal(size=g.shape)
        h = rng.normal(size=g.shape)
        lhs = float((op(g, f) * h).sum())
        rhs = float((f * op_t(g, h)).sum())
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(h)

    @pytest.mark.parametrize("op,adj", [
        (ddz, ddz_adjoint), (cumtrapz_z, cumtrapz_z_adjoint),
        (laplacian, laplacian_adjoint),
    ])
    def test_quadrature_adjoint(self, op, adj):
        g = Grid(12, 10, 7, 1.3)
        rng = np.random.default_rng(6)
        f = rng.normal(size=g.shape)
        h = rng.normal(size=g.shape)
        lhs = inner(g, op(g, f), h)
        rhs = inner(g, f, adj(g, h))
        scale = np.sqrt(inner(g, f, f) * inner(g, h, h))
        assert abs(lhs - rhs) <= 1e-12 * scale


class TestPoisson:
    def test_solves_compatible_rhs(self):
        g = Grid(16, 12, 5)
        rng = np.random.default_rng(2)
        rhs = ddx2d(g, rng.normal(size=(16, 12))) + ddy2d(g, rng.normal(size=(16, 12)))
        p = poisson_solve_2d(g, rhs)
        res = ddx2d(g, ddx2d(g, p)) + ddy2d(g, ddy2d(g, p)) - rhs
        assert np.abs(res).max() <= 1e-12 * max(1.0, np.abs(rhs).max())
        assert abs(p.mean()) <= 1e-13

    def test_incompatible_rhs_raises(self):
        g = Grid(8, 8, 5)
        rhs = np.ones((8, 8))  # constant: pure null-space component
        with pytest.raises(PoissonError):
            poisson_solve_2d(g, rhs)

    def test_symmetric(self):
        g = Grid(16, 16, 5)
        rng = np.random.default_rng(3)
        a = ddx2d(g, rng.normal(size=(16, 16)))
        b = ddy2d(g, rng.normal(size=(16, 16)))
        lhs = float((poisson_solve_2d(g, a) * b).sum())
        rhs = float((a * poisson_solve_2d(g, b)).sum())
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(a) * np.linalg.norm(b)


class TestStateField:
    def test_validate_boundary(self):
        g = Grid(8, 8, 5)
        X = StateField.zeros(g)
        X.u[:, :, 0] = 1.0
        with pytest.raises(FieldError):
            X.validate()

    def test_validate_finite(self):
        g = Grid(8, 8, 5)
        X = StateField.zeros(g)
        X.v[2, 2, 2] = np.nan
        with pytest.raises(FieldError):
            X.validate()

    def test_arithmetic(self):
        g = Grid(8, 8, 5)
        rng = np.random.default_rng(4)
        A = StateField(g, *[zero_zbound(rng.normal(size=g.shape)) for _ in range(3)])
        B = StateField(g, *[zero_zbound(rng.normal(size=g.shape)) for _ in range(3)])
        C = A + 2.0 * B - B
        assert np.allclose(C.u, A.u + B.u)
        assert A.dot(B) == pytest.approx(
            g.cell * ((A.u * B.u).sum() + (A.v * B.v).sum()
                      + (A.theta * B.theta).sum()))


class TestNorms:
    def test_zero_state(self):
        g = Grid(8, 8, 5)
        p = NormParams(2, 4.0)
        assert norm_2m(StateField.zeros(g), p) == 0.0
        assert norm_U(StateField.zeros(g), p) == 0.0

    def test_sqrtK_ratio_on_swap(self):
        g = Grid(16, 16, 9)
        x, _, z = mesh(g)
        f = np.sin(x) * np.sin(np.pi * z)
        f[:, :, 0] = 0.0
        f[:, :, -1] = 0.0
        zero = np.zeros_like(f)
        Xu = StateField(g, f, zero.copy(), zero.copy())
        Xt = StateField(g, zero.copy(), zero.copy(), f)
        p = NormParams(2, 7.0)
        for normf in (norm_2m, norm_U):
            assert normf(Xt, p) / normf(Xu, p) == pytest.approx(np.sqrt(7.0))

    def test_norm_2m_brute_force(self):
        # direct sum over grid points and all |alpha| <= 2 of the
        # quadrature-weighted squares, u = sin(x) sin(pi z / a)
        g = Grid(12, 10, 7, 1.0)
        x, _, z = mesh(g)
        u = np.sin(x) * np.sin(np.pi * z)
        u[:, :, 0] = 0.0
        u[:, :, -1] = 0.0
        X = StateField(g, u, np.zeros_like(u), np.zeros_like(u))
        p = NormParams(2, 3.0)

        zw = g.zweights
        acc = 0.0
        for (i, j) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]:
            d = u
            for _ in range(i):
                d = ddx(g, d)
            for _ in range(j):
                d = ddy(g, d)
            s = 0.0
            for ix in range(g.nx):
                for iy in range(g.ny):
                    for iz in range(g.nz):
                        s += d[ix, iy, iz] ** 2 * zw[iz]
            acc += s * g.dx * g.dy
        assert norm_2m(X, p) == pytest.approx(np.sqrt(acc), rel=1e-12)

    def test_homogeneity_and_ordering(self):
        g = Grid(12, 12, 7)
        from peda.dynamics import random_state
        X = random_state(g, seed=8, amplitude=0.4)
        p = NormParams(2, 5.0)
        assert norm_U(3.0 * X, p) == pytest.approx(3.0 * norm_U(X, p), rel=1e-12)
        assert norm_2m(-2.0 * X, p) == pytest.approx(2.0 * norm_2m(X, p), rel=1e-12)
        assert norm_U(X, p) >= norm_2m(X, p)
        assert norm_U(X, p) ** 2 == pytest.approx(
            norm_2m(X, p) ** 2 + grad_norm_sq_2m(X, p), rel=1e-12)

    def test_unorm_gradient_matches_fd(self):
        g = Grid(10, 10, 5)
        from peda.dynamics import random_state
        p = NormParams(2, 2.0)
        X = random_state(g, seed=9, amplitude=0.3)
        d = random_state(g, seed=10, amplitude=1.0, project=False)
        grad = unorm_gradient(X, p)
        eps = 1e-6
        jp = 0.5 * norm_U(X + eps * d, p) ** 2
        jm = 0.5 * norm_U(X + (-eps) * d, p) ** 2
        fd = (jp - jm) / (2 * eps)
        assert grad.dot(d) == pytest.approx(fd, rel=1e-7)

    def test_recommended_K(self):
        assert recommended_K(1.0, 0.1, 0.5, 0.5) == pytest.approx(800.0)
        assert recommended_K(1.0, 2.0, 3.0, 2.0) == pytest.approx(24.0)


class TestSnapshots:
    def test_roundtrip(self, tmp_path):
        g = Grid(6, 5, 4, 1.5)
        rng = np.random.default_rng(11)
        vals = rng.normal(size=g.shape)
        path = tmp_path / "f.peda"
        write_snapshot(path, g, vals)
        g2, vals2 = read_snapshot(path)
        assert g2 == g
        assert np.array_equal(vals, vals2)

    def test_layout_x_fastest(self, tmp_path):
        g = Grid(4, 5, 3, 1.0)
        vals = np.arange(4 * 5 * 3, dtype=float).reshape(g.shape)
        path = tmp_path / "f.peda"
        write_snapshot(path, g, vals)
        raw = np.fromfile(path, dtype="<f8", offset=28)
        # x fastest: first nx entries run over ix at iy=iz=0
        assert np.array_equal(raw[:4], vals[:, 0, 0])
        assert np.array_equal(raw[4:8], vals[:, 1, 0])

    def test_header_fields(self, tmp_path):
        g = Grid(4, 5, 3, 2.5)
        path = tmp_path / "f.peda"
        write_snapshot(path, g, np.zeros(g.shape))
        raw = path.read_bytes()
        assert raw[:4] == b"PEDA"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 4

    def test_state_roundtrip_and_mismatch(self, tmp_path):
        g = Grid(6, 6, 4)
        from peda.dynamics import random_state
        X = random_state(g, seed=12, amplitude=0.2)
        write_state(tmp_path, "s", X)
        Y = read_state(tmp_path, "s")
        assert np.array_equal(X.u, Y.u)
        assert np.array_equal(X.theta, Y.theta)
        with pytest.raises(FieldError):
            read_state(tmp_path, "missing")

    def test_truncated_file(self, tmp_path):
        g = Grid(4, 4, 3)
        path = tmp_path / "f.peda"
        write_snapshot(path, g, np.zeros(g.shape))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FieldError):
            read_snapshot(path)
