import numpy as np
import pytest

from egm.biquat import Biquaternion, vec3
from egm.errors import GridMismatch, GridTooSmall, NonFiniteError
from egm.grid import (
    CSV_HEADER,
    BiquatField,
    Grid4,
    box_direct,
    box_factored,
    d_minus,
    d_plus,
    interpolate,
    read_field_csv,
    write_field_csv,
)


def field(grid, s=None, v=None):
    def fn(t, x, y, z):
        shape = np.broadcast(t, x, y, z).shape
        ss = np.zeros(shape, complex) if s is None else np.broadcast_to(s(t, x, y, z), shape).astype(complex)
        vv = np.zeros((3,) + shape, complex) if v is None else vec3(*(np.broadcast_to(c, shape) for c in v(t, x, y, z)))
        return Biquaternion._wrap(ss, vv.astype(complex))

    return BiquatField.from_function(grid, fn)


@pytest.fixture
def grid():
    return Grid4.centered(9, 0.1, nt=9, dt=0.05)


def interior(F):
    return F.data.as_array()[(slice(None),) + tuple(slice(2, -2) for _ in range(4))]


class TestGrid:
    def test_index_coordinate_round_trip(self, grid):
        idx = (3, 1, 7, 4)
        assert np.allclose(grid.index_of(grid.coord_of(idx)), idx)

    def test_refined_keeps_extent(self, grid):
        r = grid.refined()
        assert r.upper == pytest.approx(grid.upper)
        assert r.shape == tuple(2 * n - 1 for n in grid.shape)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            Grid4(3, 3, 3, 3, 0.0, 0.1)

    def test_field_shape_checked(self, grid):
        with pytest.raises(GridMismatch):
            BiquatField(grid, Biquaternion.zeros((2, 2)))


class TestDerivatives:
    def test_constant_is_annihilated(self, grid):
        F = field(grid, lambda t, x, y, z: 2 + 1j, lambda t, x, y, z: (1, 1j, -3))
        for op in (d_plus, d_minus, box_direct, box_factored):
            assert np.abs(op(F).data.as_array()).max() < 1e-12

    def test_dplus_of_tau(self, grid):
        R = d_plus(field(grid, lambda t, x, y, z: t))
        assert np.allclose(R.s, 1) and np.allclose(R.v, 0)

    def test_dplus_of_shear(self, grid):
        R = d_plus(field(grid, v=lambda t, x, y, z: (y, 0, 0)))
        assert np.allclose(R.s, 0)
        assert np.allclose(R.v[2], -1j) and np.allclose(R.v[:2], 0)

    def test_dminus_examples(self, grid):
        assert np.abs(d_minus(field(grid, v=lambda t, x, y, z: (1, 0, 0))).data.as_array()).max() < 1e-12
        R = d_minus(field(grid, lambda t, x, y, z: x))
        assert np.allclose(R.s, 0) and np.allclose(R.v[0], -1j) and np.allclose(R.v[1:], 0)

    def test_box_quadratic(self, grid):
        R = box_direct(field(grid, lambda t, x, y, z: t**2 + x**2 + y**2 + z**2))
        assert np.allclose(R.s, -4)

    def test_box_second_order(self):
        errs = []
        for n in (9, 17):
            g = Grid4.centered(n, 1.0 / (n - 1), nt=n, dt=1.0 / (n - 1))
            R = box_direct(field(g, lambda t, x, y, z: np.cos(t - 2 * x)))
            T, X, _, _ = g.coords()
            exact = np.broadcast_to(3 * np.cos(T - 2 * X), g.shape)
            errs.append(np.abs(R.s - exact)[R.mask].max())
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_linearity(self, grid, rng=np.random.default_rng(3)):
        F = field(grid, lambda t, x, y, z: np.sin(x + t), lambda t, x, y, z: (y * z, t * x, np.cos(y)))
        G = field(grid, lambda t, x, y, z: np.exp(z), lambda t, x, y, z: (t, x * x, 1j * y))
        a, b = 0.3 - 2j, 1.7 + 0.5j
        for op in (d_plus, d_minus, box_direct):
            lhs = op(a * F + b * G).data.as_array()
            rhs = (a * op(F) + b * op(G)).data.as_array()
            assert np.abs(lhs - rhs).max() <= 1e-12 * max(1, np.abs(lhs).max())

    def test_derivative_convergence(self):
        def make(g):
            return field(g, lambda t, x, y, z: np.sin(t + 2 * x), lambda t, x, y, z: (np.cos(y - t), x * np.sin(z), 1j * np.exp(t)))

        def exact(g):
            t, x, y, z = g.coords()
            s = np.cos(t + 2 * x) + 0j
            v1 = np.sin(y - t) + 1j * 2 * np.cos(t + 2 * x) + 1j * (0 - x * np.cos(z))
            v2 = 0 * t
            v3 = 1j * np.exp(t) + 1j * (np.sin(z) + np.sin(y - t))
            full = [np.broadcast_to(a, g.shape) for a in (s, v1, v2, v3)]
            return full[0], full[1:]

        errs = []
        for n in (9, 17):
            g = Grid4.centered(n, 0.5 / (n - 1), nt=n, dt=0.5 / (n - 1))
            R = d_plus(make(g))
            s, v = exact(g)
            m = R.mask
            errs.append(max(np.abs(R.s - s)[m].max(), max(np.abs(R.v[k] - v[k])[m].max() for k in range(3))))
        assert 3.0 < errs[0] / errs[1] < 4.6

    def test_factorization_commutes(self):
        g = Grid4.centered(11, 0.1, nt=11, dt=0.1)
        F = field(g, lambda t, x, y, z: np.sin(t - x + y), lambda t, x, y, z: (np.cos(z + t), x * y, 1j * np.sin(t)))
        a = box_factored(F).data.as_array()
        b = d_plus(d_minus(F)).data.as_array()
        c = box_direct(F).data.as_array()
        sl = (slice(None),) + tuple(slice(3, -3) for _ in range(4))
        assert np.abs(a[sl] - b[sl]).max() < 5e-3
        assert np.abs(a[sl] - c[sl]).max() < 2e-2

    def test_too_small(self):
        g = Grid4(2, 5, 5, 5, 0.1, 0.1)
        with pytest.raises(GridTooSmall):
            d_plus(BiquatField.zeros(g))

    def test_worker_count_bitwise_identical(self):
        g = Grid4.centered(9, 0.1, nt=20, dt=0.05)
        F = field(g, lambda t, x, y, z: np.sin(3 * t * x), lambda t, x, y, z: (y * t, np.cos(z * t), 1j * x))
        one = d_plus(F, workers=1).data.as_array()
        three = d_plus(F, workers=3).data.as_array()
        assert np.array_equal(one, three)
        assert np.array_equal(box_direct(F, 1).data.as_array(), box_direct(F, 4).data.as_array())

    def test_margins_grow(self, grid):
        F = BiquatField.zeros(grid)
        assert d_plus(F).margin == 1 and box_factored(F).margin == 2


class TestInterpolation:
    def test_nodes_exact(self, grid):
        F = field(grid, lambda t, x, y, z: np.sin(x) * t, lambda t, x, y, z: (y, z, 1j * x))
        T, X, Y, Z = (np.broadcast_to(c, grid.shape) for c in grid.coords())
        vals, cov = interpolate(F, T, np.stack([X, Y, Z]))
        assert cov.all()
        assert np.allclose(vals.as_array(), F.data.as_array())

    def test_linear_fields_exact(self, grid):
        F = field(grid, lambda t, x, y, z: 1 + 2 * t - x + 3 * y * 0 + z, lambda t, x, y, z: (t + x, y, 1j * z))
        rng = np.random.default_rng(0)
        lo, hi = np.array(grid.origin), np.array(grid.upper)
        p = lo[:, None] + (hi - lo)[:, None] * rng.random((4, 50))
        vals, cov = interpolate(F, p[0], p[1:])
        assert cov.all()
        assert np.allclose(vals.s, 1 + 2 * p[0] - p[1] + p[3])

    def test_outside_is_zero(self, grid):
        F = field(grid, lambda t, x, y, z: 1 + 0 * t)
        vals, cov = interpolate(F, np.array([0.0]), np.array([[5.0], [0.0], [0.0]]))
        assert not cov[0] and vals.s[0] == 0


class TestCSV:
    def test_round_trip(self, tmp_path, grid):
        F = field(grid, lambda t, x, y, z: np.sin(x) * t + 1j * y, lambda t, x, y, z: (y, z, 1j * x))
        path = tmp_path / "f.csv"
        write_field_csv(F, path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
        G = read_field_csv(path)
        assert G.grid.shape == grid.shape
        assert G.grid.dt == pytest.approx(grid.dt) and G.grid.h == pytest.approx(grid.h)
        assert np.array_equal(G.data.as_array(), F.data.as_array())

    def test_rejects_nonfinite(self, tmp_path, grid):
        path = tmp_path / "f.csv"
        write_field_csv(BiquatField.zeros(grid), path)
        lines = path.read_text().splitlines()
        parts = lines[5].split(",")
        parts[4] = "nan"
        lines[5] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises((NonFiniteError, ValueError)):
            read_field_csv(path)
