import numpy as np
import pytest

from egm.biquat import Biquaternion
from egm.cauchy import (
    RetardedConvolution,
    SolverConfig,
    SourceSpec,
    SphereQuadrature,
    cauchy_self_check,
    cauchy_solve,
    convolve_wave,
    free_theta_evolve,
    maxwell_cauchy,
    solve_on_grid,
    sphere_mean,
    transform_picard,
)
from egm.emfield import free_plane_wave
from egm.errors import Divergence, QuadratureBudgetExceeded, StepTooSmall
from egm.grid import BiquatField, Grid4

C0 = Biquaternion(0.3 - 1j, [1.0, 2j, -0.5])


def const_data(y):
    n = y.shape[1:]
    return Biquaternion._wrap(np.full(n, C0.s), np.broadcast_to(C0.v.reshape((3,) + (1,) * len(n)), (3,) + n))


def smooth_source(tau, y):
    r2 = (y**2).sum(0)
    g = np.exp(-r2) * np.cos(tau)
    g = np.broadcast_to(g, np.broadcast_shapes(np.shape(tau), r2.shape))
    return Biquaternion._wrap(g * (1 + 0.5j), np.stack([0.3 * g, -1j * g, g * y[0] * 0 + 0.2 * g]).astype(complex))


def gaussian_theta(y):
    g = np.exp(-(y**2).sum(0) / 0.09)
    return Biquaternion._wrap(-1j * g + 0j, np.stack([-0.5 * g, 0.3j * g, 0 * g]).astype(complex))


def scalar(x):
    return Biquaternion._wrap(np.asarray(x, complex), np.zeros((3,) + np.shape(x), complex))


class TestQuadrature:
    def test_unit_sphere_moments(self):
        q = SphereQuadrature(16)
        assert q.weights.sum() == pytest.approx(4 * np.pi, rel=1e-13)
        assert np.allclose(q.nodes @ q.weights, 0, atol=1e-13)
        second = (q.nodes[:, None, :] * q.nodes[None, :, :]) @ q.weights
        assert np.allclose(second, 4 * np.pi / 3 * np.eye(3), atol=1e-13)

    def test_exact_to_degree(self):
        q = SphereQuadrature(8)
        x, y, z = q.nodes
        # mean of z^8 over the sphere is 1/9
        assert (z**8) @ q.weights == pytest.approx(4 * np.pi / 9, rel=1e-13)
        assert (x**4 * y**2 * z**2) @ q.weights == pytest.approx(4 * np.pi / 315, rel=1e-12)

    def test_sphere_mean_examples(self):
        q = SphereQuadrature(4)
        one = sphere_mean(lambda y: scalar(np.ones(y.shape[1])), [0, 0, 0], 2.0, q)
        assert one.s == pytest.approx(8 * np.pi)
        zero = sphere_mean(lambda y: scalar(np.ones(y.shape[1])), [1, 2, 3], 0.0, q)
        assert zero.s == 0
        lin = sphere_mean(lambda y: scalar(y[0]), [1.5, 0, 0], 1.0, q)
        assert lin.s == pytest.approx(4 * np.pi * 1.5)
        with pytest.raises(ValueError):
            sphere_mean(lambda y: scalar(y[0]), [0, 0, 0], -1.0, q)

    def test_negative_degree(self):
        with pytest.raises(ValueError):
            SphereQuadrature(-1)


class TestWaveConvolution:
    def test_unit_source(self):
        q = SphereQuadrature(4)
        u = convolve_wave(lambda t, y: scalar(np.ones(np.broadcast_shapes(np.shape(t), y.shape[1:]))), 0.8, [0.1, 0, 0], q, 8)
        assert u.s == pytest.approx(0.5 * 0.8**2, rel=1e-12)

    def test_zero_source(self):
        u = convolve_wave(lambda t, y: Biquaternion.zeros(np.broadcast_shapes(np.shape(t), y.shape[1:])), 0.5, [0, 0, 0], SphereQuadrature(4), 4)
        assert u.s == 0 and np.all(u.v == 0)

    def test_budget(self):
        with pytest.raises(QuadratureBudgetExceeded):
            convolve_wave(smooth_source, 0.5, [0, 0, 0], SphereQuadrature(16), 32, budget=100)


class TestCauchySolve:
    def test_constant_data_is_stationary(self):
        cfg = SolverConfig(sphere_degree=16, radial_shells=32)
        x = np.array([[0.0, 0.3], [0.0, -1.0], [0.0, 2.0]])
        for sign in ("+", "-"):
            for tau in (0.1, 0.5, 1.0):
                K = cauchy_solve(sign, SourceSpec(None, const_data), tau, x, config=cfg)
                assert np.abs(K.as_array() - C0.as_array()[:, None]).max() < 1e-9

    def test_unit_source_both_forms(self):
        G = lambda t, y: scalar(np.ones(np.broadcast_shapes(np.shape(t), y.shape[1:])))  # noqa: E731
        cfg = SolverConfig(sphere_degree=4, radial_shells=8)
        for form in ("outer", "inner"):
            K = cauchy_solve("+", SourceSpec(G), 0.7, [0.2, 0, 0], config=cfg, form=form)
            assert K.s == pytest.approx(0.7, abs=1e-8)
            assert np.allclose(K.v, 0, atol=1e-8)

    def test_outer_and_inner_agree(self):
        cfg = SolverConfig(sphere_degree=12, radial_shells=16)
        a = cauchy_solve("+", SourceSpec(smooth_source), 0.6, [0.1, -0.2, 0.3], config=cfg)
        b = cauchy_solve("+", SourceSpec(smooth_source), 0.6, [0.1, -0.2, 0.3], config=cfg, form="inner")
        assert np.abs(a.as_array() - b.as_array()).max() < 1e-5

    def test_self_check(self):
        cfg = SolverConfig(sphere_degree=12, radial_shells=16)
        d = cauchy_self_check("+", SourceSpec(smooth_source), 0.5, [0.1, 0.0, -0.2], config=cfg)
        assert np.abs(d.as_array()).max() < 2e-3

    def test_null_wave_free_evolution(self):
        wave = free_plane_wave([0.0, 0.6, 0.8], [1.0, 0.0, 0.0])

        # reflecting space turns a D+ solution into a D- solution
        def theta(t, y):
            return wave(t, -y[0], -y[1], -y[2])

        x = np.array([0.2, -0.1, 0.4])
        K = free_theta_evolve(lambda y: theta(0.0, y), 0.8, x, config=SolverConfig(sphere_degree=16, radial_shells=8))
        exact = theta(np.array(0.8), x)
        assert np.abs(K.as_array() - exact.as_array()).max() < 1e-5

    def test_maxwell_wrapper(self):
        A = maxwell_cauchy(None, const_data, 0.4, [0, 0, 0], config=SolverConfig(8, 4))
        assert np.abs(A.as_array() - C0.as_array()).max() < 1e-9

    def test_causality(self):
        cfg = SolverConfig(sphere_degree=8, radial_shells=8)
        x, tau = np.array([0.3, 0.0, -0.1]), 0.5
        reach = tau + 2 * cfg.delta

        def far_bump(y):
            far = np.sqrt(((y - x.reshape(3, *([1] * (y.ndim - 1)))) ** 2).sum(0)) > reach
            return scalar(np.where(far, 7.0, 0.0))

        def data(y):
            return gaussian_theta(y)

        def perturbed(y):
            return data(y) + far_bump(y)

        def G(t, y):
            return smooth_source(t, y)

        def G2(t, y):
            return smooth_source(t, y) + scalar(np.broadcast_to(far_bump(y).s, np.broadcast_shapes(np.shape(t), y.shape[1:])))

        a = cauchy_solve("-", SourceSpec(G, data), tau, x, config=cfg)
        b = cauchy_solve("-", SourceSpec(G2, perturbed), tau, x, config=cfg)
        assert np.abs(a.as_array() - b.as_array()).max() <= 1e-14

    def test_errors(self):
        with pytest.raises(StepTooSmall):
            cauchy_solve("+", SourceSpec(None, const_data), 0.5, [0, 0, 0], config=SolverConfig(delta=1e-7))
        with pytest.raises(QuadratureBudgetExceeded):
            cauchy_solve("+", SourceSpec(smooth_source), 0.5, [0, 0, 0], config=SolverConfig(budget=1e3))
        with pytest.raises(ValueError):
            cauchy_solve("+", SourceSpec(None, const_data), 0.0, [0, 0, 0])
        with pytest.raises(ValueError):
            cauchy_solve("x", SourceSpec(None, const_data), 0.5, [0, 0, 0])

    def test_config_round_trip(self):
        cfg = SolverConfig(sphere_degree=6, omega=0.5)
        assert SolverConfig.from_dict({**cfg.to_dict(), "unknown": 1}) == cfg


class TestGridSolvers:
    def test_solve_on_grid_initial_plane(self):
        g = Grid4(3, 3, 3, 3, 0.1, 0.2, (0.0, -0.2, -0.2, -0.2))
        F = solve_on_grid("+", SourceSpec(None, const_data), g, config=SolverConfig(8, 4))
        assert np.abs(F.data.as_array() - C0.as_array().reshape(4, 1, 1, 1, 1)).max() < 1e-9

    def test_grid_operator_matches_callable(self):
        errs = []
        for n, h, nt in ((13, 0.2, 4), (25, 0.1, 7)):
            g = Grid4(nt, n, n, n, 0.3 / (nt - 1), h, (0.0,) + (-(n - 1) * h / 2,) * 3)
            q = SphereQuadrature(8)
            op = RetardedConvolution(g, q, 8)

            def G(t, x, y, z):
                return smooth_source(t, np.stack(np.broadcast_arrays(x, y, z)))

            K = op.apply(BiquatField.from_function(g, G), "+")
            it, ix = nt - 1, (n - 1) // 2
            ref = cauchy_solve("+", SourceSpec(smooth_source), g.coord_of((it, ix, ix, ix))[0], np.zeros(3),
                               q, SolverConfig(8, 8, delta=op.delta))
            assert not op.truncated[it, ix, ix, ix]
            errs.append(np.abs(K.data[it, ix, ix, ix].as_array() - ref.as_array()).max())
        assert errs[1] < errs[0] and errs[1] < 2e-2


@pytest.fixture(scope="module")
def setup():
    g = Grid4(4, 9, 9, 9, 0.1, 0.2, (0.0, -0.8, -0.8, -0.8))
    cfg = SolverConfig(sphere_degree=6, radial_shells=6, delta=None, tol=1e-12, max_iter=40)
    q = SphereQuadrature(cfg.sphere_degree)
    op = RetardedConvolution(g, q, cfg.radial_shells)
    free = solve_on_grid("-", SourceSpec(None, gaussian_theta), g, q, cfg)
    return g, cfg, op, free


class TestPicard:

    @staticmethod
    def const_field(s, v):
        def fn(t, x, y, z):
            shape = np.broadcast(t, x, y, z).shape
            return Biquaternion._wrap(np.full(shape, s, complex), np.broadcast_to(np.reshape(v, (3,) + (1,) * len(shape)), (3,) + shape).astype(complex))

        return fn

    def test_no_external_field(self, setup):
        g, cfg, op, free = setup
        theta, rep = transform_picard(self.const_field(0, [0, 0, 0]), gaussian_theta, g, 1.0, config=cfg, operator=op, free=free)
        assert rep.converged and rep.iterations == 1
        assert np.array_equal(theta.data.as_array(), free.data.as_array())

    def test_weak_field_contracts(self, setup):
        g, cfg, op, free = setup
        theta, rep = transform_picard(self.const_field(0, [0.1, 0, 0.05j]), gaussian_theta, g, 1.0, config=cfg, operator=op, free=free)
        assert rep.converged and rep.iterations > 2
        assert rep.rate is not None and rep.rate < 0.5
        assert all(b <= a for a, b in zip(rep.increments, rep.increments[1:]))

    def test_relaxation_slows(self, setup):
        g, cfg, op, free = setup
        A = self.const_field(0, [0.1, 0, 0.05j])
        full, r1 = transform_picard(A, gaussian_theta, g, 1.0, config=cfg, operator=op, free=free)
        cfg_half = SolverConfig(**{**cfg.to_dict(), "omega": 0.5})
        half, r2 = transform_picard(A, gaussian_theta, g, 1.0, config=cfg_half, operator=op, free=free)
        assert r2.converged and r2.iterations > r1.iterations and r2.omega == 0.5
        assert np.abs(full.data.as_array() - half.data.as_array()).max() < 1e-9

    def test_strong_field_diverges(self, setup):
        g, cfg, op, free = setup
        cfg_b = SolverConfig(**{**cfg.to_dict(), "bound": 1e3})
        with pytest.raises(Divergence):
            transform_picard(self.const_field(0, [80.0, 0, 60j]), gaussian_theta, g, 1.0, config=cfg_b, operator=op, free=free)

    def test_bad_arguments(self, setup):
        g, cfg, op, free = setup
        with pytest.raises(ValueError):
            transform_picard(self.const_field(0, [0, 0, 0]), gaussian_theta, g, 0.0, config=cfg, operator=op, free=free)
        with pytest.raises(ValueError):
            transform_picard(self.const_field(0, [0, 0, 0]), gaussian_theta, g, 1.0,
                             config=SolverConfig(omega=0.0), operator=op, free=free)
