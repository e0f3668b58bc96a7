"""Kirchhoff-type Cauchy solvers for ``D+- K = G``.

The retarded fundamental solution is the light-cone simple layer
``psi = delta(tau - |x|) / (4 pi |x|)``.  Convolutions with it reduce to

    (G * psi)(tau, x)   = (4 pi)^-1 int_0^tau r dr  int_S2 G(tau - r, x + r n) dOmega
    (K0 *_x psi)(tau,x) = (4 pi)^-1 tau int_S2 K0(x + tau n) dOmega

evaluated with radial Gauss-Legendre shells times a product sphere rule.
The solution of ``D^sign K = G``, ``K(0, .) = K0`` is

    K = D^-sign { G * psi + K0 *_x psi }

with the outer operator applied by finite differences of step ``delta``.
Moving the outer derivative inside the first convolution produces the
extra initial-slice term ``G(0, .) *_x psi``; that variant is available as
``form="inner"`` and must agree with the default.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft as sp_fft

from .biquat import Biquaternion, bq_mul, vec3
from .errors import Divergence, QuadratureBudgetExceeded, StepTooSmall
from .grid import BiquatField, Grid4

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi
NOISE_FLOOR_STEP = 1e-15 ** (1.0 / 3.0)


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre in ``cos(theta)`` times uniform azimuth.

    Integrates spherical harmonics up to ``degree`` exactly.
    """

    degree: int = 16

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        n_pol = self.degree // 2 + 1
        n_az = self.degree + 1
        mu, wmu = np.polynomial.legendre.leggauss(n_pol)
        az = 2 * np.pi * np.arange(n_az) / n_az
        st = np.sqrt(1 - mu**2)
        nodes = np.stack(
            [np.outer(st, np.cos(az)).ravel(), np.outer(st, np.sin(az)).ravel(), np.repeat(mu, n_az)]
        )
        weights = np.repeat(wmu, n_az) * (2 * np.pi / n_az)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self):
        return self.weights.size


@dataclass(frozen=True)
class SolverConfig:
    sphere_degree: int = 16
    radial_shells: int = 32
    delta: float | None = 1e-3
    tol: float = 1e-10
    max_iter: int = 50
    omega: float = 1.0
    budget: float = 5e8
    bound: float = 1e6

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class SourceSpec:
    """``G(tau, y)`` and ``K0(y)`` callables; ``y`` has a leading axis of 3.

    Either may be ``None`` (identically zero).
    """

    G: object = None
    K0: object = None
    support_radius: float | None = None


def _radial(shells):
    xi, w = np.polynomial.legendre.leggauss(shells)
    return 0.5 * (xi + 1.0), 0.5 * w


def sphere_mean(f, center, radius, q: SphereQuadrature):
    """``radius^-1 * surface integral of f over |y - center| = radius``.

    Equals ``4 pi radius * mean(f)``; zero at ``radius = 0``.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    c = np.asarray(center, float).reshape(3, 1)
    vals = f(c + radius * q.nodes)
    return radius * _wsum(vals, q.weights)


def _wsum(vals, w):
    # fixed-order reduction over the trailing axis
    s = np.asarray(vals.s) @ w
    v = np.asarray(vals.v) @ w
    return Biquaternion._wrap(s, v)


def _check_budget(n, budget):
    if n > budget:
        raise QuadratureBudgetExceeded(f"{n:.3g} integrand evaluations exceed budget {budget:.3g}")


def _as_points(tau, x):
    x = np.asarray(x, float)
    single = x.ndim == 1
    x = x.reshape(3, -1)
    tau = np.broadcast_to(np.asarray(tau, float), x.shape[1:]).copy()
    return tau, x, single


def _cone(G, tau, x, q, shells, chunk=4096):
    """``(G * psi)`` at points ``(tau[p], x[:, p])``."""
    P = tau.size
    out_s = np.zeros(P, complex)
    out_v = np.zeros((3, P), complex)
    if G is None:
        return out_s, out_v
    xi, wr = _radial(shells)
    per = shells * q.size
    step = max(1, chunk * 64 // per)
    for a in range(0, P, step):
        b = min(a + step, P)
        t = tau[a:b]
        r = t[:, None] * xi[None, :]  # (p, S)
        y = x[:, a:b, None, None] + r[None, :, :, None] * q.nodes[:, None, None, :]
        ts = np.broadcast_to((t[:, None] - r)[:, :, None], y.shape[1:])
        val = G(ts, y)
        w = (t[:, None] * wr[None, :] * r)[:, :, None] * q.weights[None, None, :] / FOUR_PI
        s = np.broadcast_to(val.s, w.shape)
        v = np.broadcast_to(val.v, (3,) + w.shape)
        out_s[a:b] = np.einsum("psn,psn->p", s, w)
        out_v[:, a:b] = np.einsum("cpsn,psn->cp", v, w)
    return out_s, out_v


def _shell(K0, tau, x, q):
    """``(K0 *_x psi)`` at points ``(tau[p], x[:, p])``."""
    P = tau.size
    if K0 is None:
        return np.zeros(P, complex), np.zeros((3, P), complex)
    y = x[:, :, None] + tau[None, :, None] * q.nodes[:, None, :]
    val = K0(y)
    w = tau[:, None] * q.weights[None, :] / FOUR_PI
    s = np.broadcast_to(val.s, w.shape)
    v = np.broadcast_to(val.v, (3,) + w.shape)
    return np.einsum("pn,pn->p", s, w), np.einsum("cpn,pn->cp", v, w)


def convolve_wave(G, tau, x, q: SphereQuadrature, shells=32, budget=5e8):
    """Retarded convolution ``G * psi``: solves ``box u = G``, zero data."""
    tau, x, single = _as_points(tau, x)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    _check_budget(tau.size * shells * q.size, budget)
    s, v = _cone(G, tau, x, q, shells)
    out = Biquaternion._wrap(s, v)
    return out[0] if single else out


def _assemble_d(sign, dt_s, dt_v, grad_s, jac_v):
    """``dt K + sign * i nabla o K`` from partial derivatives.

    ``jac_v[c][k]`` is ``d_k v_c``.
    """
    div = jac_v[0][0] + jac_v[1][1] + jac_v[2][2]
    rot = (jac_v[2][1] - jac_v[1][2], jac_v[0][2] - jac_v[2][0], jac_v[1][0] - jac_v[0][1])
    si = sign * 1j
    s = dt_s - si * div
    v = np.stack([dt_v[c] + si * (grad_s[c] + rot[c]) for c in range(3)])
    return Biquaternion._wrap(s, v)


def _tau_stencil(tau, delta, tau_hi=np.inf):
    """Per-point offsets and weights for a 2nd-order tau derivative."""
    P = tau.size
    offs = np.tile(np.array([-delta, 0.0, delta]), (P, 1))
    coef = np.tile(np.array([-0.5, 0.0, 0.5]) / delta, (P, 1))
    fwd = tau - delta < -1e-14
    offs[fwd] = [0.0, delta, 2 * delta]
    coef[fwd] = np.array([-1.5, 2.0, -0.5]) / delta
    bwd = (~fwd) & (tau + delta > tau_hi + 1e-12)
    offs[bwd] = [-2 * delta, -delta, 0.0]
    coef[bwd] = np.array([0.5, -2.0, 1.5]) / delta
    return offs, coef


def _outer_d(phi, sign, tau, x, delta, tau_hi=np.inf):
    """``D^sign`` of the functional ``phi(tau, x) -> (s, v)`` by finite differences."""
    offs, coef = _tau_stencil(tau, delta, tau_hi)
    dt_s = 0.0
    dt_v = 0.0
    for j in range(3):
        if not np.any(coef[:, j]):
            continue
        s, v = phi(tau + offs[:, j], x)
        dt_s = dt_s + coef[:, j] * s
        dt_v = dt_v + coef[:, j] * v
    grad_s = []
    jac = [[None] * 3 for _ in range(3)]
    for k in range(3):
        e = np.zeros((3, 1))
        e[k] = delta
        sp_, vp = phi(tau, x + e)
        sm, vm = phi(tau, x - e)
        grad_s.append((sp_ - sm) / (2 * delta))
        for c in range(3):
            jac[c][k] = (vp[c] - vm[c]) / (2 * delta)
    return _assemble_d(sign, dt_s, dt_v, grad_s, jac)


def _delta(config, scale=None):
    d = config.delta if config.delta is not None else max(scale or 0.0, NOISE_FLOOR_STEP)
    if d < NOISE_FLOOR_STEP:
        raise StepTooSmall(f"delta={d:g} is below the quadrature noise floor {NOISE_FLOOR_STEP:.2g}")
    return d


def _sign(sign):
    if sign in ("+", +1, 1):
        return +1
    if sign in ("-", -1):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def _fd_operator(fn, sign, delta):
    """Callable ``(tau, y) -> D^sign fn`` by central differences."""

    def out(tau, y):
        shape = np.broadcast_shapes(np.shape(tau), y.shape[1:])
        t = np.broadcast_to(tau, shape)
        y = np.broadcast_to(y, (3,) + shape)
        fp, fm = fn(t + delta, y), fn(t - delta, y)
        dt_s = (fp.s - fm.s) / (2 * delta)
        dt_v = (fp.v - fm.v) / (2 * delta)
        grad, jac = [], [[None] * 3 for _ in range(3)]
        for k in range(3):
            e = np.zeros((3,) + (1,) * len(shape))
            e[k] = delta
            gp, gm = fn(t, y + e), fn(t, y - e)
            grad.append((gp.s - gm.s) / (2 * delta))
            for c in range(3):
                jac[c][k] = (gp.v[c] - gm.v[c]) / (2 * delta)
        return _assemble_d(sign, dt_s, dt_v, grad, jac)

    return out


def cauchy_solve(sign, S: SourceSpec, tau, x, q: SphereQuadrature | None = None,
                 config: SolverConfig = SolverConfig(), form="outer"):
    """Solution of ``D^sign K = G`` with ``K(0, .) = K0`` at ``(tau, x)``.

    ``x`` may be a single point ``(3,)`` or a batch ``(3, P)``.
    """
    sign = _sign(sign)
    q = q or SphereQuadrature(config.sphere_degree)
    tau, x, single = _as_points(tau, x)
    if np.any(tau <= 0):
        raise ValueError("cauchy_solve needs tau > 0")
    delta = _delta(config)
    shells = config.radial_shells
    n_eval = tau.size * 9 * (shells * q.size * (S.G is not None) + q.size * (S.K0 is not None))
    _check_budget(n_eval, config.budget)

    if form == "outer":
        def phi(t, y):
            s1, v1 = _cone(S.G, t, y, q, shells)
            s2, v2 = _shell(S.K0, t, y, q)
            return s1 + s2, v1 + v2

        out = _outer_d(phi, -sign, tau, x, delta)
    elif form == "inner":
        out = _outer_d(lambda t, y: _shell(S.K0, t, y, q), -sign, tau, x, delta)
        if S.G is not None:
            dG = _fd_operator(S.G, -sign, delta)
            s, v = _cone(dG, tau, x, q, shells)
            G0 = lambda y: S.G(np.zeros(y.shape[1:]), y)  # noqa: E731
            s0, v0 = _shell(G0, tau, x, q)
            out = out + Biquaternion._wrap(s + s0, v + v0)
    else:
        raise ValueError(f"form must be 'outer' or 'inner', got {form!r}")
    return out[0] if single else out


def cauchy_self_check(sign, S: SourceSpec, tau, x, q: SphereQuadrature | None = None,
                      config: SolverConfig = SolverConfig(), step=0.02):
    """Apply a discrete ``D^sign`` to solver outputs around ``(tau, x)`` and compare with ``G``.

    Uses a 7-point central stencil of spacing ``step`` (``tau - step`` must be
    positive).  Returns the biquaternion defect ``D^sign K - G`` at the point.
    """
    sign = _sign(sign)
    x = np.asarray(x, float).reshape(3)
    if tau - step <= 0:
        raise ValueError("tau must exceed the stencil step")
    pts_t = [tau + step, tau - step] + [tau] * 6
    pts_x = [x, x]
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        pts_x += [x + e, x - e]
    K = cauchy_solve(sign, S, np.array(pts_t), np.stack(pts_x, axis=1), q, config)
    s, v = K.s, K.v
    dt_s, dt_v = (s[0] - s[1]) / (2 * step), (v[:, 0] - v[:, 1]) / (2 * step)
    grad = [(s[2 + 2 * k] - s[3 + 2 * k]) / (2 * step) for k in range(3)]
    jac = [[(v[c, 2 + 2 * k] - v[c, 3 + 2 * k]) / (2 * step) for k in range(3)] for c in range(3)]
    DK = _assemble_d(sign, dt_s, dt_v, grad, jac)
    G = S.G(np.array(tau), x) if S.G is not None else Biquaternion.zeros(())
    return DK - G


def maxwell_cauchy(theta: SourceSpec | object, A0=None, tau=None, x=None, q=None,
                   config: SolverConfig = SolverConfig()):
    """Strength solving ``D+ A = Theta`` with ``A(0, .) = A0``."""
    if not isinstance(theta, SourceSpec):
        theta = SourceSpec(theta, A0)
    return cauchy_solve("+", theta, tau, x, q, config)


def free_theta_evolve(theta0, tau, x, q=None, config: SolverConfig = SolverConfig()):
    """Free charge-current: ``D- Theta = 0``, ``Theta(0, .) = theta0``."""
    return cauchy_solve("-", SourceSpec(None, theta0), tau, x, q, config)


def solve_on_grid(sign, S: SourceSpec, grid: Grid4, q=None, config: SolverConfig = SolverConfig(), form="outer"):
    """:func:`cauchy_solve` at every node; the ``tau = 0`` plane takes ``K0``."""
    T, X, Y, Z = (np.broadcast_to(c, grid.shape).ravel() for c in grid.coords())
    xs = np.stack([X, Y, Z])
    s = np.zeros(grid.size, complex)
    v = np.zeros((3, grid.size), complex)
    pos = T > 0
    if pos.any():
        k = cauchy_solve(sign, S, T[pos], xs[:, pos], q, config, form)
        s[pos], v[:, pos] = k.s, k.v
    if (~pos).any() and S.K0 is not None:
        k0 = S.K0(xs[:, ~pos])
        s[~pos] = np.broadcast_to(k0.s, (int((~pos).sum()),))
        v[:, ~pos] = np.broadcast_to(k0.v, (3, int((~pos).sum())))
    return BiquatField(grid, Biquaternion(s.reshape(grid.shape), v.reshape((3,) + grid.shape)))


# grid-sampled sources -------------------------------------------------------


class RetardedConvolution:
    """Linear map from grid samples of ``G`` to ``D^sign (G * psi)`` at the nodes.

    Quadrature points are interpolated quadrilinearly from the grid, with
    zero extension outside it.  Because every target is a node, the combined
    quadrature/interpolation weights depend only on the target and source
    tau-planes, so they are stored as small 3-D stencils per plane pair and
    applied by zero-padded FFT convolution.  Nodes whose backward cone leaves
    the grid are flagged in ``truncated``.
    """

    def __init__(self, grid: Grid4, q: SphereQuadrature, shells: int, delta=None, budget=5e8, workers=None):
        self.grid = grid
        self.q = q
        self.shells = shells
        self.workers = workers
        self.delta = delta if delta is not None else min(grid.h, grid.dt)
        if self.delta < NOISE_FLOOR_STEP:
            raise StepTooSmall(f"delta={self.delta:g} below noise floor")
        _check_budget(grid.nt * 9 * shells * q.size, budget)
        self._build()

    def _build(self):
        g, q, delta = self.grid, self.q, self.delta
        taus = g.dt * np.arange(g.nt)
        tau_hi = taus[-1]
        reach = tau_hi + 2 * delta
        half = int(np.ceil(reach / g.h)) + 2
        self.half = half
        S = 2 * half + 1
        xi, wr = _radial(self.shells)
        offs, coef = _tau_stencil(taus, delta, tau_hi)
        self.stencils = []
        for n in range(g.nt):
            K = np.zeros((n + 1, 4, S, S, S))
            samples = [(offs[n, j], np.zeros(3), 0, coef[n, j]) for j in range(3) if coef[n, j]]
            for k in range(3):
                e = np.zeros(3)
                e[k] = delta
                samples += [(0.0, e, k + 1, 0.5 / delta), (0.0, -e, k + 1, -0.5 / delta)]
            for toff, shift, slot, cf in samples:
                ts = taus[n] + toff
                if ts <= 0:
                    continue
                r = ts * xi
                w = (cf * ts * wr * r / FOUR_PI)[:, None] * q.weights[None, :]
                y = (shift[:, None, None] + r[None, :, None] * q.nodes[:, None, :]) / g.h
                u = np.clip((ts - r) / g.dt, 0, n)[:, None] * np.ones(q.size)
                self._scatter(K[:, slot], u, y, w, half, n)
            self.stencils.append(K)
        lo = np.array([g.origin[k + 1] for k in range(3)])
        hi = np.array(g.upper[1:])
        X = np.broadcast_arrays(*g.coords()[1:])
        trunc = np.zeros(g.shape, dtype=bool)
        for n in range(g.nt):
            rad = taus[n] + 2 * delta + g.h
            bad = np.zeros(X[0].shape[1:], dtype=bool)
            for k in range(3):
                c = X[k][0]
                bad |= (c - rad < lo[k] - 1e-12) | (c + rad > hi[k] + 1e-12)
            trunc[n] = bad
        self.truncated = trunc

    @staticmethod
    def _scatter(K, u, y, w, half, n):
        m0 = np.minimum(np.floor(u).astype(int), max(n - 1, 0))
        bt = u - m0
        i0 = np.floor(y).astype(int)
        a = y - i0
        w = w.ravel()
        for dm, wt in ((0, 1 - bt), (1, bt)):
            m = (m0 + dm).ravel()
            wt = wt.ravel()
            keep = m <= n
            for cx in (0, 1):
                wx = a[0] if cx else 1 - a[0]
                for cy in (0, 1):
                    wy = a[1] if cy else 1 - a[1]
                    for cz in (0, 1):
                        wz = a[2] if cz else 1 - a[2]
                        ww = (w * wt * (wx * wy * wz).ravel())[keep]
                        ix = (i0[0] + cx).ravel()[keep] + half
                        iy = (i0[1] + cy).ravel()[keep] + half
                        iz = (i0[2] + cz).ravel()[keep] + half
                        np.add.at(K, (m[keep], ix, iy, iz), ww)

    def derivatives(self, F: BiquatField):
        """``[d_tau, d_x, d_y, d_z]`` of ``F * psi``, each shaped ``(4,) + grid.shape``."""
        g = self.grid
        data = F.data.as_array()  # (4, nt, nx, ny, nz)
        half = self.half
        full = tuple(n + 2 * half for n in g.shape[1:])
        fshape = tuple(sp_fft.next_fast_len(n) for n in full)
        axes = (-3, -2, -1)
        Gh = sp_fft.fftn(data, s=fshape, axes=axes, workers=self.workers)  # (4, nt, ...)
        out = np.zeros((4, 4) + g.shape, complex)
        sl = (slice(None),) + tuple(slice(half, half + n) for n in g.shape[1:])
        for n, K in enumerate(self.stencils):
            # correlation: weight at offset d multiplies G(x + d)
            Kh = sp_fft.fftn(K[..., ::-1, ::-1, ::-1], s=fshape, axes=axes, workers=self.workers)
            acc = np.einsum("msxyz,cmxyz->scxyz", Kh, Gh[:, : n + 1])
            res = sp_fft.ifftn(acc, axes=axes, workers=self.workers)
            for slot in range(4):
                out[slot, :, n] = res[slot][sl]
        return list(out)

    def apply(self, F: BiquatField, sign) -> BiquatField:
        """``D^sign {F * psi}`` on the grid."""
        sign = _sign(sign)
        dt, d1, d2, d3 = self.derivatives(F)
        dk = (d1, d2, d3)
        jac = [[dk[k][c + 1] for k in range(3)] for c in range(3)]
        out = _assemble_d(sign, dt[0], dt[1:], [dk[k][0] for k in range(3)], jac)
        return BiquatField(self.grid, out)


@dataclass
class PicardReport:
    iterations: int
    converged: bool
    increments: list
    rate: float | None
    omega: float
    valid: np.ndarray | None = None  # nodes whose backward cone stays on the grid

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "increments": self.increments,
            "rate": self.rate,
            "omega": self.omega,
        }


def transform_picard(A_ext, theta0, grid: Grid4, kappa=1.0, q=None, config: SolverConfig = SolverConfig(),
                     operator: RetardedConvolution | None = None, free: BiquatField | None = None):
    """Fixed-point solve of ``kappa D- Theta = Theta o A'`` from ``Theta(0) = theta0``.

    Iterates ``Theta <- (1 - omega) Theta + omega (Theta_free + kappa^-1 D+ {(Theta o A') * psi})``.
    ``A_ext`` is a BiquatField on ``grid`` or a callable ``(tau, x, y, z)``;
    ``theta0`` is a callable ``y -> Biquaternion``.  Non-convergence within
    ``max_iter`` is reported, not raised; growth past ``config.bound``
    raises :class:`Divergence`.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if not 0 < config.omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    q = q or SphereQuadrature(config.sphere_degree)
    if isinstance(A_ext, BiquatField):
        A = A_ext.data
    else:
        A = BiquatField.from_function(grid, A_ext).data
    if free is None:
        free = solve_on_grid("-", SourceSpec(None, theta0), _shifted(grid), q, config)
        free = BiquatField(grid, free.data)
    op = operator or RetardedConvolution(_shifted(grid), q, config.radial_shells, config.delta, config.budget)
    theta = free
    increments = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        force = Biquaternion._wrap(*_mul_parts(theta.data, A))
        rhs = free.data + op.apply(BiquatField(op.grid, force), "+").data / kappa
        new = (1 - config.omega) * theta.data + config.omega * rhs
        inc = float(np.max(np.abs((new - theta.data).as_array())))
        increments.append(inc)
        theta = BiquatField(grid, new)
        peak = float(np.max(np.abs(new.as_array())))
        log.debug("picard iteration %d: increment %.3e", it, inc)
        if not np.isfinite(peak) or peak > config.bound:
            raise Divergence(f"iterate magnitude {peak:.3g} exceeded bound {config.bound:.3g} at iteration {it}")
        if inc < config.tol:
            converged = True
            break
    rate = None
    if len(increments) >= 3 and increments[-2] > 0:
        rate = increments[-1] / increments[-2]
    return theta, PicardReport(it, converged, increments, rate, config.omega, ~op.truncated)


def _mul_parts(a, b):
    p = bq_mul(a, b)
    return p.s, p.v


def _shifted(grid: Grid4) -> Grid4:
    """Same grid with tau measured from its first plane (initial time 0)."""
    if grid.origin[0] == 0:
        return grid
    return Grid4(grid.nt, grid.nx, grid.ny, grid.nz, grid.dt, grid.h, (0.0,) + grid.origin[1:])
