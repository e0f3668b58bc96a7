"""Uniform spacetime grid, biquaternion fields and the complex gradients D+/D-.

Axis order is ``(tau, x, y, z)`` (tau-major).  All derivatives are
second-order: central in the interior, one-sided three-point on faces.
Every derived field carries a ``margin``: the number of boundary rings
whose values came (directly or indirectly) from one-sided stencils.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .biquat import Biquaternion
from .errors import GridMismatch, GridTooSmall, NonFiniteError

CSV_HEADER = ["tau", "x", "y", "z", "re_f", "im_f", "re_F1", "im_F1", "re_F2", "im_F2", "re_F3", "im_F3"]


@dataclass(frozen=True)
class Grid4:
    nt: int
    nx: int
    ny: int
    nz: int
    dt: float
    h: float
    origin: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.dt <= 0 or self.h <= 0:
            raise ValueError("grid spacings must be positive")
        if min(self.shape) < 1:
            raise ValueError("grid needs at least one node per axis")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def centered(cls, n, h, nt=None, dt=None, t0=0.0):
        """Cube of ``n`` nodes per spatial axis centered on the origin."""
        nt = n if nt is None else nt
        dt = h if dt is None else dt
        c = -0.5 * (n - 1) * h
        return cls(nt, n, n, n, dt, h, (t0, c, c, c))

    @property
    def shape(self):
        return (self.nt, self.nx, self.ny, self.nz)

    @property
    def steps(self):
        return (self.dt, self.h, self.h, self.h)

    @property
    def size(self):
        return self.nt * self.nx * self.ny * self.nz

    @property
    def cfl(self):
        return self.dt / self.h

    def axis(self, k):
        return self.origin[k] + self.steps[k] * np.arange(self.shape[k])

    def coords(self):
        """Open mesh ``(tau, x, y, z)`` broadcastable to ``shape``."""
        return tuple(
            self.axis(k).reshape([-1 if j == k else 1 for j in range(4)]) for k in range(4)
        )

    def coord_of(self, index):
        return tuple(self.origin[k] + self.steps[k] * index[k] for k in range(4))

    def index_of(self, point):
        return tuple((point[k] - self.origin[k]) / self.steps[k] for k in range(4))

    @property
    def upper(self):
        return tuple(self.origin[k] + self.steps[k] * (self.shape[k] - 1) for k in range(4))

    def refined(self):
        """Same extent with every spacing halved."""
        return Grid4(
            2 * self.nt - 1, 2 * self.nx - 1, 2 * self.ny - 1, 2 * self.nz - 1,
            self.dt / 2, self.h / 2, self.origin,
        )

    def interior_mask(self, margin):
        m = np.zeros(self.shape, dtype=bool)
        sl = tuple(slice(margin, n - margin) for n in self.shape)
        m[sl] = True
        return m

    def to_dict(self):
        return {
            "shape": list(self.shape),
            "dt": self.dt,
            "h": self.h,
            "origin": list(self.origin),
            "cfl": self.cfl,
        }


@dataclass(frozen=True, eq=False)
class BiquatField:
    grid: Grid4
    data: Biquaternion
    margin: int = field(default=0)

    def __post_init__(self):
        if self.data.shape != self.grid.shape:
            raise GridMismatch(f"field samples {self.data.shape} do not match grid {self.grid.shape}")

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(tau, x, y, z) -> Biquaternion`` on the grid nodes."""
        val = fn(*grid.coords())
        s = np.broadcast_to(val.s, grid.shape)
        v = np.broadcast_to(val.v, (3,) + grid.shape)
        return cls(grid, Biquaternion(s, v))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, Biquaternion.zeros(grid.shape))

    @property
    def s(self):
        return self.data.s

    @property
    def v(self):
        return self.data.v

    @property
    def mask(self):
        return self.grid.interior_mask(self.margin)

    def _check(self, other):
        if other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, BiquatField):
            self._check(other)
            return BiquatField(self.grid, self.data + other.data, max(self.margin, other.margin))
        return BiquatField(self.grid, self.data + other, self.margin)

    def __sub__(self, other):
        if isinstance(other, BiquatField):
            self._check(other)
            return BiquatField(self.grid, self.data - other.data, max(self.margin, other.margin))
        return BiquatField(self.grid, self.data - other, self.margin)

    def __neg__(self):
        return BiquatField(self.grid, -self.data, self.margin)

    def __mul__(self, other):
        if isinstance(other, BiquatField):
            self._check(other)
            return BiquatField(self.grid, self.data * other.data, max(self.margin, other.margin))
        return BiquatField(self.grid, self.data * other, self.margin)

    def __rmul__(self, other):
        if isinstance(other, Biquaternion):
            return BiquatField(self.grid, other * self.data, self.margin)
        return BiquatField(self.grid, other * self.data, self.margin)

    def max_abs(self, mask=None):
        """Max nodal norm over ``mask`` (defaults to the valid interior)."""
        mask = self.mask if mask is None else mask
        if not mask.any():
            return 0.0
        return float(self.data.norm()[mask].max())

    def mean_abs(self, mask=None):
        mask = self.mask if mask is None else mask
        if not mask.any():
            return 0.0
        return float(np.mean(self.data.norm()[mask]))

    def with_margin(self, margin):
        return replace(self, margin=margin)

    def to_csv(self, path):
        write_field_csv(self, path)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Complex or real nodal values with the same margin bookkeeping as fields."""

    grid: Grid4
    values: np.ndarray
    margin: int = 0

    @property
    def mask(self):
        return self.grid.interior_mask(self.margin)

    def max_abs(self, mask=None):
        mask = self.mask if mask is None else mask
        return float(np.abs(self.values[mask]).max()) if mask.any() else 0.0

    def mean_abs(self, mask=None):
        mask = self.mask if mask is None else mask
        return float(np.mean(np.abs(self.values[mask]))) if mask.any() else 0.0


# stencils -----------------------------------------------------------------


def _check_size(grid):
    if min(grid.shape) < 3:
        raise GridTooSmall(f"every axis needs >= 3 nodes, grid has {grid.shape}")


def diff1(a, axis, step):
    """Second-order first derivative along ``axis``."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2 * step)
    out[0] = (-3 * a[0] + 4 * a[1] - a[2]) / (2 * step)
    out[-1] = (3 * a[-1] - 4 * a[-2] + a[-3]) / (2 * step)
    return np.moveaxis(out, 0, axis)


def diff2(a, axis, step):
    """Second derivative: 3-point central, one-sided 4-point on faces."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    out = np.empty_like(a)
    h2 = step * step
    out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / h2
    if a.shape[0] >= 4:
        out[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / h2
        out[-1] = (2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]) / h2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def _d_slab(s, v, steps, sign):
    dt, h = steps[0], steps[1]
    grad = [diff1(s, k, h) for k in (1, 2, 3)]
    dv = [[diff1(v[c], k, h) for k in (1, 2, 3)] for c in range(3)]  # dv[c][k] = d_k v_c
    div = dv[0][0] + dv[1][1] + dv[2][2]
    rot = (dv[2][1] - dv[1][2], dv[0][2] - dv[2][0], dv[1][0] - dv[0][1])
    si = sign * 1j
    out_s = diff1(s, 0, dt) - si * div
    out_v = np.stack([diff1(v[c], 0, dt) + si * (grad[c] + rot[c]) for c in range(3)])
    return out_s, out_v


def _box_slab(s, v, steps, sign=None):
    dt, h = steps[0], steps[1]

    def box(a):
        return diff2(a, 0, dt) - (diff2(a, 1, h) + diff2(a, 2, h) + diff2(a, 3, h))

    return box(s), np.stack([box(v[c]) for c in range(3)])


SLAB = 8


def _apply_slabs(kernel, F, sign, workers, halo=2):
    """Run ``kernel`` over tau-slabs of ``SLAB`` planes.

    Slab layout does not depend on ``workers``, and each output node is
    computed by the same arithmetic whatever the slab, so results are
    bitwise independent of the worker count.
    """
    nt = F.grid.shape[0]
    steps = F.grid.steps
    s, v = F.data.s, F.data.v
    if nt <= SLAB + 2 * halo:
        return kernel(s, v, steps, sign)
    starts = list(range(0, nt, SLAB))
    out_s = np.empty(s.shape, complex)
    out_v = np.empty(v.shape, complex)

    def job(a):
        b = min(a + SLAB, nt)
        lo, hi = max(a - halo, 0), min(b + halo, nt)
        if hi - lo < 3:
            lo = max(hi - 3, 0)
        rs, rv = kernel(s[lo:hi], v[:, lo:hi], steps, sign)
        out_s[a:b] = rs[a - lo : b - lo]
        out_v[:, a:b] = rv[:, a - lo : b - lo]

    if workers is None or workers <= 1:
        for a in starts:
            job(a)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, starts))
    return out_s, out_v


def _d(F, sign, workers):
    _check_size(F.grid)
    s, v = _apply_slabs(_d_slab, F, sign, workers)
    return BiquatField(F.grid, Biquaternion._wrap(s, v), F.margin + 1)


def d_plus(F: BiquatField, workers=None) -> BiquatField:
    """``D+ F = (dt f - i div F) + dt F + i grad f + i rot F``."""
    return _d(F, +1, workers)


def d_minus(F: BiquatField, workers=None) -> BiquatField:
    """``D- F = (dt f + i div F) + dt F - i grad f - i rot F``."""
    return _d(F, -1, workers)


def d_sign(F, sign, workers=None):
    return _d(F, sign, workers)


def box_direct(F: BiquatField, workers=None) -> BiquatField:
    """Wave operator ``dt^2 - Laplacian`` with compact 3-point stencils."""
    _check_size(F.grid)
    s, v = _apply_slabs(_box_slab, F, None, workers)
    return BiquatField(F.grid, Biquaternion._wrap(s, v), F.margin + 1)


def box_factored(F: BiquatField, workers=None) -> BiquatField:
    """Wave operator as ``D- o D+``."""
    return d_minus(d_plus(F, workers), workers)


def nabla_apply(s, v, h):
    """``nabla o (s + v)`` on a purely spatial (nx, ny, nz) snapshot."""
    grad = [diff1(s, k, h) for k in range(3)]
    dv = [[diff1(v[c], k, h) for k in range(3)] for c in range(3)]
    div = dv[0][0] + dv[1][1] + dv[2][2]
    rot = (dv[2][1] - dv[1][2], dv[0][2] - dv[2][0], dv[1][0] - dv[0][1])
    return Biquaternion._wrap(-div, np.stack([grad[c] + rot[c] for c in range(3)]))


# interpolation ------------------------------------------------------------


def interp_weights(grid: Grid4, tau, x, tol=1e-9):
    """Quadrilinear interpolation stencil for points ``(tau, x[0..2])``.

    Returns ``(flat_index, weight, covered)`` with shapes ``(P, 16)``,
    ``(P, 16)`` and ``(P,)``.  Uncovered points get zero weights.
    """
    pts = [np.ravel(tau)] + [np.ravel(x[k]) for k in range(3)]
    P = pts[0].size
    idx0 = []
    frac = []
    covered = np.ones(P, dtype=bool)
    for k in range(4):
        n = grid.shape[k]
        f = (pts[k] - grid.origin[k]) / grid.steps[k]
        covered &= (f >= -tol) & (f <= n - 1 + tol)
        if n == 1:
            i0 = np.zeros(P, dtype=np.int64)
            t = np.zeros(P)
        else:
            i0 = np.clip(np.floor(f), 0, n - 2).astype(np.int64)
            t = np.clip(f - i0, 0.0, 1.0)
        idx0.append(i0)
        frac.append(t)
    flat = np.empty((P, 16), dtype=np.int64)
    w = np.empty((P, 16))
    for c in range(16):
        bits = [(c >> k) & 1 for k in range(4)]
        ii = [np.minimum(idx0[k] + bits[k], grid.shape[k] - 1) for k in range(4)]
        flat[:, c] = np.ravel_multi_index(ii, grid.shape)
        wc = np.ones(P)
        for k in range(4):
            wc = wc * (frac[k] if bits[k] else 1.0 - frac[k])
        w[:, c] = wc
    w[~covered] = 0.0
    return flat, w, covered


def interpolate(F: BiquatField, tau, x):
    """Quadrilinear (linear in tau, trilinear in space) samples of ``F``.

    Points outside the grid evaluate to zero; the coverage mask is returned.
    """
    shape = np.shape(tau)
    flat, w, covered = interp_weights(F.grid, tau, x)
    q = F.data.as_array().reshape(4, -1)
    vals = np.einsum("cpk,pk->cp", q[:, flat], w)
    return Biquaternion._wrap(vals[0].reshape(shape), vals[1:].reshape((3,) + shape)), covered.reshape(shape)


# CSV ------------------------------------------------------------------------


def write_field_csv(F: BiquatField, path):
    T, X, Y, Z = (np.broadcast_to(c, F.grid.shape).ravel() for c in F.grid.coords())
    q = F.data.as_array().reshape(4, -1)
    cols = [T, X, Y, Z]
    for c in range(4):
        cols += [q[c].real, q[c].imag]
    table = np.column_stack(cols)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")


def read_field_csv(path) -> BiquatField:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if [h.strip() for h in header] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    table = table[np.lexsort((table[:, 3], table[:, 2], table[:, 1], table[:, 0]))]
    axes = [np.unique(table[:, k]) for k in range(4)]
    shape = tuple(len(a) for a in axes)
    if np.prod(shape) != table.shape[0]:
        raise ValueError("CSV rows do not form a full tensor grid")
    steps = [float(a[1] - a[0]) if len(a) > 1 else 1.0 for a in axes]
    if len(axes[1]) > 1 and not (np.isclose(steps[1], steps[2]) or len(axes[2]) == 1):
        raise ValueError("spatial spacings differ between axes")
    h = steps[1] if len(axes[1]) > 1 else (steps[2] if len(axes[2]) > 1 else steps[3])
    grid = Grid4(*shape, steps[0], h, tuple(float(a[0]) for a in axes))
    q = np.stack([table[:, 4 + 2 * c] + 1j * table[:, 5 + 2 * c] for c in range(4)])
    if not np.isfinite(q).all():
        raise NonFiniteError("non-finite value in field CSV")
    return BiquatField(grid, Biquaternion.from_array(q.reshape((4,) + shape)))
