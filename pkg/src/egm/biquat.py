"""Biquaternion algebra in scalar-plus-vector form.

A biquaternion ``F = f + F`` carries a complex scalar part ``s`` and a
complex 3-vector part ``v``.  Values are batched: ``s`` has shape
``batch`` and ``v`` has shape ``(3,) + batch`` (component axis first, so
each vector component of a field is a contiguous array).  A single value
is simply the empty batch ``()``.

The product is

    (f + F) o (g + G) = (fg - (F, G)) + (fG + gF + [F, G])

with the bilinear (not hermitian) dot product and the usual cross product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError

__all__ = [
    "Biquaternion",
    "bq_mul",
    "bq_bar",
    "bq_star",
    "bq_dot",
    "bq_norm",
    "bq_pseudonorm_sq",
    "vec3",
    "vdot",
    "vcross",
    "ONE",
    "ZERO",
    "E1",
    "E2",
    "E3",
]


def vec3(a, b, c):
    """Stack three (broadcastable) component arrays into a vector part."""
    return np.stack(np.broadcast_arrays(*(np.asarray(x, dtype=complex) for x in (a, b, c))))


def vdot(a, b):
    """Bilinear dot product over the leading component axis."""
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def vcross(a, b):
    """Cross product over the leading component axis."""
    return np.stack(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


@dataclass(frozen=True, eq=False)
class Biquaternion:
    """Immutable (batch of) biquaternion(s) ``s + v``."""

    s: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=complex)
        v = np.array(self.v, dtype=complex)
        if v.ndim == 0 or v.shape[0] != 3:
            raise ValueError(f"vector part needs a leading axis of length 3, got {v.shape}")
        s, v0 = np.broadcast_arrays(s, v[0])
        v = np.broadcast_to(v, (3,) + s.shape)
        if not (np.isfinite(s).all() and np.isfinite(v).all()):
            raise NonFiniteError("biquaternion components must be finite")
        s = np.array(s)
        v = np.array(v)
        s.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)

    @classmethod
    def _wrap(cls, s, v):
        # trusted fast path for results of operations on finite inputs
        obj = object.__new__(cls)
        s = np.asarray(s, dtype=complex)
        v = np.asarray(v, dtype=complex)
        s.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(obj, "s", s)
        object.__setattr__(obj, "v", v)
        return obj

    # constructors -----------------------------------------------------

    @classmethod
    def scalar(cls, s, shape=None):
        s = np.asarray(s, dtype=complex)
        if shape is not None:
            s = np.broadcast_to(s, shape)
        return cls(s, np.zeros((3,) + s.shape, dtype=complex))

    @classmethod
    def vector(cls, v):
        v = np.asarray(v, dtype=complex)
        return cls(np.zeros(v.shape[1:], dtype=complex), v)

    @classmethod
    def zeros(cls, shape=()):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        return cls._wrap(np.zeros(shape, complex), np.zeros((3,) + shape, complex))

    @classmethod
    def from_array(cls, q):
        """Build from a ``(4, *batch)`` array ``[s, v1, v2, v3]``."""
        q = np.asarray(q, dtype=complex)
        return cls(q[0], q[1:4])

    @classmethod
    def event(cls, tau, x):
        """The event biquaternion ``Z = tau + i x`` for real ``tau`` and ``x``."""
        return cls(np.asarray(tau, dtype=complex), 1j * np.asarray(x, dtype=complex))

    @classmethod
    def random(cls, rng, shape=(), scale=1.0):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        q = rng.normal(size=(4,) + shape) + 1j * rng.normal(size=(4,) + shape)
        return cls.from_array(scale * q)

    # views ------------------------------------------------------------

    @property
    def shape(self):
        return self.s.shape

    def as_array(self):
        """Stacked ``(4, *batch)`` view ``[s, v1, v2, v3]``."""
        return np.concatenate([self.s[None], self.v])

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Biquaternion._wrap(self.s[idx], self.v[(slice(None),) + idx])

    def __repr__(self):
        if self.s.ndim == 0:
            return f"Biquaternion({complex(self.s)!r} + {tuple(complex(c) for c in self.v)!r})"
        return f"Biquaternion(shape={self.shape})"

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)
        av, bv = _pair(self, other)
        return Biquaternion._wrap(self.s + other.s, av + bv)

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        av, bv = _pair(self, other)
        return Biquaternion._wrap(self.s - other.s, av - bv)

    def __rsub__(self, other):
        return _coerce(other) - self

    def __neg__(self):
        return Biquaternion._wrap(-self.s, -self.v)

    def __mul__(self, other):
        if isinstance(other, Biquaternion):
            return bq_mul(self, other)
        c = np.asarray(other, dtype=complex)
        return Biquaternion._wrap(self.s * c, _vv(self, c.ndim) * c)

    def __rmul__(self, other):
        c = np.asarray(other, dtype=complex)
        return Biquaternion._wrap(c * self.s, c * _vv(self, c.ndim))

    def __truediv__(self, other):
        c = np.asarray(other, dtype=complex)
        return Biquaternion._wrap(self.s / c, _vv(self, c.ndim) / c)

    def bar(self):
        return bq_bar(self)

    def star(self):
        return bq_star(self)

    def norm(self):
        return bq_norm(self)


def _vv(x, nd):
    """Vector part of ``x`` reshaped to broadcast against batch rank ``nd``."""
    v = x.v
    k = nd - (v.ndim - 1)
    return v.reshape((3,) + (1,) * k + v.shape[1:]) if k > 0 else v


def _pair(a, b):
    nd = max(a.s.ndim, b.s.ndim)
    return _vv(a, nd), _vv(b, nd)


def _coerce(x):
    if isinstance(x, Biquaternion):
        return x
    return Biquaternion.scalar(x)


def bq_mul(a: Biquaternion, b: Biquaternion) -> Biquaternion:
    av, bv = _pair(a, b)
    s = a.s * b.s - vdot(av, bv)
    v = a.s * bv + b.s * av + vcross(av, bv)
    return Biquaternion._wrap(s, v)


def bq_bar(a: Biquaternion) -> Biquaternion:
    """Complex conjugate ``conj(f) + conj(F)``."""
    return Biquaternion._wrap(np.conj(a.s), np.conj(a.v))


def bq_star(a: Biquaternion) -> Biquaternion:
    """Quaternion conjugate ``conj(f) - conj(F)``."""
    return Biquaternion._wrap(np.conj(a.s), -np.conj(a.v))


def bq_dot(a: Biquaternion, b: Biquaternion):
    """Symmetric bilinear product ``fg + (F, G)``."""
    av, bv = _pair(a, b)
    return a.s * b.s + vdot(av, bv)


def bq_norm(a: Biquaternion):
    return np.sqrt(np.abs(a.s) ** 2 + (np.abs(a.v) ** 2).sum(axis=0))


def bq_pseudonorm_sq(a: Biquaternion) -> Biquaternion:
    """``a o bar(a)``; for an event ``tau + i x`` this is ``tau^2 - |x|^2``."""
    return bq_mul(a, bq_bar(a))


ONE = Biquaternion(1.0, [0, 0, 0])
ZERO = Biquaternion(0.0, [0, 0, 0])
E1 = Biquaternion(0.0, [1, 0, 0])
E2 = Biquaternion(0.0, [0, 1, 0])
E3 = Biquaternion(0.0, [0, 0, 1])
