"""EGM field quantities and the Maxwell/conservation residuals.

Biquaternion conventions:

* strength        ``A = i a + A``,  ``A = sqrt(eps) E + i sqrt(mu) H``
* charge-current  ``Theta = -i rho - J``
* potential       ``Phi = i phi - Psi``
* energy-momentum ``Xi = 0.5 A o A* = W + i P``

The typed wrappers accept either a single/batched :class:`Biquaternion` or a
:class:`BiquatField`; accessors only touch ``.s`` and ``.v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .biquat import Biquaternion, bq_bar, bq_mul, bq_star, vcross, vdot
from .errors import GridMismatch
from .grid import BiquatField, Grid4, ScalarField, box_direct, d_minus, d_plus, diff1


@dataclass(frozen=True)
class MediumConstants:
    eps: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not (self.eps > 0 and self.mu > 0):
            raise ValueError("eps and mu must be positive")

    @property
    def c(self):
        return 1.0 / np.sqrt(self.eps * self.mu)


def _wrap(grid, s, v, margin=0):
    bq = Biquaternion(s, v)
    return bq if grid is None else BiquatField(grid, bq, margin)


def _grid_of(x):
    return x.grid if isinstance(x, BiquatField) else None


@dataclass(frozen=True, eq=False)
class FieldStrength:
    data: object  # Biquaternion or BiquatField

    @property
    def a(self):
        return -1j * self.data.s

    @property
    def A(self):
        return self.data.v

    def E(self, m: MediumConstants):
        return self.data.v.real / np.sqrt(m.eps)

    def H(self, m: MediumConstants):
        return self.data.v.imag / np.sqrt(m.mu)

    @property
    def closed(self):
        """True when the scalar part vanishes identically."""
        return not np.any(self.data.s)


@dataclass(frozen=True, eq=False)
class ChargeCurrent:
    data: object

    @property
    def rho(self):
        return 1j * self.data.s

    @property
    def J(self):
        return -self.data.v

    def rho_E(self, m):
        return np.sqrt(m.eps) * self.rho.real

    def rho_H(self, m):
        return -np.sqrt(m.mu) * self.rho.imag

    def j_E(self, m):
        return self.J.real / np.sqrt(m.mu)

    def j_H(self, m):
        return -self.J.imag / np.sqrt(m.eps)

    @classmethod
    def from_rho_J(cls, rho, J, grid=None):
        return cls(_wrap(grid, -1j * np.asarray(rho), -np.asarray(J)))


@dataclass(frozen=True, eq=False)
class Potential:
    data: object

    @property
    def phi(self):
        return -1j * self.data.s

    @property
    def Psi(self):
        return -self.data.v

    def gauge_residual(self) -> ScalarField:
        """Lorenz gauge defect ``dt phi - div Psi`` on a grid."""
        F = self.data
        h = F.grid.h
        r = diff1(self.phi, 0, F.grid.dt) - sum(diff1(self.Psi[k], k + 1, h) for k in range(3))
        return ScalarField(F.grid, r, F.margin + 1)


@dataclass(frozen=True, eq=False)
class EnergyMomentum:
    W: np.ndarray
    P: np.ndarray
    xi: object  # full 0.5 A o A*, reported as-is when a != 0


# assembly -----------------------------------------------------------------


def assemble_strength(E, H, m: MediumConstants, grid: Grid4 | None = None) -> FieldStrength:
    E = np.asarray(E, dtype=float)
    H = np.asarray(H, dtype=float)
    if E.shape != H.shape:
        raise GridMismatch(f"E {E.shape} and H {H.shape} differ")
    if grid is not None and E.shape[1:] != grid.shape:
        raise GridMismatch(f"E/H shape {E.shape[1:]} does not match grid {grid.shape}")
    A = np.sqrt(m.eps) * E + 1j * np.sqrt(m.mu) * H
    return FieldStrength(_wrap(grid, np.zeros(E.shape[1:]), A))


def assemble_charge_current(rho_E, rho_H, j_E, j_H, m: MediumConstants, grid=None) -> ChargeCurrent:
    rho_E, rho_H = np.asarray(rho_E, float), np.asarray(rho_H, float)
    j_E, j_H = np.asarray(j_E, float), np.asarray(j_H, float)
    if rho_E.shape != rho_H.shape or j_E.shape != j_H.shape or j_E.shape[1:] != rho_E.shape:
        raise GridMismatch("charge and current components disagree in shape")
    if grid is not None and rho_E.shape != grid.shape:
        raise GridMismatch(f"components {rho_E.shape} do not match grid {grid.shape}")
    rho = rho_E / np.sqrt(m.eps) - 1j * rho_H / np.sqrt(m.mu)
    J = np.sqrt(m.mu) * j_E - 1j * np.sqrt(m.eps) * j_H
    return ChargeCurrent.from_rho_J(rho, J, grid)


# Maxwell ------------------------------------------------------------------


def theta_of_field(A: FieldStrength, workers=None) -> ChargeCurrent:
    """``Theta = D+ A``; with ``a != 0`` this is the modified system."""
    return ChargeCurrent(d_plus(A.data, workers))


def maxwell_residual(A: FieldStrength, theta: ChargeCurrent, workers=None) -> BiquatField:
    if A.data.grid != theta.data.grid:
        raise GridMismatch("strength and charge-current on different grids")
    return d_plus(A.data, workers) - theta.data


def wave_residual(A: FieldStrength, theta: ChargeCurrent, workers=None) -> BiquatField:
    """``box A - D- Theta`` on the doubly-interior region."""
    if A.data.grid != theta.data.grid:
        raise GridMismatch("strength and charge-current on different grids")
    r = box_direct(A.data, workers) - d_minus(theta.data, workers)
    return r.with_margin(max(r.margin, 2))


def wave_rhs_components(theta: ChargeCurrent) -> np.ndarray:
    """Component form ``i rot J - grad rho - dt J`` of the wave right side."""
    F = theta.data
    g = F.grid
    rho, J = theta.rho, theta.J
    dJ = [[diff1(J[c], k + 1, g.h) for k in range(3)] for c in range(3)]
    rot = np.stack([dJ[2][1] - dJ[1][2], dJ[0][2] - dJ[2][0], dJ[1][0] - dJ[0][1]])
    grad = np.stack([diff1(rho, k + 1, g.h) for k in range(3)])
    return 1j * rot - grad - diff1(J, 1, g.dt)


def energy_momentum(A: FieldStrength, m: MediumConstants | None = None) -> EnergyMomentum:
    """``Xi = 0.5 A o A* = W + i P``.

    The ordering ``A o A*`` is the one that reproduces ``W = 0.5(A, conj A)``
    and ``P = 0.5 i [A, conj A]``; the reversed ordering flips ``P``.
    """
    bq = A.data.data if isinstance(A.data, BiquatField) else A.data
    xi = 0.5 * bq_mul(bq, bq_star(bq))
    W = xi.s.real
    P = (-1j * xi.v).real
    if isinstance(A.data, BiquatField):
        xi = BiquatField(A.data.grid, xi, A.data.margin)
    return EnergyMomentum(W, P, xi)


def energy_momentum_orderings(A: Biquaternion):
    """Both candidate products ``0.5 A o A*`` and ``0.5 A* o A``."""
    return 0.5 * bq_mul(A, bq_star(A)), 0.5 * bq_mul(bq_star(A), A)


def energy_momentum_components(E, H, m: MediumConstants):
    """Direct ``W = 0.5(eps|E|^2 + mu|H|^2)``, ``P = c^-1 E x H``."""
    E = np.asarray(E, float)
    H = np.asarray(H, float)
    W = 0.5 * (m.eps * (E * E).sum(axis=0) + m.mu * (H * H).sum(axis=0))
    P = vcross(E, H) / m.c
    return W, P.real


# conservation -------------------------------------------------------------


def charge_conservation_residual(theta: ChargeCurrent) -> ScalarField:
    """``dt rho + div J`` per node."""
    F = theta.data
    g = F.grid
    rho, J = theta.rho, theta.J
    r = diff1(rho, 0, g.dt) + sum(diff1(J[k], k + 1, g.h) for k in range(3))
    return ScalarField(g, r, F.margin + 1)


def energy_conservation_residual(A: FieldStrength, theta: ChargeCurrent, m: MediumConstants) -> ScalarField:
    """``dt W + div P + Re(J, conj A)`` per node."""
    FA, FT = A.data, theta.data
    if FA.grid != FT.grid:
        raise GridMismatch("strength and charge-current on different grids")
    g = FA.grid
    em = energy_momentum(A, m)
    r = diff1(em.W, 0, g.dt) + sum(diff1(em.P[k], k + 1, g.h) for k in range(3))
    r = r + vdot(theta.J, np.conj(A.A)).real
    return ScalarField(g, r, max(FA.margin, FT.margin) + 1)


def energy_source_forms(A: FieldStrength, theta: ChargeCurrent, m: MediumConstants):
    """Energy source term in both forms: ``-Re(J, conj A)`` and ``c^-1((jH,H) - (jE,E))``."""
    algebraic = -vdot(theta.J, np.conj(A.A)).real
    E, H = A.E(m), A.H(m)
    printed = (vdot(theta.j_H(m), H) - vdot(theta.j_E(m), E)).real / m.c
    return algebraic, printed


# manufactured fields ------------------------------------------------------


def free_plane_wave(direction, polarization, profile=np.cos, k=1.0, phase=0.0):
    """Free strength ``g(k (tau - n.x) + phase) (u + i n x u)`` solving ``D+ A = 0``.

    ``polarization`` is projected onto the plane orthogonal to ``direction``.
    Returns a callable ``(tau, x, y, z) -> Biquaternion``.
    """
    n = np.asarray(direction, float)
    n = n / np.linalg.norm(n)
    u = np.asarray(polarization, float)
    u = u - n * (u @ n)
    u = u / np.linalg.norm(u)
    amp = (u + 1j * np.cross(n, u)).reshape(3, 1, 1, 1, 1)

    def fn(tau, x, y, z):
        phase_arg = k * (tau - (n[0] * x + n[1] * y + n[2] * z)) + phase
        g = profile(phase_arg)
        shape = np.shape(g)
        amp_ = amp.reshape((3,) + (1,) * len(shape))
        return Biquaternion._wrap(np.zeros(shape, complex), amp_ * g)

    return fn
