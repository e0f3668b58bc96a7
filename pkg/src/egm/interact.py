"""Interaction of charge-currents with external fields.

Force-power ``M - iF = Theta o A'``, the second law ``kappa D- Theta = Theta o A'``
(and its inertia and scalar-source corollaries), the charge-current energy
``0.5 Theta o Theta*`` with the first law in differential and integral form,
an explicit multi-field stepper and the interaction-energy classification.

Residuals follow the biquaternion algebra.  Where a printed component form
differs from the algebra only by an overall sign it is reported alongside,
never used as the contract.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .biquat import Biquaternion, bq_mul, bq_norm, bq_star, vcross, vdot
from .emfield import ChargeCurrent, FieldStrength, MediumConstants
from .errors import CFLViolation, Divergence, GridMismatch, RegionOutsideGrid
from .grid import BiquatField, ScalarField, box_direct, d_minus, d_plus, diff1, nabla_apply

log = logging.getLogger(__name__)

OPERATORS = ("dminus", "dplus")


@dataclass(frozen=True)
class Kappa:
    value: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise ValueError(f"kappa must be a positive finite number, got {self.value!r}")

    def __float__(self):
        return float(self.value)


def _kappa(k):
    return float(Kappa(float(k)))


def _bq(x):
    """Underlying Biquaternion of a value, field or typed wrapper."""
    if isinstance(x, (FieldStrength, ChargeCurrent)):
        x = x.data
    return x.data if isinstance(x, BiquatField) else x


def _grid(*xs):
    grids = []
    for x in xs:
        if isinstance(x, (FieldStrength, ChargeCurrent)):
            x = x.data
        if isinstance(x, BiquatField):
            grids.append(x.grid)
    if any(g != grids[0] for g in grids[1:]):
        raise GridMismatch("operands live on different grids")
    return grids[0] if grids else None


def _margin(*xs):
    m = 0
    for x in xs:
        if isinstance(x, (FieldStrength, ChargeCurrent)):
            x = x.data
        if isinstance(x, BiquatField):
            m = max(m, x.margin)
    return m


def _field(x) -> BiquatField:
    if isinstance(x, (FieldStrength, ChargeCurrent)):
        x = x.data
    if not isinstance(x, BiquatField):
        raise TypeError("a grid field is required")
    return x


# force-power ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForcePower:
    """``M - iF``; ``F = F_H + i F_E``."""

    M: np.ndarray
    F: np.ndarray

    @property
    def F_H(self):
        return self.F.real

    @property
    def F_E(self):
        return self.F.imag

    def biquaternion(self):
        return Biquaternion._wrap(np.asarray(self.M, complex), -1j * np.asarray(self.F))


def force_power(theta, A_ext) -> ForcePower:
    """Force-power exerted by ``A_ext`` on the charge-current ``theta``."""
    _grid(theta, A_ext)
    p = bq_mul(_bq(theta), _bq(A_ext))
    return ForcePower(p.s, 1j * p.v)


def force_power_components(theta: ChargeCurrent, A_ext: FieldStrength, m: MediumConstants):
    """Power and force densities written through ``rho^E, rho^H, j^E, j^H, E', H'``.

    Valid for a closed external field (no scalar part).  Returns ``(M, F_H, F_E)``.
    """
    rE, rH = theta.rho_E(m), theta.rho_H(m)
    jE, jH = theta.j_E(m), theta.j_H(m)
    E, H = A_ext.E(m), A_ext.H(m)
    B, D = m.mu * H, m.eps * E
    M = (vdot(E, jE) + vdot(H, jH)) / m.c + 1j * (vdot(B, jE) - vdot(D, jH))
    F_H = rE * E + rH * H + vcross(jE, B) - vcross(jH, D)
    F_E = m.c * (rE * B - rH * D) + (vcross(E, jE) + vcross(H, jH)) / m.c
    return M, F_H, F_E


def action_reaction_residual(theta1, A1, theta2, A2):
    """``Theta1 o A2 + Theta2 o A1``; vanishes when action equals reaction."""
    g = _grid(theta1, A1, theta2, A2)
    r = bq_mul(_bq(theta1), _bq(A2)) + bq_mul(_bq(theta2), _bq(A1))
    return r if g is None else BiquatField(g, r, _margin(theta1, A1, theta2, A2))


# Newton-law analogues -------------------------------------------------------


def second_law_residual(theta, A_ext, kappa=1.0, operator="dminus", workers=None) -> BiquatField:
    """``kappa D- Theta - Theta o A'`` (or ``kappa D+ Theta + Theta o A'``)."""
    kappa = _kappa(kappa)
    T = _field(theta)
    g = _grid(theta, A_ext)
    prod = bq_mul(T.data, _bq(A_ext))
    if operator == "dminus":
        r = kappa * d_minus(T, workers).data - prod
    elif operator == "dplus":
        r = kappa * d_plus(T, workers).data + prod
    else:
        raise ValueError(f"operator must be one of {OPERATORS}")
    return BiquatField(g, r, _margin(theta, A_ext) + 1)


def second_law_components(theta, A_ext, kappa=1.0):
    """Charge and force laws read off the algebra, next to the printed signs.

    Algebra: ``i kappa (dt rho + div J) = -M`` and
    ``i kappa (dt J - i rot J + grad rho) = -F``.  The printed forms carry
    ``+M`` and ``+F``; both residuals are returned as ScalarField/array pairs.
    """
    kappa = _kappa(kappa)
    T = _field(theta)
    g = T.grid
    cc = ChargeCurrent(T)
    rho, J = cc.rho, cc.J
    fp = force_power(T, A_ext)
    dJ = [[diff1(J[c], k + 1, g.h) for k in range(3)] for c in range(3)]
    div = dJ[0][0] + dJ[1][1] + dJ[2][2]
    rot = np.stack([dJ[2][1] - dJ[1][2], dJ[0][2] - dJ[2][0], dJ[1][0] - dJ[0][1]])
    grad = np.stack([diff1(rho, k + 1, g.h) for k in range(3)])
    charge = 1j * kappa * (diff1(rho, 0, g.dt) + div)
    force = 1j * kappa * (diff1(J, 1, g.dt) - 1j * rot + grad)
    mg = T.margin + 1
    return {
        "charge_algebraic": ScalarField(g, charge + fp.M, mg),
        "charge_printed": ScalarField(g, charge - fp.M, mg),
        "force_algebraic": ScalarField(g, np.sqrt((np.abs(force + fp.F) ** 2).sum(0)), mg),
        "force_printed": ScalarField(g, np.sqrt((np.abs(force - fp.F) ** 2).sum(0)), mg),
    }


def inertia_residual(theta, workers=None) -> BiquatField:
    """``D- Theta``: zero for a free charge-current."""
    T = _field(theta)
    return d_minus(T, workers)


def inertia_components(theta, m: MediumConstants):
    """Component form of the inertia law in terms of ``rho^E, rho^H, j^E, j^H``.

    Returns the four residual arrays
    ``dt rho^E + c div j^E``, ``dt j^E - sqrt(eps/mu) rot j^H + c grad rho^E``
    and their gravimagnetic counterparts (``tau``-derivatives throughout).
    """
    T = _field(theta)
    g = T.grid
    cc = ChargeCurrent(T)
    out = {}
    for name, r, j, other, coef in (
        ("E", cc.rho_E(m), cc.j_E(m), cc.j_H(m), np.sqrt(m.eps / m.mu)),
        ("H", cc.rho_H(m), cc.j_H(m), cc.j_E(m), -np.sqrt(m.mu / m.eps)),
    ):
        dj = [[diff1(j[c], k + 1, g.h) for k in range(3)] for c in range(3)]
        do = [[diff1(other[c], k + 1, g.h) for k in range(3)] for c in range(3)]
        div = dj[0][0] + dj[1][1] + dj[2][2]
        rot = np.stack([do[2][1] - do[1][2], do[0][2] - do[2][0], do[1][0] - do[0][1]])
        grad = np.stack([diff1(r, k + 1, g.h) for k in range(3)])
        out[f"charge_{name}"] = ScalarField(g, diff1(r, 0, g.dt) + m.c * div, T.margin + 1)
        out[f"current_{name}"] = diff1(j, 1, g.dt) - coef * rot + m.c * grad
    return out


def scalar_field_source_residual(a, M, kappa=1.0, printed=False) -> ScalarField:
    """``i kappa box a - M`` on the doubly-interior region.

    ``a`` is the scalar-part potential of the strength (``A = i a + A``) on a
    grid, given as a ScalarField or a FieldStrength.  ``printed=True`` uses
    the opposite sign ``-i kappa box a - M``.
    """
    kappa = _kappa(kappa)
    if isinstance(a, FieldStrength):
        F = _field(a)
        a_vals, g, mg = a.a, F.grid, F.margin
    else:
        a_vals, g, mg = a.values, a.grid, a.margin
    M = M.values if isinstance(M, ScalarField) else np.asarray(M)
    bq = Biquaternion._wrap(np.asarray(a_vals, complex), np.zeros((3,) + g.shape, complex))
    box = box_direct(BiquatField(g, bq, mg)).data.s
    sgn = -1.0 if printed else 1.0
    return ScalarField(g, sgn * 1j * kappa * box - M, max(mg + 1, 2))


# charge-current energy ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThetaEnergy:
    """Parts of ``0.5 Theta o Theta* = (W + Q) + i (P_J - Re(conj(rho) J))``."""

    W: np.ndarray  # 0.5 |rho|^2
    Q: np.ndarray  # 0.5 |J|^2
    P_J: np.ndarray  # 0.5 i J x conj(J), real
    coupling: np.ndarray  # Re(conj(rho) J)
    U: np.ndarray | None = None
    xi: object = None

    @property
    def W_printed(self):
        """Charge term as printed without the 0.5 factor."""
        return 2 * self.W


def theta_energy(theta, m: MediumConstants | None = None) -> ThetaEnergy:
    """Energy-momentum parts of a charge-current; ``U`` is filled on grids."""
    bq = _bq(theta)
    rho = 1j * bq.s
    J = -bq.v
    W = 0.5 * np.abs(rho) ** 2
    Q = 0.5 * (np.abs(J) ** 2).sum(axis=0)
    P_J = (0.5j * vcross(J, np.conj(J))).real
    coupling = (np.conj(rho) * J).real
    xi = 0.5 * bq_mul(bq, bq_star(bq))
    U = None
    F = theta.data if isinstance(theta, ChargeCurrent) else theta
    if isinstance(F, BiquatField):
        g = F.grid
        divP = sum(diff1(P_J[k], k + 1, g.h) for k in range(3))
        grad = np.stack([diff1(rho, k + 1, g.h) for k in range(3)])
        U = divP - vdot(grad, np.conj(J)).real
    return ThetaEnergy(W, Q, P_J, coupling, U, xi)


def theta_energy_components(theta: ChargeCurrent, m: MediumConstants):
    """``Q`` and ``P_J`` through the physical currents: ``0.5(mu|j^E|^2 + eps|j^H|^2)``, ``c^-1 j^H x j^E``."""
    jE, jH = theta.j_E(m), theta.j_H(m)
    Q = 0.5 * (m.mu * (jE * jE).sum(0) + m.eps * (jH * jH).sum(0))
    P_J = vcross(jH, jE) / m.c
    return Q, P_J.real


def first_law_residual(theta, fp: ForcePower | None = None, kappa=1.0, m=None, printed=False) -> ScalarField:
    """``kappa (dt Q - div P_J + Re(grad rho, conj J)) + Im(F, conj J)``.

    With ``fp=None`` the free form ``dt Q - U`` (times kappa) is returned.
    ``printed=True`` flips the force term to ``- Im(F, conj J)``.
    """
    kappa = _kappa(kappa)
    T = _field(theta)
    g = T.grid
    te = theta_energy(T, m)
    J = -T.data.v
    r = kappa * (diff1(te.Q, 0, g.dt) - te.U)
    if fp is not None:
        work = vdot(np.asarray(fp.F), np.conj(J)).imag
        r = r + (-work if printed else work)
    return ScalarField(g, r, T.margin + 1)


@dataclass
class BalanceReport:
    storage: float
    flux: float
    gradient: float
    force: float
    defect: float
    region: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("storage", "flux", "gradient", "force", "defect", "region")}


def _trap(n):
    w = np.ones(n)
    if n > 1:
        w[0] = w[-1] = 0.5
    return w


def first_law_integral(theta, fp: ForcePower | None, kappa, m, region, t) -> BalanceReport:
    """Integral energy balance over ``region x (0, t)``.

    ``region`` is an axis-aligned box ``((x0, x1), (y0, y1), (z0, z1))`` whose
    faces are snapped to grid planes; ``t`` is measured from the first
    ``tau`` plane.  Balance checked:
    ``int (Q(t) - Q(0)) dV = int int (P_J, n) dS - int int Re(grad rho, conj J) dV - kappa^-1 int int Im(F, conj J) dV``.
    """
    kappa = _kappa(kappa)
    T = _field(theta)
    g = T.grid
    idx = []
    for k, (lo, hi) in enumerate(region):
        ax = g.axis(k + 1)
        if lo < ax[0] - 1e-9 * g.h or hi > ax[-1] + 1e-9 * g.h or hi <= lo:
            raise RegionOutsideGrid(f"region axis {k} [{lo}, {hi}] not inside [{ax[0]}, {ax[-1]}]")
        i0, i1 = int(round((lo - ax[0]) / g.h)), int(round((hi - ax[0]) / g.h))
        if i1 - i0 < 1:
            raise RegionOutsideGrid(f"region axis {k} spans less than one cell")
        idx.append((i0, i1))
    nt = int(round(t / g.dt))
    if t < 0 or nt > g.nt - 1:
        raise RegionOutsideGrid(f"time extent {t} outside grid")

    te = theta_energy(T, m)
    rho = 1j * T.data.s
    J = -T.data.v
    grad = np.stack([diff1(rho, k + 1, g.h) for k in range(3)])
    gterm = vdot(grad, np.conj(J)).real
    fterm = np.zeros(g.shape) if fp is None else vdot(np.asarray(fp.F), np.conj(J)).imag

    sl = tuple(slice(i0, i1 + 1) for i0, i1 in idx)
    wx = [_trap(i1 - i0 + 1) * g.h for i0, i1 in idx]
    wt = _trap(nt + 1) * g.dt if nt > 0 else np.zeros(1)
    wv = np.einsum("i,j,k->ijk", *wx)

    def vol(a):
        return float(np.einsum("tijk,t,ijk->", a[: nt + 1][(slice(None),) + sl], wt, wv))

    storage = float(((te.Q[nt] - te.Q[0])[sl] * wv).sum())
    flux = 0.0
    for k in range(3):
        others = [j for j in range(3) if j != k]
        wf = np.einsum("i,j->ij", wx[others[0]], wx[others[1]])
        for side, sgn in ((idx[k][0], -1.0), (idx[k][1], 1.0)):
            face = [slice(None)] * 4
            face[0] = slice(0, nt + 1)
            for j in others:
                face[j + 1] = sl[j]
            face[k + 1] = side
            P = te.P_J[k][tuple(face)]
            flux += sgn * float(np.einsum("tij,t,ij->", P, wt, wf))
    gradient = vol(gterm)
    force = vol(fterm) / kappa
    # dt Q = div P_J - Re(grad rho, conj J) - kappa^-1 Im(F, conj J)
    defect = storage - (flux - gradient - force)
    region_echo = {"box": [list(map(float, r)) for r in region], "t": float(t)}
    return BalanceReport(storage, flux, gradient, force, defect, region_echo)


# interaction energy ---------------------------------------------------------------


CLASSES = ("release", "absorb", "conserve", "neutral")


@dataclass(frozen=True, eq=False)
class InteractionEnergy:
    dW: np.ndarray
    dP: np.ndarray
    classification: np.ndarray  # per-node labels
    aggregate: str
    total_dW: float
    tol: float


def _classify(dW, dXi_norm, tol):
    lab = np.full(np.shape(dW), "neutral", dtype=object)
    lab[dXi_norm <= tol] = "conserve"
    lab[dW > tol] = "release"
    lab[dW < -tol] = "absorb"
    return lab


def interaction_energy(thetas, tol=None) -> InteractionEnergy:
    """Cross terms ``sum_{k != l} Xi^{kl}``, ``Xi^{kl} = 0.5(Theta^k o Theta^l* + Theta^l o Theta^k*)``.

    The sum runs over ordered pairs, so each unordered pair contributes
    twice.  Nodes are labelled ``release`` (dW > tol), ``absorb`` (dW < -tol),
    ``conserve`` (whole cross term within tol) or ``neutral`` (dW within tol
    but momentum exchange present).
    """
    _grid(*thetas)
    bqs = [_bq(t) for t in thetas]
    shape = bqs[0].shape if bqs else ()
    if any(b.shape != shape for b in bqs):
        raise GridMismatch("charge-currents have different shapes")
    s = np.zeros(shape, complex)
    v = np.zeros((3,) + shape, complex)
    n = len(bqs)
    for k in range(n):
        for l in range(n):
            if k == l:
                continue
            x = 0.5 * (bq_mul(bqs[k], bq_star(bqs[l])) + bq_mul(bqs[l], bq_star(bqs[k])))
            s = s + x.s
            v = v + x.v
    dW = s.real
    dP = -1j * v
    if tol is None:
        peak = max((float(np.max(bq_norm(b) ** 2)) for b in bqs), default=0.0)
        tol = 1e-9 * peak
    norm = np.sqrt(np.abs(s) ** 2 + (np.abs(v) ** 2).sum(0))
    labels = _classify(dW, norm, tol)
    total = float(np.sum(dW))
    total_norm = float(np.sqrt(np.abs(s.sum()) ** 2 + (np.abs(v.reshape(3, -1).sum(1)) ** 2).sum()))
    agg_tol = tol * max(1, int(np.prod(shape)))
    agg = str(_classify(np.array(total), np.array(total_norm), agg_tol)[()])
    return InteractionEnergy(dW, dP, labels, agg, total, tol)


def interaction_energy_components(rho1, J1, rho2, J2):
    """Expanded pair term ``Xi^{12} + Xi^{21}`` from charges and currents.

    Returns the real scalar ``2 Re(rho1 conj rho2) + 2 Re(J1, conj J2)`` and
    the complex vector part
    ``-i(rho1 conj J2 + conj rho2 J1 + rho2 conj J1 + conj rho1 J2) - (J1 x conj J2 + J2 x conj J1)``.
    """
    dW = 2 * (rho1 * np.conj(rho2)).real + 2 * vdot(J1, np.conj(J2)).real
    vec = (
        -1j * (rho1 * np.conj(J2) + np.conj(rho2) * J1 + rho2 * np.conj(J1) + np.conj(rho1) * J2)
        - (vcross(J1, np.conj(J2)) + vcross(J2, np.conj(J1)))
    )
    return dW, vec


# multi-field dynamics ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldState:
    """Spatial snapshot of one interacting field at time ``tau``."""

    theta: Biquaternion
    A: Biquaternion


@dataclass(frozen=True)
class StepConfig:
    kappa: float = 1.0
    operator: str = "dminus"
    advance_A: bool = False
    cfl_max: float = 0.5
    bound: float = 1e8


def _rhs(states, h, cfg):
    kappa = cfg.kappa
    n = len(states)
    sgn = 1.0 if cfg.operator == "dminus" else -1.0
    out = []
    for k, st in enumerate(states):
        ext = None
        for m_, other in enumerate(states):
            if m_ != k:
                ext = other.A if ext is None else ext + other.A
        nab = nabla_apply(st.theta.s, st.theta.v, h)
        dth = sgn * 1j * nab
        if ext is not None and n > 1:
            dth = dth + sgn * bq_mul(st.theta, ext) / kappa
        if cfg.advance_A:
            nA = nabla_apply(st.A.s, st.A.v, h)
            dA = sgn * st.theta - 1j * nA
        else:
            dA = Biquaternion.zeros(st.A.shape)
        out.append((dth, dA))
    return out


def _axpy(states, rates, c):
    return [FieldState(s.theta + c * r[0], s.A + c * r[1]) for s, r in zip(states, rates)]


def multi_field_step(states, h, dt, config: StepConfig = StepConfig()):
    """One classical Runge-Kutta step of ``kappa D- Theta^k = Theta^k o sum_{m != k} A^m``.

    ``A^k`` is frozen or advanced by ``D+ A^k = Theta^k`` (``config.advance_A``).
    The ``dplus`` operator variant integrates ``kappa D+ Theta^k + Theta^k o sum A^m = 0``
    with ``D+ A^k + Theta^k = 0``.
    """
    if config.operator not in OPERATORS:
        raise ValueError(f"operator must be one of {OPERATORS}")
    _kappa(config.kappa)
    if dt > config.cfl_max * h:
        raise CFLViolation(f"dt/h = {dt / h:.3g} exceeds {config.cfl_max}")
    if len(states) < 1:
        return []
    k1 = _rhs(states, h, config)
    k2 = _rhs(_axpy(states, k1, dt / 2), h, config)
    k3 = _rhs(_axpy(states, k2, dt / 2), h, config)
    k4 = _rhs(_axpy(states, k3, dt), h, config)
    new = []
    for st, a, b, c, d in zip(states, k1, k2, k3, k4):
        th = st.theta + (dt / 6) * (a[0] + 2 * b[0] + 2 * c[0] + d[0])
        A = st.A + (dt / 6) * (a[1] + 2 * b[1] + 2 * c[1] + d[1])
        peak = float(np.max(bq_norm(th)))
        if not np.isfinite(peak) or peak > config.bound:
            raise Divergence(f"charge-current magnitude {peak:.3g} exceeded {config.bound:.3g}")
        new.append(FieldState(th, A))
    return new


def _interior(shape, margin=1):
    return tuple(slice(margin, n - margin) for n in shape)


def step_diagnostics(before, after, h, dt, config: StepConfig = StepConfig()):
    """Residuals of one step by trapezoidal time differences on the interior.

    ``residual_second_law`` is the largest per-field defect of
    ``dt Theta^k - rhs``; ``residual_summary_free`` the same for the summed
    charge-current against the free law; ``action_reaction`` the pairwise
    cancellation defect ``sum_{k != m} Theta^k o A^m`` that bounds the gap.
    """
    kappa = config.kappa
    sgn = 1.0 if config.operator == "dminus" else -1.0
    r0, r1 = _rhs(before, h, config), _rhs(after, h, config)
    sl = _interior(before[0].theta.shape)
    worst = 0.0
    for b, a, x, y in zip(before, after, r0, r1):
        d = (a.theta - b.theta) / dt - 0.5 * (x[0] + y[0])
        worst = max(worst, float(np.max(bq_norm(d)[sl])))
    worst *= kappa

    def total(states):
        th = states[0].theta
        for st in states[1:]:
            th = th + st.theta
        return th

    tb, ta = total(before), total(after)
    free = lambda th: sgn * 1j * nabla_apply(th.s, th.v, h)  # noqa: E731
    d = (ta - tb) / dt - 0.5 * (free(tb) + free(ta))
    summary = kappa * float(np.max(bq_norm(d)[sl]))

    cross = Biquaternion.zeros(tb.shape)
    for k, sk in enumerate(after):
        for m_, sm in enumerate(after):
            if m_ != k:
                cross = cross + bq_mul(sk.theta, sm.A)
    ar = float(np.max(bq_norm(cross)[sl]))

    ie = interaction_energy([st.theta for st in after])
    te = theta_energy(ta)
    vol = h**3
    Q = float(te.Q[sl].sum() * vol)
    flux = 0.0
    for k in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[k], hi[k] = 0, -1
        flux += float((te.P_J[k][tuple(hi)].sum() - te.P_J[k][tuple(lo)].sum()) * h * h)
    return {
        "residual_second_law": worst,
        "residual_summary_free": summary,
        "action_reaction": ar,
        "deltaW_theta": ie.total_dW * vol,
        "classification": ie.aggregate,
        "energy_Q": Q,
        "flux_PJ": flux,
    }


def run_dynamics(states, h, dt, steps, config: StepConfig = StepConfig(), tau0=0.0, log_path=None):
    """Advance ``steps`` times; returns final states and per-step diagnostics.

    With ``log_path`` each diagnostic record is written as one JSON line.
    """
    records = []
    fh = open(log_path, "w") if log_path else None
    try:
        for n in range(1, steps + 1):
            new = multi_field_step(states, h, dt, config)
            rec = {"step": n, "tau": tau0 + n * dt}
            rec.update(step_diagnostics(states, new, h, dt, config))
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            states = new
    finally:
        if fh:
            fh.close()
    return states, records
