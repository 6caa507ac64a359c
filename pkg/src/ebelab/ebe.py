"""Moment-map residual of the extended Bogomolny equations and its calculus.

Everything is written in a holomorphic parallel gauge, where the unknown is
a Hermitian metric ``H`` (one positive matrix per grid node) and the Higgs
field is a fixed holomorphic matrix function of ``z``.  The residual is

    Omega(H) = -dbar(H^-1 d H) - d_y(H^-1 d_y H) + [phi, phi^dagger_H]

with ``phi^dagger_H = H^-1 conj(phi)^T H``.  Fields on a :class:`Grid3`
have shape ``(nx, nz, ny, m, m)``; on a :class:`Grid2` the ``y`` axis and
the ``y`` terms are absent.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .field import (Grid3, dagger, dbar_apply, dbar_del_apply, del_apply,
                    dy_apply, dyy_apply, frobenius, herm_eig, herm_exp, herm_sqrt,
                    hermitian_part, phi1, traceless)
from .holo import HiggsData
from .liealg import commutator


def _has_y(grid):
    return isinstance(grid, Grid3)


def _check_field(a, grid):
    nd = 3 if _has_y(grid) else 2
    if a.ndim != nd + 2 or a.shape[:nd] != grid.shape[:nd]:
        raise DomainError(f"field shape {a.shape} does not match grid {grid.shape}")


def higgs_on_grid(phi, grid):
    """Sample a Higgs field on the ``(x2, x3)`` nodes, broadcastable to fields.

    Parameters
    ----------
    phi : HiggsData or ndarray
        An array is taken as already sampled: shape ``(m, m)``,
        ``(nx, nz, m, m)`` or the 3D output ``(nx, nz, 1, m, m)``.
    """
    g2 = grid.slice2d if _has_y(grid) else grid
    if isinstance(phi, HiggsData):
        out = np.asarray(phi(g2.complex_coords()), dtype=complex)
    else:
        out = np.asarray(phi, dtype=complex)
        if _has_y(grid) and out.ndim == 5:
            out = out[:, :, 0]
        if out.ndim == 2:
            out = np.broadcast_to(out, g2.shape + out.shape)
    if out.shape[:2] != g2.shape:
        raise DomainError("Higgs samples do not match the grid")
    return out[:, :, None] if _has_y(grid) else out


def adjoint_higgs(H, phi):
    """Metric adjoint ``H^-1 conj(phi)^T H``.

    Raises
    ------
    DomainError
        If ``H`` is numerically singular.
    """
    H = np.asarray(H)
    cond = np.linalg.cond(H)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e14):
        raise DomainError("metric is singular")
    return np.linalg.solve(H, dagger(phi) @ H)


def _inv(H):
    return np.linalg.inv(H)


@dataclass
class YGauge:
    """Diagonalizable ``y``-dependent gauge ``E(y) = B exp(-l(y) e0 / 2) B^dagger``.

    With ``H = E Hh E`` the residual is discretized as
    ``E^-1 Omega_hat(Hh) E`` where the ``y`` derivatives act covariantly,
    ``nabla Z = d_y Z + a Z + Z a`` with ``a = E^-1 d_y E = -l' B e0 B^dagger / 2``
    evaluated in closed form.  Stencils then only see ``Hh``, so metrics of
    the form ``E (const) E`` (the Nahm model for ``l = log y``) have no
    discretization error.  The scheme is consistent for any smooth ``l``
    and reduces to the plain one for ``l = 0``.

    Attributes
    ----------
    weights : ndarray, shape (m,)
        Eigenvalues of ``e0``.
    ell, dell, ddell : ndarray, shape (ny,)
        ``l`` and its first two derivatives at the ``y`` nodes.
    basis : ndarray, shape (m, m), optional
        Constant unitary ``B``; identity when omitted.
    """

    weights: np.ndarray
    ell: np.ndarray
    dell: np.ndarray
    ddell: np.ndarray
    basis: np.ndarray = None

    @classmethod
    def log_y(cls, ctx, grid):
        """Gauge of the Nahm model, ``l = log y``."""
        y = grid.y
        return cls(np.diag(ctx.sl2_zero).real.astype(float), np.log(y), 1.0 / y,
                   -1.0 / y ** 2)

    def conjugated(self, u):
        """Gauge for the problem conjugated by the constant unitary ``u``."""
        b = np.asarray(u) if self.basis is None else np.asarray(u) @ self.basis
        return YGauge(self.weights, self.ell, self.dell, self.ddell, b)

    def _scale(self, X, factor):
        if self.basis is None:
            return X * factor
        b = self.basis
        return b @ ((dagger(b) @ X @ b) * factor) @ dagger(b)

    def _e(self):
        return np.exp(-0.5 * self.ell[:, None] * self.weights)

    def _pair(self, v):
        return v[:, :, None] + v[:, None, :]

    def to_hat(self, H):
        """``E^-1 H E^-1``."""
        e = self._e()
        return self._scale(H, 1.0 / (e[:, :, None] * e[:, None, :]))

    def from_hat(self, Hh):
        """``E Hh E``."""
        e = self._e()
        return self._scale(Hh, e[:, :, None] * e[:, None, :])

    def conjugate(self, X):
        """``E X E^-1``."""
        e = self._e()
        return self._scale(X, e[:, :, None] / e[:, None, :])

    def unconjugate(self, X):
        """``E^-1 X E``."""
        e = self._e()
        return self._scale(X, e[:, None, :] / e[:, :, None])

    def nabla(self, Z, dZ):
        """Covariant first derivative from the stencil derivative ``dZ``."""
        a = self._pair(-0.5 * self.dell[:, None] * self.weights)
        return dZ + self._scale(Z, a)

    def nabla2(self, Z, dZ, ddZ):
        """Covariant second derivative ``nabla(nabla Z)``."""
        a = self._pair(-0.5 * self.dell[:, None] * self.weights)
        da = self._pair(-0.5 * self.ddell[:, None] * self.weights)
        return ddZ + self._scale(Z, da + a * a) + 2.0 * self._scale(dZ, a)


class _Derivs:
    """Stencil derivatives of ``H`` reused by residual and derivative.

    With a gauge the derivatives are those of ``Hh = E^-1 H E^-1`` and the
    ``y`` derivatives are covariant.
    """

    def __init__(self, H, grid, gauge=None):
        self.gauge = gauge if _has_y(grid) else None
        if self.gauge is not None:
            H = self.gauge.to_hat(H)
        self.H = H
        self.Hi = _inv(H)
        self.d = del_apply(H, grid)
        self.db = dbar_apply(H, grid)
        self.lap = dbar_del_apply(H, grid)
        if _has_y(grid):
            self.dy, self.dyy = self.y_derivs(H, grid)
        else:
            self.dy = self.dyy = None

    def hat(self, X):
        return X if self.gauge is None else self.gauge.to_hat(X)

    def y_derivs(self, Z, grid):
        dz = dy_apply(Z, grid)
        ddz = dyy_apply(Z, grid)
        if self.gauge is None:
            return dz, ddz
        return self.gauge.nabla(Z, dz), self.gauge.nabla2(Z, dz, ddz)

    def twist(self, ph):
        if self.gauge is None:
            return ph
        return self.gauge.conjugate(np.broadcast_to(ph, self.H.shape))

    def untwist(self, X):
        return X if self.gauge is None else self.gauge.unconjugate(X)

    def principal(self):
        """``P`` with ``-dbar(H^-1 dH) - d_y(H^-1 d_y H) = H^-1 P``."""
        p = self.db @ self.Hi @ self.d - self.lap
        if self.dy is not None:
            p = p + self.dy @ self.Hi @ self.dy - self.dyy
        return p


def omega_field(H, phi, grid, derivs=None, gauge=None):
    """Residual ``Omega(H)`` as an array, trace projected out.

    The derivative terms use the expanded form
    ``H^-1 [(dbar H) H^-1 (d H) - dbar d H + (d_y H) H^-1 (d_y H) - d_yy H]``
    with the compact fourth-order Laplacian, so ``H Omega`` is exactly
    Hermitian at every node and the periodic stencil has no odd-even
    decoupling.  An optional :class:`YGauge` switches to the gauge-balanced
    form; ``derivs`` carries its own gauge when given.
    """
    H = np.asarray(H)
    _check_field(H, grid)
    dv = _Derivs(H, grid, gauge) if derivs is None else derivs
    ph = dv.twist(higgs_on_grid(phi, grid))
    phd = dv.Hi @ dagger(ph) @ dv.H
    return dv.untwist(traceless(dv.Hi @ dv.principal() + commutator(ph, phd)))


@dataclass
class ResidualField:
    """Residual values with cached norms.

    Attributes
    ----------
    omega : ndarray
    sup : float
        Largest metric norm ``|Omega|_H`` over nodes.
    weighted_sup : float
        Largest ``y^2 |Omega|_H`` (equal to ``sup`` on a 2D grid).
    interior_weighted_sup : float
        Same, restricted to nodes strictly inside the ``y`` range.
    """

    omega: np.ndarray
    sup: float
    weighted_sup: float
    interior_weighted_sup: float


def metric_norm(H, a):
    """Pointwise ``|a|_H = sqrt(Tr(a^dagger_H a))`` for endomorphism fields."""
    adj = np.linalg.solve(H, dagger(a) @ H)
    return np.sqrt(np.abs(np.trace(adj @ a, axis1=-2, axis2=-1).real))


def omega_residual(H, phi, grid, gauge=None):
    """Residual field with sup and ``y^2``-weighted sup norms.

    Parameters
    ----------
    H : ndarray
        Metric field on ``grid``.
    phi : HiggsData or ndarray
    grid : Grid2 or Grid3
    gauge : YGauge, optional

    Returns
    -------
    ResidualField
    """
    om = omega_field(H, phi, grid, gauge=gauge)
    mag = metric_norm(H, om)
    if _has_y(grid):
        w = mag * grid.y[None, None, :] ** 2
        inner = float(w[:, :, 1:-1].max())
        return ResidualField(om, float(mag.max()), float(w.max()), inner)
    s = float(mag.max())
    return ResidualField(om, s, s, s)


def omega_derivative(H, dH, phi, grid, derivs=None, gauge=None):
    """Exact directional derivative of :func:`omega_field` along ``dH``.

    Product-rule expansion of the discrete residual; no differencing in the
    metric.
    """
    _check_field(H, grid)
    dv = _Derivs(H, grid, gauge) if derivs is None else derivs
    ph = dv.twist(higgs_on_grid(phi, grid))
    dH = dv.hat(dH)
    Hi = dv.Hi
    HidH = Hi @ dH
    dp = (dbar_apply(dH, grid) @ Hi @ dv.d - dv.db @ HidH @ Hi @ dv.d
          + dv.db @ Hi @ del_apply(dH, grid) - dbar_del_apply(dH, grid))
    if dv.dy is not None:
        dyh, dyyh = dv.y_derivs(dH, grid)
        dp = dp + (dyh @ Hi @ dv.dy - dv.dy @ HidH @ Hi @ dv.dy
                   + dv.dy @ Hi @ dyh - dyyh)
    phs = dagger(ph)
    dphd = -HidH @ Hi @ phs @ dv.H + Hi @ phs @ dH
    return dv.untwist(traceless(-HidH @ Hi @ dv.principal() + Hi @ dp
                                + commutator(ph, dphd)))


def linearization_apply(H, phi, s, grid, derivs=None, gauge=None):
    """``d/de Omega(H e^{e s})`` at ``e = 0``, assembled analytically."""
    return omega_derivative(H, H @ s, phi, grid, derivs, gauge)


def _connection(H, grid):
    Hi = _inv(H)
    a = Hi @ del_apply(H, grid)
    ay = Hi @ dy_apply(H, grid) if _has_y(grid) else None
    return Hi, a, ay


def linearization_operator_form(H, phi, s, grid):
    """Linearized operator assembled from covariant derivatives.

    ``L s = -dbar(d_H s) - d_y(nabla_y s) + [phi, [phi^dagger, s]]`` where
    ``d_H s = d s + [H^-1 dH, s]`` and ``nabla_y s = d_y s + [H^-1 d_y H, s]``.
    The second derivatives are composed from first-derivative stencils, so
    this route differs from :func:`linearization_apply` only by
    discretization error.
    """
    _check_field(H, grid)
    Hi, a, ay = _connection(H, grid)
    ph = higgs_on_grid(phi, grid)
    phd = Hi @ dagger(ph) @ H
    out = -dbar_apply(del_apply(s, grid) + commutator(a, s), grid)
    if ay is not None:
        out = out - dy_apply(dy_apply(s, grid) + commutator(ay, s), grid)
    return traceless(out + commutator(ph, commutator(phd, s)))


class _SelfAdjointFrame:
    """Conjugation by ``H^{1/2}`` plus cached functions of ``ad_s``.

    ``H``-self-adjoint fields become Hermitian in this frame, and functions
    of ``ad_s`` commute with the conjugation, so they are evaluated there.
    """

    def __init__(self, H, s=None):
        lam, v = herm_eig(H)
        if np.any(lam <= 0):
            raise DomainError("metric is not positive definite")
        self.g = (v * np.sqrt(lam)[..., None, :]) @ dagger(v)
        self.gi = (v / np.sqrt(lam)[..., None, :]) @ dagger(v)
        if s is not None:
            self.sh = hermitian_part(self.to_frame(s))
            self.lam, self.vec = herm_eig(self.sh)
            self.diff = self.lam[..., :, None] - self.lam[..., None, :]

    def to_frame(self, a):
        return self.g @ a @ self.gi

    def from_frame(self, a):
        return self.gi @ a @ self.g

    def ad_function(self, a, fn):
        vh = dagger(self.vec)
        inner = (vh @ self.to_frame(a) @ self.vec) * fn(self.diff)
        return self.from_frame(self.vec @ inner @ vh)

    def gamma_minus(self, a):
        return self.ad_function(a, lambda d: phi1(-d))

    def sqrt_gamma_minus(self, a):
        return self.ad_function(a, lambda d: np.sqrt(phi1(-d)))

    def exp_metric(self, H):
        """``H e^s``."""
        return H @ self.from_frame(herm_exp(self.sh, check=False))


def expansion_terms(H0, s, phi, grid, frame=None):
    """Right-hand side pieces of ``Omega(H0 e^s) = Omega_0 + gamma(-s) L s + Q(s)``.

    ``Q(s)`` collects what the operator ``gamma(-s)`` fails to commute past:
    ``-[dbar, gamma(-s)] d_H s - [d_y, gamma(-s)] nabla_y s
    + [phi, gamma(-s) X] - gamma(-s) [phi, X]`` with ``X = [phi^dagger, s]``,
    all in the metric ``H0``.

    Returns
    -------
    omega0, gamma_l, q : ndarray
    """
    _check_field(H0, grid)
    fr = _SelfAdjointFrame(H0, s) if frame is None else frame
    Hi, a, ay = _connection(H0, grid)
    ph = higgs_on_grid(phi, grid)
    phd = Hi @ dagger(ph) @ H0
    gam = fr.gamma_minus
    ds = del_apply(s, grid) + commutator(a, s)
    x = commutator(phd, s)
    ls = linearization_operator_form(H0, phi, s, grid)
    q = -dbar_apply(gam(ds), grid) + gam(dbar_apply(ds, grid))
    if ay is not None:
        dys = dy_apply(s, grid) + commutator(ay, s)
        q = q - dy_apply(gam(dys), grid) + gam(dy_apply(dys, grid))
    q = q + commutator(ph, gam(x)) - gam(commutator(ph, x))
    return omega_field(H0, phi, grid), traceless(gam(ls)), traceless(q)


def _interior_sup(val, grid):
    # composed first-derivative stencils drop an order next to a one-sided
    # end, so identity checks skip two nodes at each y boundary
    mag = val
    if _has_y(grid):
        mag = mag * grid.y[None, None, :] ** 2
        mag = mag[:, :, 2:-2]
    return float(np.max(mag))


def expansion_identity_check(H0, s, phi, grid):
    """Weighted sup of ``Omega(H0 e^s) - Omega_0 - gamma(-s) L s - Q(s)``.

    Interior nodes only, ``y^2``-weighted on a 3D grid.  The continuous
    identity is exact, so the value measures discretization error.
    """
    fr = _SelfAdjointFrame(H0, s)
    lhs = omega_field(fr.exp_metric(H0), phi, grid)
    om0, gl, q = expansion_terms(H0, s, phi, grid, fr)
    return _interior_sup(metric_norm(H0, lhs - om0 - gl - q), grid)


def _pair(H, a, b):
    """Pointwise ``Re Tr(a^dagger_H b)``."""
    adj = np.linalg.solve(H, dagger(a) @ H)
    return np.trace(adj @ b, axis1=-2, axis2=-1).real


def norm_identity_terms(H0, s, phi, grid):
    """Both sides of the pointwise norm identity.

    ``<Omega(H0 e^s) - Omega(H0), s> = -1/2 (dbar d + d_y^2)|s|^2
    + |v d_H s|^2 + |v nabla_y s|^2 + |v [phi^dagger, s]|^2`` with
    ``v = gamma(-s)^{1/2}``.

    Returns
    -------
    lhs, laplace_term, gradient_terms : ndarray
        Scalar fields on the grid.
    """
    _check_field(H0, grid)
    fr = _SelfAdjointFrame(H0, s)
    lhs = _pair(H0, omega_field(fr.exp_metric(H0), phi, grid) - omega_field(H0, phi, grid), s)
    Hi, a, ay = _connection(H0, grid)
    ph = higgs_on_grid(phi, grid)
    phd = Hi @ dagger(ph) @ H0
    sq = _pair(H0, s, s).astype(complex)
    lap = dbar_del_apply(sq, grid)
    if ay is not None:
        lap = lap + dyy_apply(sq, grid)
    lap = -0.5 * lap.real

    def vnorm2(z):
        vz = fr.sqrt_gamma_minus(z)
        return _pair(H0, vz, vz)

    grads = vnorm2(del_apply(s, grid) + commutator(a, s)) + vnorm2(commutator(phd, s))
    if ay is not None:
        grads = grads + vnorm2(dy_apply(s, grid) + commutator(ay, s))
    return lhs, lap, grads


def norm_identity_check(H0, s, phi, grid):
    """Weighted interior sup of the norm-identity defect."""
    lhs, lap, grads = norm_identity_terms(H0, s, phi, grid)
    return _interior_sup(np.abs(lhs - lap - grads), grid)


def holomorphic_residual(phi, grid):
    """Sup of ``|dbar phi|`` on the chart; zero for holomorphic data."""
    g2 = grid.slice2d if _has_y(grid) else grid
    ph = higgs_on_grid(phi, g2)
    return float(frobenius(dbar_apply(ph, g2)).max())


@dataclass
class UnitaryFields:
    """Chern-connection fields in unitary gauge, ``g = H^{1/2}``."""

    a_z: np.ndarray
    a_zbar: np.ndarray
    phi_z: np.ndarray
    phi_zbar: np.ndarray
    a_y: np.ndarray
    phi_1: np.ndarray


def unitary_gauge(H, phi, grid):
    """Transform to unitary gauge with ``g = H^{1/2}``.

    ``A_z = g^-dagger d_z g^dagger``, ``A_zbar = -(d_zbar g) g^-1``,
    ``phi_z = g phi g^-1``, ``phi_zbar = g^-dagger conj(phi)^T g^dagger``,
    ``A_y = ((d_y g) g^-1 - g^-dagger d_y g^dagger) / 2`` and
    ``phi_1 = i (g^-dagger d_y g^dagger + (d_y g^dagger) g^-dagger) / 2``.
    """
    _check_field(H, grid)
    ph = higgs_on_grid(phi, grid)
    g = herm_sqrt(H)
    gd = dagger(g)
    gi = np.linalg.inv(g)
    gdi = np.linalg.inv(gd)
    a_z = gdi @ del_apply(gd, grid)
    a_zb = -dbar_apply(g, grid) @ gi
    phi_z = g @ ph @ gi
    phi_zb = gdi @ dagger(ph) @ gd
    if _has_y(grid):
        a_y = 0.5 * (dy_apply(g, grid) @ gi - gdi @ dy_apply(gd, grid))
        phi_1 = 0.5j * (gdi @ dy_apply(gd, grid) + dy_apply(gd, grid) @ gdi)
    else:
        a_y = np.zeros_like(H)
        phi_1 = np.zeros_like(H)
    return UnitaryFields(a_z, a_zb, phi_z, np.broadcast_to(phi_zb, H.shape).copy(), a_y, phi_1)


@dataclass
class ConvergenceReport:
    """Residual norms under ``y``-mesh refinement and the fitted order."""

    steps: list
    residuals: list
    order: float

    def to_dict(self):
        return {"steps": self.steps, "residuals": self.residuals, "order": self.order}


def nahm_residual_convergence(ctx, nodes_per_decade=(8, 16, 32, 64), y_min=1e-2,
                              y_max=4.0, nx=5):
    """Interior ``y^2``-weighted residual of the Nahm model under refinement.

    The model is an exact solution for ``phi = e_+``, so the discrete
    residual is pure truncation error.  The order is the least-squares slope
    of ``log residual`` against ``log(rho - 1)``, ``rho`` the mesh ratio.
    """
    from .models import nahm_model_metric
    phi = np.array(ctx.sl2_plus, dtype=complex)
    steps, res = [], []
    for npd in nodes_per_decade:
        g = Grid3.graded(nx, nx, y_max, nodes_per_decade=npd, y_min=y_min)
        H = np.broadcast_to(nahm_model_metric(ctx, g.y), g.shape + (ctx.dim, ctx.dim))
        r = omega_residual(H.astype(complex), phi, g)
        steps.append(float(g.ratio - 1.0))
        res.append(r.interior_weighted_sup)
    order = float(np.polyfit(np.log(steps), np.log(res), 1)[0])
    return ConvergenceReport(steps, res, order)
