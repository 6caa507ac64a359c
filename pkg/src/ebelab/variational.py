"""Donaldson functional, its two variations, and the uniqueness test.

For metrics ``K`` and ``H = K e^s`` (``s`` traceless and ``K``-self-adjoint)

    M(H, K) = int_0^1 int <s, Omega(K e^{u s})> dV du,

so along ``H_t = K e^{t s}`` the first variation is ``int Tr(Omega_{H_t} s)``
and the second is ``int Tr(s L_{H_t} s)``.  The second variation is also
evaluated directly as the sum of squared covariant derivatives plus the
boundary term ``-1/2 int (dbar d + d_y^2)|s|^2``; the gap between the two
routes is a discretization error bound.
"""

from dataclasses import asdict, dataclass, field, replace
import json

import numpy as np

from .ebe import _Derivs, _pair, higgs_on_grid, linearization_apply, omega_field
from .errors import DomainError
from .field import (Grid3, dagger, dbar_del_apply, del_apply, dy_apply, dyy_apply,
                    herm_exp, herm_log, herm_sqrt, hermitian_part)
from .liealg import commutator
from .solver import continuity_solve, metric_distance

GL_NODES = 8
TRACE_TOL = 1e-9


@dataclass
class FunctionalReport:
    """Value and variations of the Donaldson functional along ``K e^{t s}``.

    Attributes
    ----------
    value : float
        ``M(H, K)`` with ``GL_NODES`` Gauss-Legendre nodes in ``u``.
    t : list of float
        Sample points of the variations.
    first_variation : list of float
        ``m'(t) = int Tr(Omega_{H_t} s)``.
    second_variation : list of float
        ``m''(t) = int Tr(s L_{H_t} s)`` (gradient route).
    second_variation_direct : list of float
        Sum of squared covariant derivatives plus the boundary term.
    boundary_terms : list of float
        ``-1/2 int (dbar d + d_y^2)|s|^2`` at each ``t``.
    u_nodes, u_weights : list of float
        Gauss-Legendre rule on ``[0, 1]``.
    epsilon_quad : float
        ``|M_8 - M_4|`` plus the largest gap between the two second-variation
        routes.
    """

    value: float
    t: list
    first_variation: list
    second_variation: list
    second_variation_direct: list
    boundary_terms: list
    u_nodes: list
    u_weights: list
    epsilon_quad: float
    value_low_order: float = 0.0
    meta: dict = field(default_factory=dict)

    def convex_within_tolerance(self):
        """``m''(t) >= -epsilon_quad`` at every sample."""
        return all(v >= -self.epsilon_quad for v in self.second_variation)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def gauss_legendre_unit(n):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _volume(grid):
    return grid.volume_weights() if isinstance(grid, Grid3) else grid.area_weights()


def integrate(f, grid):
    """Grid quadrature of a scalar field (periodic rectangle rule times trapezoid)."""
    return float(np.sum(np.asarray(f).real * _volume(grid)))


class Geodesic:
    """The path ``H_t = K e^{t s}`` written in the frame ``g = K^{1/2}``.

    Parameters
    ----------
    K : ndarray
        Base metric field.
    s_hat : ndarray
        Hermitian traceless field; ``s = g^-1 s_hat g``.
    """

    def __init__(self, K, s_hat):
        self.K = np.asarray(K, dtype=complex)
        self.g = herm_sqrt(hermitian_part(self.K))
        self.gi = np.linalg.inv(self.g)
        self.s_hat = hermitian_part(np.asarray(s_hat, dtype=complex))
        tr = np.trace(self.s_hat, axis1=-2, axis2=-1).real
        if np.max(np.abs(tr)) > TRACE_TOL * max(1.0, float(np.abs(self.s_hat).max())):
            raise DomainError("the direction s must be traceless")
        self.s = self.gi @ self.s_hat @ self.g

    @classmethod
    def between(cls, H, K):
        """Geodesic from ``K`` (``t = 0``) to ``H`` (``t = 1``)."""
        g = herm_sqrt(hermitian_part(np.asarray(K, dtype=complex)))
        gi = np.linalg.inv(g)
        return cls(K, herm_log(hermitian_part(gi @ np.asarray(H) @ gi)))

    def metric(self, t):
        return hermitian_part(self.g @ herm_exp(t * self.s_hat, check=False) @ self.g)


def _moment_density(geo, t, phi, grid, gauge):
    om = omega_field(geo.metric(t), phi, grid, gauge=gauge)
    return np.trace(geo.s @ om, axis1=-2, axis2=-1).real


def first_variation(geo, t, phi, grid, gauge=None):
    """``m'(t) = int Tr(Omega_{H_t} s)``."""
    return integrate(_moment_density(geo, t, phi, grid, gauge), grid)


def functional_value(geo, phi, grid, nodes=GL_NODES, gauge=None, t=1.0):
    """``M(H_t, K) = int_0^t m'(v) dv`` by Gauss-Legendre in ``v``."""
    u, w = gauss_legendre_unit(nodes)
    return float(t * sum(wi * first_variation(geo, t * ui, phi, grid, gauge)
                         for ui, wi in zip(u, w)))


def second_variation(geo, t, phi, grid, gauge=None):
    """Both routes to ``m''(t)``.

    Returns
    -------
    gradient : float
        ``int Tr(s L_{H_t} s)``.
    direct : float
        ``int |d_H s|^2 + |nabla_y s|^2 + |[phi^dagger_H, s]|^2`` plus boundary.
    boundary : float
        ``-1/2 int (dbar d + d_y^2)|s|^2``.
    """
    H = geo.metric(t)
    s = geo.s
    dv = _Derivs(H, grid, gauge)
    ls = linearization_apply(H, phi, s, grid, derivs=dv)
    gradient = integrate(np.trace(s @ ls, axis1=-2, axis2=-1).real, grid)
    a = dv.untwist(dv.Hi @ dv.d)
    ph = higgs_on_grid(phi, grid)
    phd = np.linalg.solve(H, dagger(ph) @ H)
    dens = _pair(H, del_apply(s, grid) + commutator(a, s),
                 del_apply(s, grid) + commutator(a, s))
    dens = dens + _pair(H, commutator(phd, s), commutator(phd, s))
    sq = np.trace(s @ s, axis1=-2, axis2=-1).real.astype(complex)
    lap = dbar_del_apply(sq, grid)
    if isinstance(grid, Grid3):
        ay = dv.untwist(dv.Hi @ dv.dy)
        ns = dy_apply(s, grid) + commutator(ay, s)
        dens = dens + _pair(H, ns, ns)
        lap = lap + dyy_apply(sq, grid)
    boundary = integrate(-0.5 * lap.real, grid)
    direct = integrate(dens, grid) + boundary
    return gradient, direct, boundary


def donaldson_value(H, K, phi, grid, t_samples=(0.0, 0.5, 1.0), nodes=GL_NODES,
                    gauge=None):
    """Donaldson functional ``M(H, K)`` with first and second variations.

    Parameters
    ----------
    H, K : ndarray
        Metric fields; ``H = K e^s`` with ``s`` traceless, zero on both
        ``y`` ends.
    phi : HiggsData or ndarray
    grid : Grid2 or Grid3
    t_samples : sequence of float
        Points ``t`` where ``m'`` and ``m''`` are reported.
    nodes : int
        Gauss-Legendre nodes for the ``u`` integral; the error estimate
        compares with half as many.
    gauge : YGauge, optional
        Residual discretization, as in the solver.

    Returns
    -------
    FunctionalReport

    Raises
    ------
    DomainError
        If ``log(K^-1 H)`` is not traceless.
    """
    geo = Geodesic.between(H, K)
    value = functional_value(geo, phi, grid, nodes, gauge)
    low = functional_value(geo, phi, grid, max(1, nodes // 2), gauge)
    first, grad, direct, bnd = [], [], [], []
    for t in t_samples:
        first.append(first_variation(geo, t, phi, grid, gauge))
        gv, dr, bd = second_variation(geo, t, phi, grid, gauge)
        grad.append(gv)
        direct.append(dr)
        bnd.append(bd)
    gap = max((abs(a - b) for a, b in zip(grad, direct)), default=0.0)
    u, w = gauss_legendre_unit(nodes)
    return FunctionalReport(
        value=value, t=[float(t) for t in t_samples], first_variation=first,
        second_variation=grad, second_variation_direct=direct, boundary_terms=bnd,
        u_nodes=u.tolist(), u_weights=w.tolist(),
        epsilon_quad=abs(value - low) + gap, value_low_order=low,
        meta={"nodes": nodes, "low_order_nodes": max(1, nodes // 2)})


def smooth_direction(grid, m, rng, amplitude=1.0, modes=2, y_range=(0.05, 2.0)):
    """Random smooth Hermitian traceless field supported in ``y_range``.

    Low Fourier modes in ``(x2, x3)`` times a ``C^infinity`` bump in ``y``;
    scaled so the sup of the Frobenius norm equals ``amplitude``.
    """
    x2, x3 = grid.slice2d.coords()
    s = np.zeros(grid.shape + (m, m), dtype=complex)
    lo, hi = np.log(y_range[0]), np.log(y_range[1])
    u = (np.log(grid.y) - lo) / (hi - lo)
    inside = (u > 0) & (u < 1)
    bump = np.zeros_like(u)
    bump[inside] = np.exp(-1.0 / (u[inside] * (1.0 - u[inside])) + 4.0)
    for kx in range(-modes, modes + 1):
        for kz in range(-modes, modes + 1):
            c = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
            c = hermitian_part(c) / (1.0 + kx * kx + kz * kz)
            c -= np.trace(c) / m * np.eye(m)
            ph = rng.uniform(0, 2 * np.pi)
            wave = np.cos(2 * np.pi * (kx * x2 + kz * x3) + ph)
            s += wave[:, :, None, None, None] * bump[None, None, :, None, None] * c
    s = hermitian_part(s)
    norm = np.sqrt(np.sum(np.abs(s) ** 2, axis=(-2, -1))).max()
    return s * (amplitude / norm) if norm > 0 else s


def perturb_background(background, s0):
    """Background with frame ``e^{s0/2} g``, i.e. metric ``g^dagger e^{s0} g``."""
    frame = herm_exp(0.5 * hermitian_part(s0), check=False) @ background.frame
    H = hermitian_part(dagger(frame) @ frame)
    return replace(background, H=H, frame=frame)


def conjugate_problem(background, phi, u):
    """Background and Higgs field of the problem conjugated by a constant unitary.

    ``phi -> u phi u^dagger`` and ``H -> u H u^dagger``; the frame becomes
    ``g u^dagger`` and the discretization gauge is conjugated along.
    """
    u = np.asarray(u, dtype=complex)
    frame = background.frame @ dagger(u)
    bg = replace(background, H=hermitian_part(dagger(frame) @ frame), frame=frame,
                 gauge=None if background.gauge is None else background.gauge.conjugated(u))
    return bg, phi.conjugated(u)


@dataclass
class UniquenessReport:
    """Distance between metrics solved from different backgrounds."""

    distance: float
    residuals: list
    mask_y_max: float

    def to_dict(self):
        return asdict(self)


def uniqueness_test(ctx, phi, backgrounds, grid, schedule=None, tol=1e-9, y_max=None):
    """Solve from each background and report the largest pairwise distance.

    Parameters
    ----------
    backgrounds : sequence of BackgroundMetric
        At least two; all must share the boundary data of ``phi``.
    tol : float
        Weighted residual target of each solve.
    y_max : float, optional
        Compare only nodes with ``y <= y_max`` (all by default).

    Returns
    -------
    UniquenessReport
        ``distance`` is the sup over nodes of ``|log(H_1^-1 H_j)|``.

    Raises
    ------
    SolverError
        Propagated from a failed solve.
    """
    if len(backgrounds) < 2:
        raise DomainError("need at least two backgrounds")
    states = [continuity_solve(ctx, phi, bg, grid, schedule, tol=tol) for bg in backgrounds]
    metrics = [st.metric() for st in states]
    mask = None
    if y_max is not None:
        mask = np.broadcast_to(grid.y <= y_max, grid.shape)
    dist = max(metric_distance(metrics[0], h, mask) for h in metrics[1:])
    return UniquenessReport(dist, [st.residual_norm for st in states],
                            float(grid.y_max if y_max is None else y_max))
