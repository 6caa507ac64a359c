"""Newton-Krylov solves: the 2D Hitchin far field, backgrounds and continuation.

The unknown is always a Hermitian traceless field ``s`` written in a fixed
background frame ``g`` (one invertible matrix per node), so the metric is
``H = g^dagger e^s g`` and ``det H = |det g|^2`` exactly.  With
``Omega_hat = g Omega(H) g^-1`` the continuity residual is

    N_t(s) = e^{s/2} Omega_hat e^{-s/2} + t s,

which is Hermitian at every node and is the frame form of
``Ad(e^{s/2}) Omega_H + t s`` for ``H = K e^s``.  On a 3D grid the residual
part is multiplied by a weight ``w`` (``y^2`` by default):

    N_t(s) = w e^{s/2} Omega_hat e^{-s/2} + t s.

The weight puts the homotopy term on the scale of the operator, which
behaves like ``y^-2`` near the boundary, so the trivial root at ``t = 1``
stays bounded; ``t = 0`` is the same equation.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ebe import YGauge, _Derivs, higgs_on_grid, omega_derivative, omega_field
from .errors import DomainError, SolverError
from .field import (Grid2, Grid3, dagger, herm_eig, hermitian_part, phi1,
                    weighted_norms)
from .holo import HiggsData, periodic_modulus, periodic_knot_higgs
from .liealg import (casimir_matrix, commutator, from_coords,
                     indicial_roots, to_coords)
from .models import KnotChart, closed_form_profile, knot_model_metric, toda_bvp_solve

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# framed residual and its Jacobian
# --------------------------------------------------------------------------

def _eig_functions(s):
    lam, v = herm_eig(s)
    return lam, v, dagger(v)


def _apply_eig(lam, v, vh, fn):
    return (v * fn(lam)[..., None, :]) @ vh


class FramedProblem:
    """Residual ``N_t`` and its exact Jacobian on the active nodes.

    Parameters
    ----------
    grid : Grid2 or Grid3
    phi : HiggsData or ndarray
    frame : ndarray
        ``g`` per node, shape ``grid.shape + (m, m)``.
    t : float
    weight : ndarray, optional
        Weight ``w`` multiplying the moment-map part; defaults to ``y^2`` on
        a 3D grid and 1 on a 2D grid.
    gauge : YGauge, optional
        Gauge of the residual discretization.

    Notes
    -----
    On a 3D grid the first and last ``y`` layers hold Dirichlet data
    ``s = 0`` and carry no unknowns.
    """

    def __init__(self, grid, phi, frame, t=0.0, weight=None, gauge=None):
        self.grid = grid
        self.gauge = gauge
        self.is3d = isinstance(grid, Grid3)
        self.phi = higgs_on_grid(phi, grid)
        self.g = np.asarray(frame, dtype=complex)
        self.gi = np.linalg.inv(self.g)
        self.m = self.g.shape[-1]
        self.d = self.m * self.m - 1
        self.t = float(t)
        if weight is None:
            weight = (np.broadcast_to(grid.y ** 2, grid.shape) if self.is3d
                      else np.ones(grid.shape))
        self.weight = np.asarray(weight, dtype=float)
        self._w = self.weight[..., None, None]
        self.active_shape = ((grid.nx, grid.nz, grid.ny - 2) if self.is3d
                             else grid.shape)
        self.size = int(np.prod(self.active_shape)) * self.d
        self._point = None
        self.sparse_preconditioner = None

    # -- coordinates ------------------------------------------------------
    def active(self, f):
        return f[:, :, 1:-1] if self.is3d else f

    def to_field(self, x):
        c = np.asarray(x).reshape(self.active_shape + (self.d,))
        s = np.zeros(self.grid.shape + (self.m, self.m), dtype=complex)
        if self.is3d:
            s[:, :, 1:-1] = from_coords(c, self.m)
        else:
            s[...] = from_coords(c, self.m)
        return s

    def to_vector(self, f):
        return to_coords(self.active(f)).ravel()

    def active_weight(self):
        return self.active(self.weight)

    # -- evaluation -------------------------------------------------------
    def metric(self, s):
        lam, v, vh = _eig_functions(s)
        return dagger(self.g) @ _apply_eig(lam, v, vh, np.exp) @ self.g

    def set_point(self, x):
        s = self.to_field(x)
        lam, v, vh = _eig_functions(s)
        es = _apply_eig(lam, v, vh, np.exp)
        eh = _apply_eig(lam, v, vh, lambda l: np.exp(0.5 * l))
        ehi = _apply_eig(lam, v, vh, lambda l: np.exp(-0.5 * l))
        H = dagger(self.g) @ es @ self.g
        H = 0.5 * (H + dagger(H))
        dv = _Derivs(H, self.grid, self.gauge)
        om = omega_field(H, self.phi, self.grid, dv)
        nt_om = self._w * hermitian_part(eh @ (self.g @ om @ self.gi) @ ehi)
        self._point = dict(x=np.array(x, copy=True), s=s, lam=lam, v=v, vh=vh,
                           es=es, eh=eh, ehi=ehi, H=H, dv=dv, om=om, n_om=nt_om)
        return self._point

    def residual_field(self, x=None):
        p = self.set_point(x) if x is not None else self._point
        return p["n_om"] + self.t * p["s"]

    def residual(self, x):
        return self.to_vector(self.residual_field(x))

    def weighted_sup(self, nfield):
        """Sup over active nodes of an already weighted residual field."""
        from .field import frobenius
        return float(np.max(self.active(frobenius(nfield))))

    def jacobian_apply(self, xp):
        """Exact derivative of :meth:`residual` at the last point set."""
        p = self._point
        sp = self.to_field(xp)
        lam, v, vh = p["lam"], p["v"], p["vh"]
        diff = lam[..., :, None] - lam[..., None, :]
        inner = vh @ sp @ v
        gm = v @ (inner * phi1(-diff)) @ vh
        gh = v @ (inner * phi1(0.5 * diff)) @ vh
        dH = dagger(self.g) @ (p["es"] @ gm) @ self.g
        dom = omega_derivative(p["H"], dH, self.phi, self.grid, p["dv"])
        dn = (self._w * (p["eh"] @ (self.g @ dom @ self.gi) @ p["ehi"])
              + 0.5 * commutator(gh, p["n_om"]) + self.t * sp)
        return self.to_vector(hermitian_part(dn))

    def operator(self):
        return spla.LinearOperator((self.size, self.size), matvec=self.jacobian_apply,
                                   dtype=float)


# --------------------------------------------------------------------------
# preconditioner: x-averaged Jacobian, Fourier in x, block Thomas in y
# --------------------------------------------------------------------------

def _periodic_symbol(n, h):
    """Symbol of minus the fourth-order periodic second derivative."""
    th = 2.0 * np.pi * np.fft.fftfreq(n)
    return (30.0 - 32.0 * np.cos(th) + 2.0 * np.cos(2.0 * th)) / (12.0 * h * h)


def _mode_shifts(grid):
    lx = _periodic_symbol(grid.nx, grid.hx)
    lz = _periodic_symbol(grid.nz, grid.hz)
    return 0.25 * (lx[:, None] + lz[None, :])


class BlockPreconditioner:
    """Inverse of ``J0 + lambda_k M`` per periodic Fourier mode.

    ``J0`` is block tridiagonal in ``y`` with ``d x d`` blocks, ``lambda_k``
    the symbol of ``-dbar d`` and ``M`` its coefficient per ``y`` node
    (identity when omitted).
    """

    def __init__(self, lower, diag, upper, grid, shape, lap=None):
        self.shape = shape
        nyi, d = diag.shape[0], diag.shape[-1]
        shifts = _mode_shifts(grid).ravel()
        lap = np.broadcast_to(np.eye(d), diag.shape) if lap is None else lap
        dk = diag[None] + shifts[:, None, None, None] * lap[None]
        piv = np.empty_like(dk)
        piv[:, 0] = np.linalg.inv(dk[:, 0])
        for j in range(1, nyi):
            piv[:, j] = np.linalg.inv(dk[:, j] - lower[j] @ piv[:, j - 1] @ upper[j - 1])
        self.lower, self.upper, self.piv = lower, upper, piv
        self.nx, self.nz = grid.nx, grid.nz

    def solve(self, r):
        nyi = self.piv.shape[1]
        d = self.piv.shape[-1]
        b = np.fft.fft2(r.reshape(self.shape + (d,)) if len(self.shape) == 3
                        else r.reshape(self.shape + (1, d)), axes=(0, 1))
        b = b.reshape(self.nx * self.nz, nyi, d)
        y = np.empty_like(b)
        y[:, 0] = b[:, 0]
        for j in range(1, nyi):
            y[:, j] = b[:, j] - np.einsum("ab,kbc,kc->ka", self.lower[j],
                                          self.piv[:, j - 1], y[:, j - 1])
        x = np.empty_like(b)
        x[:, -1] = np.einsum("kab,kb->ka", self.piv[:, -1], y[:, -1])
        for j in range(nyi - 2, -1, -1):
            rhs = y[:, j] - np.einsum("ab,kb->ka", self.upper[j], x[:, j + 1])
            x[:, j] = np.einsum("kab,kb->ka", self.piv[:, j], rhs)
        out = np.fft.ifft2(x.reshape(self.nx, self.nz, nyi, d), axes=(0, 1)).real
        return out.ravel()

    def operator(self, size):
        return spla.LinearOperator((size, size), matvec=self.solve, dtype=float)


def build_preconditioner(prob):
    """Probe the Jacobian with ``x``-constant fields and average over ``x``.

    A second probe with the lowest ``x2`` cosine mode recovers the
    coefficient of the ``x`` Laplacian, which is not the identity once the
    metric is away from the base frame.
    """
    d = prob.d
    ash = prob.active_shape
    nyi = ash[2] if prob.is3d else 1
    lower = np.zeros((nyi, d, d))
    diag = np.zeros((nyi, d, d))
    upper = np.zeros((nyi, d, d))
    lap = np.zeros((nyi, d, d))
    nx = prob.grid.nx
    wave = np.cos(2.0 * np.pi * np.arange(nx) / nx)
    wave = wave.reshape((nx,) + (1,) * (len(ash) - 1) + (1,))
    shift = 0.25 * _periodic_symbol(nx, prob.grid.hx)[1]
    colors = min(3, nyi)
    for c in range(colors):
        for a in range(d):
            probe = np.zeros(ash + (d,))
            if prob.is3d:
                probe[:, :, c::3, a] = 1.0
            else:
                probe[..., a] = 1.0
            resp = prob.jacobian_apply(probe.ravel()).reshape(ash + (d,))
            rcos = prob.jacobian_apply((probe * wave).ravel()).reshape(ash + (d,))
            rcos = 2.0 * (rcos * wave).mean(axis=(0, 1))
            resp = resp.mean(axis=(0, 1))
            if not prob.is3d:
                diag[0, :, a] = resp
                lap[0, :, a] = (rcos - resp) / shift
                continue
            for j in range(nyi):
                # exactly one of j-1, j, j+1 carries color c
                off = next(o for o in (-1, 0, 1) if (j + o) % 3 == c)
                if not 0 <= j + off < nyi:
                    continue
                if off == 0:
                    diag[j, :, a] = resp[j]
                    lap[j, :, a] = (rcos[j] - resp[j]) / shift
                elif off == -1:
                    lower[j, :, a] = resp[j]
                else:
                    upper[j, :, a] = resp[j]
    return BlockPreconditioner(lower, diag, upper, prob.grid,
                               ash if prob.is3d else prob.grid.shape, lap)


# --------------------------------------------------------------------------
# preconditioner: exact sparse Jacobian by colored probing, sparse LU
# --------------------------------------------------------------------------

X_RADIUS = 2  # reach of the periodic fourth-order stencils


def _plane_offsets():
    r = X_RADIUS
    return [(a, 0) for a in range(-r, r + 1)] + [(0, b) for b in range(-r, r + 1) if b]


def plane_coloring(nx, nz):
    """Greedy coloring of the periodic plane separating overlapping stencils.

    Two nodes share a color only if no stencil contains both, so one probe
    per color recovers every column it touches.
    """
    offs = _plane_offsets()
    conflicts = {(a1 - a2, b1 - b2) for a1, b1 in offs for a2, b2 in offs} - {(0, 0)}
    color = -np.ones((nx, nz), dtype=int)
    for i in range(nx):
        for j in range(nz):
            used = {color[(i + a) % nx, (j + b) % nz] for a, b in conflicts}
            c = 0
            while c in used:
                c += 1
            color[i, j] = c
    return color


def assemble_jacobian(prob):
    """Sparse matrix of :meth:`FramedProblem.jacobian_apply`.

    The Jacobian couples a node to the cross of radius :data:`X_RADIUS` in
    the plane and to its two ``y`` neighbours.  Columns are recovered by
    probing with colors ``plane_color + K (l mod 3)``.
    """
    ash, d = prob.active_shape, prob.d
    nx, nz = ash[0], ash[1]
    pc = plane_coloring(nx, nz)
    kp = int(pc.max()) + 1
    if prob.is3d:
        nyi = ash[2]
        col = pc[:, :, None] + kp * (np.arange(nyi) % 3)[None, None, :]
        offs = [(a, b, 0) for a, b in _plane_offsets()] + [(0, 0, -1), (0, 0, 1)]
    else:
        col = pc
        offs = [(a, b) for a, b in _plane_offsets()]
    idx = np.arange(prob.size).reshape(ash + (d,))
    shifted = []
    for o in offs:
        cq = np.roll(col, (-o[0], -o[1]), axis=(0, 1))
        iq = np.roll(idx, (-o[0], -o[1]), axis=(0, 1))
        valid = np.ones(ash, dtype=bool)
        if prob.is3d and o[2]:
            cq = np.roll(cq, -o[2], axis=2)
            iq = np.roll(iq, -o[2], axis=2)
            if o[2] > 0:
                valid[:, :, -o[2]:] = False
            else:
                valid[:, :, :-o[2]] = False
        shifted.append((cq, iq, valid))
    rows, cols, vals = [], [], []
    for c in range(int(col.max()) + 1):
        mask = col == c
        for a in range(d):
            probe = np.zeros(ash + (d,))
            probe[mask, a] = 1.0
            resp = prob.jacobian_apply(probe.ravel()).reshape(ash + (d,))
            for cq, iq, valid in shifted:
                sel = (cq == c) & valid
                rows.append(idx[sel].ravel())
                cols.append(np.repeat(iq[sel][:, a], d))
                vals.append(resp[sel].ravel())
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(prob.size, prob.size))


class SparsePreconditioner:
    """Incomplete (or, with ``drop_tol=None``, complete) LU of a sparse matrix."""

    def __init__(self, matrix, drop_tol=1e-3, fill_factor=20):
        mat = sp.csc_matrix(matrix)
        if drop_tol is None:
            self.lu = spla.splu(mat)
        else:
            self.lu = spla.spilu(mat, drop_tol=drop_tol, fill_factor=fill_factor)

    def solve(self, r):
        return self.lu.solve(np.asarray(r, dtype=float))

    def operator(self, size):
        return spla.LinearOperator((size, size), matvec=self.solve, dtype=float)


# --------------------------------------------------------------------------
# damped Newton
# --------------------------------------------------------------------------

@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    history: list
    reason: str = ""


def _merit(prob, r):
    return float(np.sum(r ** 2))


REBUILD_ITERATIONS = 40
LINEAR_ATOL = 1e-14  # per unknown; round-off floor for the Krylov residual


def _gmres(prob, r, pre, rtol, restart, maxiter):
    count = [0]

    def tick(_):
        count[0] += 1

    dx, info = spla.gmres(prob.operator(), -r, M=pre.operator(prob.size), rtol=rtol,
                          atol=LINEAR_ATOL * np.sqrt(prob.size), restart=restart, maxiter=maxiter, callback=tick,
                          callback_type="pr_norm")
    return dx, info, count[0]


def _linear_solve(prob, r, rtol, restart, maxiter):
    """GMRES with the cheapest preconditioner that works.

    The ``x``-averaged Fourier preconditioner is exact for ``x``-independent
    coefficients.  When it stalls, the exact Jacobian is assembled and an
    incomplete LU is cached on the problem and reused until it needs more
    than ``REBUILD_ITERATIONS`` iterations.
    """
    cached = prob.sparse_preconditioner
    if cached is not None:
        dx, info, nit = _gmres(prob, r, cached, rtol, restart, maxiter)
        if info == 0 and nit <= REBUILD_ITERATIONS:
            return dx, info, nit
    else:
        dx, info, nit = _gmres(prob, r, build_preconditioner(prob), rtol, restart, 1)
        if info == 0:
            return dx, info, nit
    log.info("assembling sparse Jacobian preconditioner (%d unknowns)", prob.size)
    prob.sparse_preconditioner = SparsePreconditioner(assemble_jacobian(prob))
    dx2, info2, nit2 = _gmres(prob, r, prob.sparse_preconditioner, rtol, restart, maxiter)
    return dx2, info2, nit + nit2


def newton_solve(prob, x0, tol, max_iter=30, gmres_rtol=1e-8, max_halvings=12,
                 restart=60, maxiter=20, check_every=0, fd_checks=None):
    """Damped Newton-Krylov for ``N_t(x) = 0``.

    Termination when the weighted sup of the residual drops to ``tol``.
    Armijo backtracking on the weighted squared residual.

    Returns
    -------
    x : ndarray
    report : NewtonReport
    """
    x = np.array(x0, dtype=float)
    history = []
    r = prob.residual(x)
    for it in range(max_iter + 1):
        nfield = prob.residual_field()
        wsup = prob.weighted_sup(nfield)
        merit = _merit(prob, r)
        history.append({"iter": it, "weighted_sup": wsup, "merit": merit})
        if wsup <= tol:
            return x, NewtonReport(True, it, history)
        if it == max_iter:
            break
        if fd_checks is not None and check_every and it % check_every == 0:
            fd_checks.append(jacobian_fd_slope(prob, x))
            prob.set_point(x)
        dx, info, nit = _linear_solve(prob, r, gmres_rtol, restart, maxiter)
        lam = 1.0
        accepted = False
        for _ in range(max_halvings):
            xn = x + lam * dx
            rn = prob.residual(xn)
            if np.all(np.isfinite(rn)) and _merit(prob, rn) <= (1.0 - 1e-4 * lam) * merit:
                accepted = True
                break
            lam *= 0.5
        history[-1].update(step=lam, gmres_info=int(info), gmres_iterations=nit)
        if not accepted:
            prob.set_point(x)
            return x, NewtonReport(False, it, history, "line search failed")
        x, r = xn, rn
    prob.set_point(x)
    return x, NewtonReport(False, max_iter, history, "iteration limit")


def jacobian_fd_slope(prob, x, eps=(1e-2, 1e-3, 1e-4, 1e-5), seed=0):
    """Finite-difference consistency slope of the Jacobian at ``x``.

    Returns the fitted slope of ``|(N(x + e v) - N(x))/e - J v|`` against
    ``e`` for a random direction ``v``; close to 1 for a correct Jacobian.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(prob.size)
    r0 = prob.residual(x)
    jv = prob.jacobian_apply(v)
    errs = []
    for e in eps:
        errs.append(np.linalg.norm((prob.residual(x + e * v) - r0) / e - jv))
    errs = np.maximum(np.array(errs), 1e-300)
    return float(np.polyfit(np.log(eps), np.log(errs), 1)[0])


# --------------------------------------------------------------------------
# 2D Hitchin far field
# --------------------------------------------------------------------------

@dataclass
class HitchinSolution:
    """Far-field metric on the 2D slice.

    Attributes
    ----------
    H : ndarray, shape (nx, nz, m, m)
    residual : float
        Sup of ``|F_H + [phi, phi^dagger]|_H``.
    history : list
    """

    H: np.ndarray
    residual: float
    history: list


def hitchin2d_solve(ctx, phi, grid2, tol=1e-11, max_iter=60, initial=None):
    """Solve ``-dbar(H^-1 d H) + [phi, phi^dagger_H] = 0`` on the torus.

    Newton on ``s`` with ``H = g^dagger e^s g``, ``g`` the initial frame
    (identity by default).

    Raises
    ------
    SolverError
        When Newton stagnates, with the iteration history.
    """
    if not isinstance(grid2, Grid2):
        raise DomainError("hitchin2d_solve needs a Grid2")
    m = ctx.dim
    frame = np.broadcast_to(np.eye(m, dtype=complex), grid2.shape + (m, m)).copy()
    if initial is not None:
        from .field import herm_sqrt
        frame = herm_sqrt(np.asarray(initial, dtype=complex))
    prob = FramedProblem(grid2, phi, frame, t=0.0)
    x, rep = newton_solve(prob, np.zeros(prob.size), tol, max_iter=max_iter,
                          gmres_rtol=1e-12, maxiter=40)
    if not rep.converged:
        raise SolverError(f"2D Hitchin Newton failed: {rep.reason}", history=rep.history,
                          residual=rep.history[-1]["weighted_sup"])
    H = prob.metric(prob.to_field(x))
    H = 0.5 * (H + dagger(H))
    return HitchinSolution(H, rep.history[-1]["weighted_sup"], rep.history)


def scalar_balance_oracle(c, lo=1e-6, hi=1e6, tol=1e-15):
    """Constant solution ``diag(h, 1/h)`` for ``phi = [[0, 1], [c, 0]]``.

    Bisection on ``h^2 - |c|^2 / h^2 = 0``.
    """
    c = abs(c)
    if c == 0:
        raise DomainError("no constant solution for c = 0")
    f = lambda h: h * h - c * c / (h * h)
    for _ in range(400):
        mid = np.sqrt(lo * hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi / lo - 1 < tol:
            break
    return np.sqrt(lo * hi)


# --------------------------------------------------------------------------
# backgrounds
# --------------------------------------------------------------------------

def smooth_step(u, derivatives=False):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``.

    With ``derivatives=True`` returns ``(f, f', f'')`` in closed form.
    """
    u = np.asarray(u, dtype=float)
    pos, neg = u > 0, u < 1
    up = np.where(pos, u, 1.0)
    un = np.where(neg, 1.0 - u, 1.0)
    a = np.where(pos, np.exp(-1.0 / up), 0.0)
    b = np.where(neg, np.exp(-1.0 / un), 0.0)
    tot = a + b
    f = a / tot
    if not derivatives:
        return f
    da = a / up ** 2
    db = -b / un ** 2
    dda = a * (1.0 / up ** 4 - 2.0 / up ** 3)
    ddb = b * (1.0 / un ** 4 - 2.0 / un ** 3)
    num = da * b - a * db
    dnum = dda * b - a * ddb
    dtot = da + db
    return f, num / tot ** 2, dnum / tot ** 2 - 2.0 * num * dtot / tot ** 3


def _herm_power(h, p):
    lam, v = herm_eig(h)
    return (v * (lam ** np.asarray(p)[..., None])[..., None, :]) @ dagger(v)


def geodesic(a, b, w):
    """Point ``a^{1/2} (a^{-1/2} b a^{-1/2})^w a^{1/2}`` on the geodesic."""
    ah = _herm_power(a, 0.5)
    ahi = _herm_power(a, -0.5)
    mid = hermitian_part(ahi @ b @ ahi)
    return hermitian_part(ah @ _herm_power(mid, w) @ ah)


@dataclass
class BackgroundMetric:
    """Approximate solution used as the base of the continuity method.

    Attributes
    ----------
    H : ndarray
        ``H_b`` on the 3D grid.
    frame : ndarray
        ``g`` with ``g^dagger g = H_b``.
    order : int
        Improvement order ``k``.
    ell : ndarray
        Blend profile ``l(y)``.
    blend : ndarray
        Weight ``w(y)`` of the far field.
    y_c : float
    correction : dict
        Exponent and coefficient of the ``k = 1`` term, if any.
    gauge : YGauge
        Gauge ``exp(-l e0 / 2)`` used to discretize the residual.
    """

    H: np.ndarray
    frame: np.ndarray
    order: int
    ell: np.ndarray
    blend: np.ndarray
    y_c: float
    correction: dict = field(default_factory=dict)
    gauge: YGauge = None


def nahm_error_coefficients(ctx, q_values):
    """Powers of ``y`` in the residual of the Nahm model metric.

    In the frame ``E = exp(-log(y) e0 / 2)`` the Higgs field becomes
    ``e+ / y + sum_k q_{k+2} y^{k+1} E_{n, n-1-k}`` and the residual of the
    model is ``sum_p F_p y^p`` (the ``e+`` self-commutator cancels the
    ``y`` derivative term).

    Parameters
    ----------
    q_values : sequence of ndarray
        ``q_2 .. q_{n+1}`` sampled on the 2D nodes.

    Returns
    -------
    dict
        ``p -> F_p`` with ``F_p`` of shape ``(..., m, m)``.
    """
    n, m = ctx.n, ctx.dim
    shape = np.shape(q_values[0])
    parts = {-1: np.broadcast_to(ctx.sl2_plus.astype(complex), shape + (m, m))}
    for k, q in enumerate(q_values):
        b = np.zeros(shape + (m, m), dtype=complex)
        b[..., n, n - 1 - k] = q
        parts[k + 1] = b
    out = {}
    for a, pa in parts.items():
        for b, pb in parts.items():
            if a == -1 and b == -1:
                continue
            term = commutator(pa, dagger(pb))
            out[a + b] = out.get(a + b, 0) + term
    return out


def _leading_error(ctx, q_values, tol=1e-14):
    coeffs = nahm_error_coefficients(ctx, q_values)
    scale = max(1.0, max(float(np.abs(c).max()) for c in coeffs.values()))
    for p in sorted(coeffs):
        if np.abs(coeffs[p]).max() > tol * scale:
            return p, coeffs[p]
    return None, None


def build_background(ctx, phi, H_inf, grid, k=0, y_c=0.5, inner=None):
    """Blend the boundary model into the far-field metric.

    ``H_b = E G E`` with ``E = exp(-l(y) e0 / 2)``, ``l = (1 - w) log y`` and
    ``G`` the geodesic from the regular part of the inner model to
    ``H_inf`` at parameter ``w(y)``; ``w = 0`` for ``y <= y_c`` and ``w = 1``
    for ``y >= 2 y_c``.  For ``k = 1`` one algebraic correction
    ``s_lam y^lam`` cancels the leading power ``F_p y^p`` of the model
    residual, ``lam = p + 2``, solving ``(C - lam(lam - 1)) s_lam = -F_p``.

    Parameters
    ----------
    inner : ndarray, optional
        Regular part ``E_log^-1 H_model E_log^-1`` of the inner model on the
        grid; identity (the Nahm model) by default.

    Raises
    ------
    DomainError
        If ``k`` is not 0 or 1, if ``lam`` is an indicial root, or if a
        correction is requested with a non-default inner model.
    """
    if k not in (0, 1):
        raise DomainError("improvement order must be 0 or 1")
    m = ctx.dim
    y = grid.y
    w, dw, ddw = smooth_step((y - y_c) / y_c, derivatives=True)
    dw, ddw = dw / y_c, ddw / y_c ** 2
    logy = np.log(y)
    ell = (1.0 - w) * logy
    dell = -dw * logy + (1.0 - w) / y
    ddell = -ddw * logy - 2.0 * dw / y - (1.0 - w) / y ** 2
    e0 = np.diag(ctx.sl2_zero).real.astype(float)
    gauge = YGauge(e0, ell, dell, ddell)
    Ediag = np.exp(-0.5 * ell[:, None] * e0)
    shape = grid.shape + (m, m)
    H_inf = np.asarray(H_inf, dtype=complex)
    far = np.broadcast_to(H_inf[:, :, None], shape)
    if inner is None:
        near = np.broadcast_to(np.eye(m, dtype=complex), shape)
    else:
        near = np.asarray(inner, dtype=complex)
    wfull = np.broadcast_to(w, grid.shape)
    G = geodesic(near, far, wfull)
    Gh = _herm_power(G, 0.5)
    E = Ediag[None, None, :, :, None] * np.eye(m)
    frame = Gh @ E
    H = hermitian_part(dagger(frame) @ frame)
    correction = {}
    if k == 1:
        if inner is not None:
            raise DomainError("the k = 1 correction is implemented for the Nahm model only")
        qv = [np.asarray(q(grid.slice2d.complex_coords()), dtype=complex)
              for q in phi.q_coeffs] if isinstance(phi, HiggsData) else None
        if qv is None:
            raise DomainError("k = 1 needs Hitchin-section data")
        p, fp = _leading_error(ctx, qv)
        if p is not None:
            lam = p + 2
            if lam in indicial_roots(ctx):
                raise DomainError(
                    f"leading error y^{p} needs the exponent {lam}, an indicial root; "
                    "the correction there carries a log y factor and is not supported")
            cm = casimir_matrix(ctx) - lam * (lam - 1) * np.eye(m * m - 1)
            coef = np.linalg.solve(cm, -to_coords(hermitian_part(fp))[..., None])[..., 0]
            s_lam = from_coords(coef, m)
            amp = (1.0 - w) * y ** lam
            s = amp[None, None, :, None, None] * s_lam[:, :, None]
            lam_s, v = herm_eig(s)
            es = (v * np.exp(lam_s)[..., None, :]) @ dagger(v)
            ehalf = (v * np.exp(0.5 * lam_s)[..., None, :]) @ dagger(v)
            H = hermitian_part(dagger(frame) @ es @ frame)
            frame = ehalf @ frame
            correction = {"power": int(p), "exponent": int(lam),
                          "max_coefficient": float(np.abs(s_lam).max())}
        else:
            correction = {"power": None, "exponent": None, "max_coefficient": 0.0}
    return BackgroundMetric(H, frame, k, ell, w, y_c, correction, gauge)


# --------------------------------------------------------------------------
# continuity method
# --------------------------------------------------------------------------

@dataclass
class ContinuitySchedule:
    """Continuation controls.

    ``t`` starts at ``t0 = max(1, sup|kappa| / start_cap)`` so the trivial
    root ``-kappa / t0`` stays bounded, then decreases geometrically by
    ``ratio`` until it falls below ``t_floor`` and jumps to 0.  A failed
    step is retried with half the step; below ``min_step`` the solve aborts.
    """

    start_cap: float = 1.0
    ratio: float = 0.25
    t_floor: float = 1e-3
    min_step: float = 1e-6
    stage_tol: float = 1e-6
    max_newton: int = 30
    max_halvings: int = 12
    gmres_rtol: float = 1e-8
    check_every: int = 10

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SolverState:
    """Result of a continuity solve.

    Attributes
    ----------
    t : float
    s : ndarray
        Hermitian traceless correction in the base frame.
    frame : ndarray
        Base frame ``g``; the metric is ``g^dagger e^s g``.
    residual_norm : float
        Weighted sup of ``N_t(s)`` over interior nodes.
    newton_history : list
    t_schedule : list
    monitors : dict
    """

    t: float
    s: np.ndarray
    frame: np.ndarray
    residual_norm: float
    newton_history: list
    t_schedule: list
    monitors: dict
    grid: object = field(repr=False, default=None)
    phi: object = field(repr=False, default=None)
    weight: object = field(repr=False, default=None)
    gauge: object = field(repr=False, default=None)

    def metric(self):
        lam, v = herm_eig(self.s)
        es = (v * np.exp(lam)[..., None, :]) @ dagger(v)
        return hermitian_part(dagger(self.frame) @ es @ self.frame)

    def recompute_residual(self):
        prob = FramedProblem(self.grid, self.phi, self.frame, self.t, self.weight,
                             self.gauge)
        x = prob.to_vector(self.s)
        return prob.weighted_sup(prob.residual_field(x))

    def report(self):
        """JSON-serializable summary."""
        return {
            "t": self.t,
            "residual_norm": self.residual_norm,
            "t_schedule": self.t_schedule,
            "newton_history": self.newton_history,
            "monitors": self.monitors,
        }


def poisson_dirichlet(f, grid):
    """Solve ``-(dbar d + d_yy) u = f`` with ``u = 0`` on both ``y`` ends."""
    i2, w2 = grid._stencils[2], grid._stencils[3]
    nyi = grid.ny - 2
    lower = np.zeros((nyi, 1, 1))
    diag = np.zeros((nyi, 1, 1))
    upper = np.zeros((nyi, 1, 1))
    for jj in range(nyi):
        j = jj + 1
        for idx, wt in zip(i2[j], w2[j]):
            if idx == j:
                diag[jj, 0, 0] -= wt
            elif idx == j - 1 and jj > 0:
                lower[jj, 0, 0] -= wt
            elif idx == j + 1 and jj < nyi - 1:
                upper[jj, 0, 0] -= wt
    pre = BlockPreconditioner(lower, diag, upper, grid, (grid.nx, grid.nz, nyi))
    u = np.zeros(grid.shape)
    u[:, :, 1:-1] = pre.solve(np.asarray(f, float)[:, :, 1:-1].ravel()).reshape(
        grid.nx, grid.nz, nyi)
    return u


def c0_bound(omega_hat, grid):
    """Comparison bound ``sup |s| <= 2 sup u`` with ``-(dbar d + d_yy) u = |Omega_K|``.

    At a root of ``N_t`` the norm identity gives
    ``-(dbar d + d_yy)|s|^2 <= 2 |Omega_K| |s|``, and the maximum principle
    compares ``|s|^2`` with ``2 sup|s| u``.
    """
    from .field import frobenius
    u = poisson_dirichlet(frobenius(omega_hat), grid)
    return 2.0 * float(u.max())


def continuity_solve(ctx, phi, background, grid, schedule=None, tol=1e-6, weight=None,
                     frame=None):
    """Follow ``N_t(s) = 0`` from a trivial root at ``t = t0 >= 1`` to ``t = 0``.

    With ``kappa_0 = w g Omega(H_b) g^-1`` (zero on the Dirichlet layers)
    and ``kappa = kappa_0 / t0``, the base frame is replaced by
    ``e^{kappa/2} g`` and ``s = -kappa`` is an exact root at ``t0``.
    Each stage runs damped Newton-Krylov.

    Parameters
    ----------
    background : BackgroundMetric
    schedule : ContinuitySchedule, optional
    tol : float
        Final weighted residual target at ``t = 0``.
    weight : ndarray, optional
        Residual weight per node, default ``y^2``.

    Returns
    -------
    SolverState

    Raises
    ------
    SolverError
        When the step size falls below ``schedule.min_step``.
    """
    sch = schedule or ContinuitySchedule()
    g0 = background.frame if frame is None else frame
    gauge = background.gauge
    H_b = hermitian_part(dagger(g0) @ g0)
    om_b = omega_field(H_b, phi, grid, gauge=gauge)
    w = FramedProblem(grid, phi, g0, t=1.0, weight=weight).weight
    kappa = w[..., None, None] * hermitian_part(g0 @ om_b @ np.linalg.inv(g0))
    kappa[:, :, 0] = 0.0
    kappa[:, :, -1] = 0.0
    k_sup = float(np.max(np.sqrt(np.sum(np.abs(kappa) ** 2, axis=(-2, -1)))))
    t0 = max(1.0, k_sup / sch.start_cap)
    kappa = kappa / t0
    lam, v = herm_eig(kappa)
    ehalf = (v * np.exp(0.5 * lam)[..., None, :]) @ dagger(v)
    g = ehalf @ g0
    prob = FramedProblem(grid, phi, g, t=t0, weight=weight, gauge=gauge)
    x = prob.to_vector(-kappa)
    start = prob.weighted_sup(prob.residual_field(x))
    if start > 1e-10 * max(1.0, k_sup):
        raise SolverError(f"trivial start is not a root: {start:.3e}")
    base_omega = hermitian_part(g @ omega_field(hermitian_part(dagger(g) @ g), phi, grid,
                                                gauge=gauge) @ np.linalg.inv(g))
    bound = c0_bound(base_omega, grid)
    history, schedule_log, c0_log, monotone, fd = [], [], [], [], []
    t = t0
    schedule_log.append({"t": t0, "weighted_residual": start, "newton_iterations": 0})
    step = t * (1.0 - sch.ratio)
    while t > 0:
        t_new = max(t - step, 0.0)
        if t_new < sch.t_floor:
            t_new = 0.0
        prob.t = t_new
        stage_tol = tol if t_new == 0.0 else max(tol, sch.stage_tol)
        xn, rep = newton_solve(prob, x, stage_tol, max_iter=sch.max_newton,
                               gmres_rtol=sch.gmres_rtol, max_halvings=sch.max_halvings,
                               check_every=sch.check_every,
                               fd_checks=fd)
        history.append({"t": t_new, "converged": rep.converged, "reason": rep.reason,
                        "iterations": rep.history})
        if not rep.converged:
            step *= 0.5
            log.info("t=%.3g failed (%s); halving step to %.3g", t_new, rep.reason, step)
            if step < sch.min_step:
                raise SolverError(f"continuation stalled at t={t:.6g}",
                                  history=history, residual=rep.history[-1]["weighted_sup"])
            prob.t = t
            prob.set_point(x)
            continue
        x, t = xn, t_new
        s = prob.to_field(x)
        om_now = prob._point["n_om"]
        s_sup = float(np.max(np.sqrt(np.sum(np.abs(s) ** 2, axis=(-2, -1)))))
        c0_log.append({"t": t, "sup_s": s_sup, "bound": bound})
        omega_w = prob.weighted_sup(om_now)
        monotone.append(omega_w)
        schedule_log.append({"t": t, "weighted_residual": rep.history[-1]["weighted_sup"],
                             "omega_weighted": omega_w,
                             "newton_iterations": rep.iterations})
        log.info("t=%.4g accepted after %d Newton steps", t, rep.iterations)
        step = t * (1.0 - sch.ratio) if t > 0 else step
    final = prob.weighted_sup(prob.residual_field(x))
    # correction relative to the background: e^{s_b} = e^{kappa/2} e^s e^{kappa/2}
    eks = ehalf @ prob._point["es"] @ ehalf
    lam_b, v_b = herm_eig(hermitian_part(eks))
    s = (v_b * np.log(lam_b)[..., None, :]) @ dagger(v_b)
    wn = weighted_norms(s, grid) if isinstance(grid, Grid3) else None
    monitors = {
        "c0": c0_log,
        "c0_ok": all(c["sup_s"] <= c["bound"] * (1 + 1e-9) for c in c0_log),
        "omega_weighted_along_path": monotone,
        "fd_slopes": fd,
        "alpha": None if wn is None else wn.alpha,
        "fit_window": None if wn is None else list(wn.fit_window),
        "sup_s": float(np.max(np.sqrt(np.sum(np.abs(s) ** 2, axis=(-2, -1))))),
        "start_residual": start,
        "t0": t0,
    }
    if final > tol:
        raise SolverError(f"final residual {final:.3e} above tolerance {tol:.1e}",
                          history=history, residual=final)
    return SolverState(0.0, s, g0, final, history, schedule_log, monitors, grid, phi,
                       prob.weight, gauge)


# --------------------------------------------------------------------------
# knots
# --------------------------------------------------------------------------

def knot_weight(grid, position):
    """Weight ``(R psi)^2`` with ``R, psi`` polar coordinates about the knot."""
    rho = periodic_modulus(grid.slice2d.complex_coords(), position)[:, :, None]
    y = grid.y[None, None, :]
    return (np.hypot(rho, y) * np.arctan2(y, rho)) ** 2


def knot_profile(ctx, weights):
    """Closed-form Toda profile when available, otherwise the numerical BVP."""
    try:
        return closed_form_profile(weights)
    except DomainError:
        return toda_bvp_solve(ctx, weights)


def knot_inner_model(ctx, weights, position, grid):
    """Regular part ``E_log^-1 H_mod E_log^-1`` of the knot model on the grid.

    The model is evaluated with the periodic distance to the knot in place
    of ``|z - p|``.
    """
    prof = knot_profile(ctx, weights)
    rho = periodic_modulus(grid.slice2d.complex_coords(), position)
    r = np.broadcast_to(rho[:, :, None], grid.shape)
    y = np.broadcast_to(grid.y, grid.shape)
    Hm = knot_model_metric(ctx, prof, KnotChart.from_ry(r, y))
    e0 = np.diag(ctx.sl2_zero).astype(float)
    ey = np.exp(0.5 * np.log(y)[..., None] * e0)
    return ey[..., :, None] * Hm * ey[..., None, :]


def knot_solve(ctx, weights, position, q_coeffs, grid, schedule=None, tol=1e-4, y_c=0.5,
               hitchin_tol=1e-10):
    """Solve with one knot of the given weights at ``position``.

    Higgs field from :func:`periodic_knot_higgs`; far field from the 2D
    Hitchin solve; inner model from the knot metric; residual measured with
    :func:`knot_weight`.

    Returns
    -------
    state : SolverState
    phi : HiggsData
    background : BackgroundMetric
    """
    phi = periodic_knot_higgs(ctx, weights, position, q_coeffs)
    far = hitchin2d_solve(ctx, phi, grid.slice2d, tol=hitchin_tol)
    inner = knot_inner_model(ctx, weights, position, grid)
    bg = build_background(ctx, phi, far.H, grid, k=0, y_c=y_c, inner=inner)
    state = continuity_solve(ctx, phi, bg, grid, schedule, tol=tol,
                             weight=knot_weight(grid, position))
    state.monitors["hitchin_residual"] = far.residual
    return state, phi, bg


def metric_distance(H1, H2, mask=None):
    """Sup over nodes of ``|log(H1^-1 H2)|`` (Frobenius)."""
    from .field import herm_sqrt
    g = herm_sqrt(H1)
    gi = np.linalg.inv(g)
    mid = hermitian_part(gi @ H2 @ gi)
    lam, _ = herm_eig(mid)
    d = np.sqrt(np.sum(np.log(lam) ** 2, axis=-1))
    if mask is not None:
        d = d[mask]
    return float(d.max())
