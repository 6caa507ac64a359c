"""Singular model metrics: the Nahm pole and the knot models built on Toda.

The knot models reduce to the repulsive Toda system

    q_i'' = sum_j A_ij exp(q_j),      q_i = sum_j A_ij chi_j,

in the variable ``sigma = asinh(y / r)``.  Closed forms exist for SL(2) and
SL(3); other ranks go through :func:`toda_bvp_solve`.
"""

from dataclasses import dataclass, field
from typing import Callable

import mpmath as mp
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .errors import DomainError, SolverError


# --------------------------------------------------------------------------
# charts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KnotChart:
    """Polar coordinates around a knot on the boundary ``y = 0``.

    ``r = |z|``, ``R = sqrt(r^2 + y^2)``, ``y = R sin(psi)``, ``r = R cos(psi)``
    and ``sinh(sigma) = y / r``.  Arrays broadcast.
    """

    r: np.ndarray
    y: np.ndarray
    theta: np.ndarray = 0.0

    @classmethod
    def from_ry(cls, r, y, theta=0.0):
        return cls(np.asarray(r, dtype=float), np.asarray(y, dtype=float),
                   np.asarray(theta, dtype=float))

    @classmethod
    def from_polar(cls, R, psi, theta=0.0):
        R = np.asarray(R, dtype=float)
        psi = np.asarray(psi, dtype=float)
        return cls(R * np.cos(psi), R * np.sin(psi), np.asarray(theta, dtype=float))

    @property
    def R(self):
        return np.hypot(self.r, self.y)

    @property
    def psi(self):
        return np.arctan2(self.y, self.r)

    @property
    def sigma(self):
        with np.errstate(divide="ignore"):
            return np.arcsinh(self.y / self.r)


# --------------------------------------------------------------------------
# Nahm pole model
# --------------------------------------------------------------------------

def nahm_exponents(ctx):
    """Diagonal of the grading element, ``(n, n-2, ..., -n)``."""
    return np.diag(ctx.sl2_zero).astype(float)


def nahm_model_metric(ctx, y):
    """``exp(-log(y) e0) = diag(y^-n, y^(2-n), ..., y^n)``.

    Parameters
    ----------
    ctx : LieContext
    y : float or ndarray
        Positive heights; arrays give a trailing ``(n+1, n+1)`` block.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("Nahm model metric needs y > 0")
    d = np.exp(-np.log(y)[..., None] * nahm_exponents(ctx))
    return d[..., :, None] * np.eye(ctx.dim)


# --------------------------------------------------------------------------
# Toda profiles
# --------------------------------------------------------------------------

@dataclass
class TodaProfile:
    """Solution of the Toda system as functions of ``sigma``.

    Attributes
    ----------
    n : int
    weights : tuple of int
        Knot weights ``r_i >= 0``.
    chi : callable
        ``sigma -> array (..., n)``.
    source : str
        ``"closed-form"`` or ``"numeric-BVP"``.
    chi_mp : callable, optional
        Extended-precision evaluator ``sigma -> list of mpf`` for closed forms.
    sigma_grid, residual : ndarray, optional
        Collocation grid and final discrete residual for numeric profiles.
    """

    n: int
    weights: tuple
    chi: Callable
    source: str
    cartan: np.ndarray = field(repr=False, default=None)
    chi_mp: Callable = field(repr=False, default=None)
    sigma_grid: np.ndarray = field(repr=False, default=None)
    residual: float = None
    newton_history: list = field(repr=False, default_factory=list)

    def __post_init__(self):
        if self.cartan is None:
            from .liealg import cartan_matrix
            self.cartan = cartan_matrix(self.n).astype(float)

    def q(self, sigma):
        """``q_i = sum_j A_ij chi_j``."""
        return self.chi(sigma) @ np.asarray(self.cartan, dtype=float).T

    def q_mp(self, sigma):
        chi = self.chi_mp(sigma)
        a = self.cartan
        return [sum(int(a[i, j]) * chi[j] for j in range(self.n)) for i in range(self.n)]

    @property
    def limit_slopes(self):
        """``lim q_i'(sigma) = -2 (r_i + 1)`` as ``sigma -> infinity``."""
        return -2.0 * (np.asarray(self.weights, dtype=float) + 1.0)


def _log_sinh(x):
    """``log(sinh x)`` for ``x > 0`` without overflow."""
    x = np.asarray(x, dtype=float)
    return x + np.log(-np.expm1(-2.0 * x)) - np.log(2.0)


def sl2_knot_profile(r):
    """Closed-form SL(2) profile ``chi = -log(sinh(m sigma) / m)``, ``m = r + 1``."""
    if isinstance(r, bool) or int(r) != r or r < 0:
        raise DomainError("knot weight must be a nonnegative integer")
    m = int(r) + 1

    def chi(sigma):
        sigma = np.asarray(sigma, dtype=float)
        return (np.log(m) - _log_sinh(m * sigma))[..., None]

    def chi_mp(sigma):
        s = mp.mpf(sigma)
        return [-mp.log(mp.sinh(m * s) / m)]

    return TodaProfile(n=1, weights=(int(r),), chi=chi, source="closed-form",
                       chi_mp=chi_mp)


def _sl3_neg_chi(sigma, a, b):
    """``-chi_1`` of the SL(3) closed form with ``m1 = a, m2 = b``.

    The dominant exponential is factored out; the remaining bracket is
    ``1/(a(a+b)) - exp(-2 a s)/(a b) + exp(-2(a+b) s)/(b(a+b))`` which
    vanishes to second order at ``s = 0`` and is rewritten with ``expm1``
    there to avoid cancellation.
    """
    s = np.asarray(sigma, dtype=float)
    e1 = np.expm1(-2.0 * a * s)
    e2 = np.expm1(-2.0 * (a + b) * s)
    bracket = (-e1 / (a * b) + e2 / (b * (a + b)))
    lead = (4.0 * a + 2.0 * b) / 3.0 * s
    return lead + np.log(0.25 * bracket)


def sl3_knot_profile(m1, m2):
    """Closed-form SL(3) profile with ``m_i = r_i + 1``.

    ``exp(-chi_1) = (1/4) (e^{(4m1+2m2)s/3} / (m1 (m1+m2))
    - e^{(2m2-2m1)s/3} / (m1 m2) + e^{-(2m1+4m2)s/3} / (m2 (m1+m2)))``
    and ``chi_2`` is the same with ``m1, m2`` swapped.
    """
    for v in (m1, m2):
        if isinstance(v, bool) or int(v) != v or v < 1:
            raise DomainError("SL(3) parameters must be positive integers")
    a, b = float(m1), float(m2)

    def chi(sigma):
        return -np.stack([_sl3_neg_chi(sigma, a, b), _sl3_neg_chi(sigma, b, a)], axis=-1)

    def one(s, u, v):
        return -mp.log((mp.exp((4 * u + 2 * v) * s / 3) / (u * (u + v))
                        - mp.exp((2 * v - 2 * u) * s / 3) / (u * v)
                        + mp.exp(-(2 * u + 4 * v) * s / 3) / (v * (u + v))) / 4)

    def chi_mp(sigma):
        s = mp.mpf(sigma)
        u, v = mp.mpf(int(m1)), mp.mpf(int(m2))
        return [one(s, u, v), one(s, v, u)]

    return TodaProfile(n=2, weights=(int(m1) - 1, int(m2) - 1), chi=chi,
                       source="closed-form", chi_mp=chi_mp)


def closed_form_profile(weights):
    """Closed-form profile for ranks 1 and 2."""
    weights = tuple(int(w) for w in weights)
    if len(weights) == 1:
        return sl2_knot_profile(weights[0])
    if len(weights) == 2:
        return sl3_knot_profile(weights[0] + 1, weights[1] + 1)
    raise DomainError("closed forms exist only for ranks 1 and 2")


_CENTRAL = {}


def _central_weights(order):
    """Central second-derivative weights of the given even order."""
    if order not in _CENTRAL:
        p = order // 2
        offs = list(range(-p, p + 1))
        # moment conditions solved in extended precision
        with mp.workdps(60):
            mat = mp.matrix([[mp.mpf(o) ** k for o in offs] for k in range(len(offs))])
            rhs = mp.matrix([2 if k == 2 else 0 for k in range(len(offs))])
            _CENTRAL[order] = (offs, list(mp.lu_solve(mat, rhs)))
    return _CENTRAL[order]


def toda_residual(profile, sigma, step=1e-3, order=10, dps=50):
    """Finite-difference residual ``q'' - A exp(q)`` of a Toda profile.

    Closed-form profiles are evaluated in ``dps``-digit arithmetic with a
    central stencil of the given order, so truncation error at ``step=1e-3``
    sits far below ``1e-8``.  Numeric profiles use a three-point stencil on
    their own spline.

    Returns
    -------
    ndarray, shape (len(sigma), n)
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    a = np.asarray(profile.cartan, dtype=float)
    if profile.chi_mp is None:
        q0 = profile.q(sigma)
        qp = profile.q(sigma + step)
        qm = profile.q(sigma - step)
        return (qp - 2 * q0 + qm) / step ** 2 - np.exp(q0) @ a.T
    offs, w = _central_weights(order)
    with mp.workdps(dps):
        h = mp.mpf(step)
        out = np.empty((sigma.size, profile.n))
        for k, s in enumerate(sigma):
            s = mp.mpf(float(s))
            vals = [profile.q_mp(s + o * h) for o in offs]
            for i in range(profile.n):
                d2 = sum(wk * v[i] for wk, v in zip(w, vals)) / h ** 2
                rhs = sum(int(profile.cartan[i, j]) * mp.exp(vals[len(offs) // 2][j])
                          for j in range(profile.n))
                out[k, i] = float(d2 - rhs)
    return out


def collocation_residual(profile):
    """Scaled residual ``sigma^2 (q'' - A exp(q))`` of a numeric profile.

    Evaluated at the interior collocation nodes with the nonuniform
    three-point stencil used by :func:`toda_bvp_solve`.

    Returns
    -------
    sigma : ndarray
    residual : ndarray, shape (len(sigma), n)
    """
    s = profile.sigma_grid
    if s is None:
        raise DomainError("profile has no collocation grid")
    q = profile.q(s)
    hm = (s[1:-1] - s[:-2])[:, None]
    hp = (s[2:] - s[1:-1])[:, None]
    d2 = 2.0 * (hp * q[:-2] - (hm + hp) * q[1:-1] + hm * q[2:]) / (hm * hp * (hm + hp))
    a = np.asarray(profile.cartan, dtype=float)
    return s[1:-1], (d2 - np.exp(q[1:-1]) @ a.T) * s[1:-1, None] ** 2


def boundary_asymptote_error(profile, weights_b, sigma=1e-3):
    """``q_j(sigma) + 2 log(sigma) - log(B_j)`` at small ``sigma``."""
    return profile.q(np.array([sigma]))[0] + 2 * np.log(sigma) - np.log(np.asarray(weights_b, float))


def log_sigma_grid(sigma_min=1e-3, sigma_max=12.0, num=2001):
    """Log-spaced collocation grid."""
    return np.geomspace(sigma_min, sigma_max, num)


def toda_bvp_solve(ctx, weights, sigma_grid=None, tol=1e-8, max_iter=60):
    """Solve the Toda system by Newton iteration on central collocation.

    Boundary data: ``q_j = -2 log(sigma) + log(B_j)`` at the first node and
    ``q_j' = -2 (r_j + 1)`` at the last node (the linear decay shown by the
    closed forms).  The initial guess is ``q_i = 2 chi_sl2(sigma; r_i)``.

    Parameters
    ----------
    ctx : LieContext
    weights : sequence of int
        Knot weights ``r_i >= 0``, one per simple root.
    sigma_grid : ndarray, optional
        Increasing nodes with ``sigma_grid[0] >= 1e-3``; defaults to
        :func:`log_sigma_grid`.
    tol : float
        Stopping tolerance on the scaled residual ``sigma^2 |F|``.

    Returns
    -------
    TodaProfile

    Raises
    ------
    SolverError
        If Newton fails to converge; the residual history is attached.
    """
    n = ctx.n
    weights = tuple(int(w) for w in weights)
    if len(weights) != n or min(weights) < 0:
        raise DomainError(f"need {n} nonnegative weights")
    s = log_sigma_grid() if sigma_grid is None else np.asarray(sigma_grid, dtype=float)
    if s[0] < 1e-3 - 1e-15 or np.any(np.diff(s) <= 0) or s.size < 5:
        raise DomainError("sigma grid must be increasing with sigma_min >= 1e-3")
    N = s.size
    a = ctx.cartan.astype(float)
    b = np.asarray(ctx.weights, dtype=float)
    slopes = -2.0 * (np.asarray(weights, dtype=float) + 1.0)

    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    wl = 2.0 / (hm * (hm + hp))
    wc = -2.0 / (hm * hp)
    wr = 2.0 / (hp * (hm + hp))
    h1, h2 = s[-1] - s[-2], s[-2] - s[-3]
    # one-sided second-order first derivative at the last node
    bl = np.array([h1 / (h2 * (h1 + h2)), -(h1 + h2) / (h1 * h2),
                   (2 * h1 + h2) / (h1 * (h1 + h2))])
    scale = s[1:-1] ** 2

    q = np.stack([2.0 * sl2_knot_profile(w).chi(s)[:, 0] for w in weights], axis=1)

    def residual(q):
        f = np.empty_like(q)
        f[0] = q[0] + 2 * np.log(s[0]) - np.log(b)
        f[1:-1] = (wl[:, None] * q[:-2] + wc[:, None] * q[1:-1] + wr[:, None] * q[2:]
                   - np.exp(q[1:-1]) @ a.T)
        f[-1] = bl @ q[-3:] - slopes
        return f

    def scaled(f):
        g = f.copy()
        g[1:-1] *= scale[:, None]
        return np.max(np.abs(g))

    def jacobian(q):
        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(np.ravel(r))
            cols.append(np.ravel(c))
            vals.append(np.ravel(v))

        idx = np.arange(N * n).reshape(N, n)
        put(idx[0], idx[0], np.ones(n))
        k = np.arange(1, N - 1)
        for i in range(n):
            put(idx[k, i], idx[k - 1, i], wl)
            put(idx[k, i], idx[k + 1, i], wr)
            for j in range(n):
                v = -a[i, j] * np.exp(q[k, j])
                if i == j:
                    v = v + wc
                put(idx[k, i], idx[k, j], v)
            put(np.full(3, idx[-1, i]), idx[-3:, i], bl)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(N * n, N * n))

    f = residual(q)
    hist = [scaled(f)]
    for _ in range(max_iter):
        if hist[-1] < tol:
            break
        dq = spla.spsolve(jacobian(q).tocsc(), -f.ravel()).reshape(N, n)
        lam = 1.0
        while True:
            q_new = q + lam * dq
            f_new = residual(q_new)
            if np.all(np.isfinite(f_new)) and scaled(f_new) < (1 - 1e-4 * lam) * hist[-1]:
                break
            lam *= 0.5
            if lam < 1e-8:
                raise SolverError("Toda Newton line search failed", hist, hist[-1])
        q, f = q_new, f_new
        hist.append(scaled(f))
    if hist[-1] >= tol:
        raise SolverError("Toda Newton did not converge", hist, hist[-1])

    a_inv = ctx.cartan_inv_float
    chi_nodes = q @ a_inv.T
    spline = CubicSpline(np.log(s), chi_nodes, axis=0)
    chi_lo = -np.log(s[0]) * b  # chi_i ~ -B_i log(sigma) + const near zero
    c_lo = chi_nodes[0] - chi_lo
    chi_slopes = slopes @ a_inv.T

    def chi(sigma):
        sig = np.asarray(sigma, dtype=float)
        t = np.log(np.clip(sig, s[0], s[-1]))
        out = spline(t)
        lo = sig < s[0]
        hi = sig > s[-1]
        if np.any(lo):
            out[lo] = -np.log(sig[lo])[:, None] * b + c_lo
        if np.any(hi):
            out[hi] = chi_nodes[-1] + (sig[hi] - s[-1])[:, None] * chi_slopes
        return out

    return TodaProfile(n=n, weights=weights, chi=chi, source="numeric-BVP",
                       cartan=a, sigma_grid=s, residual=hist[-1], newton_history=hist)


# --------------------------------------------------------------------------
# knot model metric
# --------------------------------------------------------------------------

def knot_model_log(ctx, profile, chart):
    """Diagonal of ``log H_mod`` at the chart points, shape ``(..., n+1)``.

    ``log H_mod = sum_i (chi_i - 2 sum_j (A^-1)_ij (r_j + 1) log r) H_i``.
    """
    r = np.asarray(chart.r, dtype=float)
    y = np.asarray(chart.y, dtype=float)
    if np.any(r <= 0) or np.any(y <= 0):
        raise DomainError("knot model is singular on r = 0 and undefined for y <= 0")
    r, y = np.broadcast_arrays(r, y)
    sigma = np.arcsinh(y / r)
    chi = profile.chi(sigma.ravel()).reshape(sigma.shape + (ctx.n,))
    shift = 2.0 * ctx.cartan_inv_float @ (np.asarray(profile.weights, float) + 1.0)
    c = chi - np.log(r)[..., None] * shift
    pad = np.zeros(c.shape[:-1] + (1,))
    return np.concatenate([c, pad], axis=-1) - np.concatenate([pad, c], axis=-1)


def knot_model_metric(ctx, profile, chart):
    """Diagonal positive unimodular model metric around a knot.

    Returns
    -------
    ndarray, shape (..., n+1, n+1)
    """
    d = np.exp(knot_model_log(ctx, profile, chart))
    return d[..., :, None] * np.eye(ctx.dim)


def lambda_ratios(ctx, profile, chart):
    """Consecutive ratios ``lambda_{k+1} / lambda_k`` of ``H_mod``'s diagonal."""
    logd = knot_model_log(ctx, profile, chart)
    return np.exp(np.diff(logd, axis=-1))


def lambda_ratio_bound(ctx, profile, samples):
    """Supremum of ``|lambda_{k+1} / lambda_k|`` over chart samples."""
    return float(np.max(lambda_ratios(ctx, profile, samples)))


def lambda_ratio_limits(ctx, profile, R=None, psi=None, k_max=14):
    """Ratio sequences along ``R = 2^-k`` (fixed ``psi``) or ``psi = 2^-k``.

    Exactly one of ``R`` and ``psi`` is held fixed.

    Returns
    -------
    params, ratios : ndarray
        ``ratios[k]`` is the largest consecutive ratio at the k-th point.
    """
    k = np.arange(k_max + 1)
    vary = 2.0 ** (-k)
    if (R is None) == (psi is None):
        raise DomainError("fix exactly one of R and psi")
    chart = KnotChart.from_polar(vary, psi) if R is None else KnotChart.from_polar(R, vary)
    return vary, lambda_ratios(ctx, profile, chart).max(axis=-1)
