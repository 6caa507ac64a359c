"""Holomorphic data: Higgs fields, the Hitchin fibration and knot divisors.

Divisors are read off truncated power series in ``z`` at a marked point.
Vectors act on Higgs fields from the left as rows, ``v -> v phi``, which is
the convention under which the Hitchin section and the canonical knot form
are lower Hessenberg with the chain running down the superdiagonal.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, InconclusiveError

DEFAULT_TRUNCATION = 16
ZERO_TOL = 1e-8


# --------------------------------------------------------------------------
# coefficient functions on the periodic chart
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigPoly:
    """``sum_k c_k exp(2 pi i (a_k x2 + b_k x3))`` on the unit torus.

    Parameters
    ----------
    terms : tuple of (int, int, complex)
        Frequencies ``(a, b)`` and coefficient ``c``.
    """

    terms: tuple

    @classmethod
    def constant(cls, c):
        return cls(((0, 0, complex(c)),))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        for a, b, c in self.terms:
            out += c * np.exp(2j * np.pi * (a * z.real + b * z.imag))
        return out

    def dbar(self, z):
        """Exact ``d/dzbar`` of the polynomial."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        for a, b, c in self.terms:
            out += c * 1j * np.pi * (a + 1j * b) * np.exp(2j * np.pi * (a * z.real + b * z.imag))
        return out

    @property
    def is_holomorphic(self):
        return all(abs(c) == 0 or (a == 0 and b == 0) for a, b, c in self.terms)

    def to_list(self):
        return [[a, b, complex(c).real, complex(c).imag] for a, b, c in self.terms]


def periodic_modulus(z, position=0.0):
    """Smooth periodic stand-in for ``|z - p|``.

    ``sqrt(sin^2(pi dx2) + sin^2(pi dx3)) / pi`` equals ``|z - p|`` to third
    order near ``p`` and is positive elsewhere on the torus.
    """
    d = np.asarray(z, dtype=complex) - position
    return np.sqrt(np.sin(np.pi * d.real) ** 2 + np.sin(np.pi * d.imag) ** 2) / np.pi


# --------------------------------------------------------------------------
# Higgs data
# --------------------------------------------------------------------------

@dataclass
class HiggsData:
    """Holomorphic Higgs field on the chart.

    Attributes
    ----------
    n : int
    kind : str
        ``"hitchin-section"``, ``"knot-local"``, ``"knot-periodic"`` or
        ``"explicit"``.
    matrix_eval : callable
        ``z -> (..., n+1, n+1)`` complex array.
    q_coeffs : tuple
        ``q_2 .. q_{n+1}`` for Hitchin-type fields.
    knot_weights : tuple of tuple of int
    positions : tuple of complex
    """

    n: int
    kind: str
    matrix_eval: Callable = field(repr=False)
    q_coeffs: tuple = ()
    knot_weights: tuple = ()
    positions: tuple = ()

    @property
    def dim(self):
        return self.n + 1

    def __call__(self, z):
        return self.matrix_eval(z)

    def conjugated(self, u):
        """Higgs field ``u phi u^-1`` for a constant invertible ``u``."""
        u = np.asarray(u, dtype=complex)
        u_inv = np.linalg.inv(u)
        base = self.matrix_eval
        return HiggsData(self.n, "explicit", lambda z: u @ base(z) @ u_inv,
                         self.q_coeffs, self.knot_weights, self.positions)

    def is_constant(self):
        return all(isinstance(q, TrigPoly) and all(a == 0 and b == 0 for a, b, _ in q.terms)
                   for q in self.q_coeffs) and self.kind == "hitchin-section"


def _as_coeff(q):
    if isinstance(q, TrigPoly) or callable(q):
        return q
    return TrigPoly.constant(q)


def hitchin_section_higgs(ctx, q_coeffs):
    """Hitchin-section Higgs field.

    ``sqrt(B_i)`` on the superdiagonal and bottom row
    ``(q_{n+1}, q_n, ..., q_2, 0)``.

    Parameters
    ----------
    ctx : LieContext
    q_coeffs : sequence
        ``q_2, ..., q_{n+1}``: constants, :class:`TrigPoly` or callables of z.
    """
    q_coeffs = tuple(_as_coeff(q) for q in q_coeffs)
    if len(q_coeffs) != ctx.n:
        raise DomainError(f"need {ctx.n} coefficients q_2..q_{ctx.n + 1}, got {len(q_coeffs)}")
    m = ctx.dim
    base = np.array(ctx.sl2_plus, dtype=complex)

    def matrix_eval(z):
        z = np.asarray(z, dtype=complex)
        out = np.broadcast_to(base, z.shape + (m, m)).copy()
        for k, q in enumerate(q_coeffs):
            # q_{k+2} sits in column n - 1 - k of the bottom row
            out[..., m - 1, m - 2 - k] = q(z)
        return out

    return HiggsData(ctx.n, "hitchin-section", matrix_eval, q_coeffs)


def knot_local_higgs(ctx, weights, lower=None):
    """Knot model field with ``z^{r_i}`` on the superdiagonal.

    ``lower`` optionally adds a constant lower-triangular part.
    """
    weights = tuple(int(w) for w in weights)
    if len(weights) != ctx.n or min(weights) < 0:
        raise DomainError(f"need {ctx.n} nonnegative weights")
    m = ctx.dim
    low = np.zeros((m, m), dtype=complex) if lower is None else np.tril(np.asarray(lower, complex))

    def matrix_eval(z):
        z = np.asarray(z, dtype=complex)
        out = np.broadcast_to(low, z.shape + (m, m)).copy()
        for i, r in enumerate(weights):
            out[..., i, i + 1] = z ** r
        return out

    return HiggsData(ctx.n, "knot-local", matrix_eval, (), (weights,), (0j,))


def periodic_knot_higgs(ctx, weights, position, q_coeffs):
    """Knot field on the periodic chart.

    The superdiagonal carries ``sqrt(B_i) rho^{r_i}`` with
    ``rho = periodic_modulus(z, position)`` and the bottom row carries the
    Hitchin coefficients.  A periodic holomorphic function cannot have a
    single zero, so the phase ``(z - p)^r / |z - p|^r`` is dropped: for
    diagonal metrics the moment map only sees ``|phi_{i,i+1}|``, and near
    the knot this is the modulus of the local model.
    """
    weights = tuple(int(w) for w in weights)
    if len(weights) != ctx.n or min(weights) < 0:
        raise DomainError(f"need {ctx.n} nonnegative weights")
    hs = hitchin_section_higgs(ctx, q_coeffs)
    sqrt_b = np.sqrt(np.array(ctx.weights, dtype=float))
    position = complex(position)

    def matrix_eval(z):
        out = hs.matrix_eval(z)
        rho = periodic_modulus(z, position)
        for i, r in enumerate(weights):
            out[..., i, i + 1] = sqrt_b[i] * rho ** r
        return out

    return HiggsData(ctx.n, "knot-periodic", matrix_eval, hs.q_coeffs,
                     (weights,), (position,))


def hitchin_fibration(ctx, phi, tol=1e-10):
    """Characteristic-polynomial invariants ``(p_2, ..., p_{n+1})``.

    Convention ``det(lambda - phi) = sum_j lambda^{n+1-j} (-1)^j p_j``, so
    ``p_j`` is the j-th elementary symmetric function of the eigenvalues.
    Computed from power sums by Newton's identities (exact on integer input).

    Raises
    ------
    DomainError
        If ``|Tr phi| > tol * ||phi||``.
    """
    phi = np.asarray(phi, dtype=complex)
    m = ctx.dim
    if phi.shape[-2:] != (m, m):
        raise DomainError("shape mismatch")
    norm = np.linalg.norm(phi, axis=(-2, -1))
    tr = np.trace(phi, axis1=-2, axis2=-1)
    if np.any(np.abs(tr) > tol * np.maximum(norm, 1.0)):
        raise DomainError("Higgs field is not traceless")
    power = np.broadcast_to(np.eye(m, dtype=complex), phi.shape).copy()
    sums = []
    for _ in range(m):
        power = power @ phi
        sums.append(np.trace(power, axis1=-2, axis2=-1))
    e = [np.ones(phi.shape[:-2], dtype=complex)]
    for k in range(1, m + 1):
        acc = sum((-1) ** (i - 1) * e[k - i] * sums[i - 1] for i in range(1, k + 1))
        e.append(acc / k)
    return np.stack(e[2:], axis=-1)


# --------------------------------------------------------------------------
# truncated power series
# --------------------------------------------------------------------------

def _series_mul(a, b, order):
    """Cauchy product of coefficient stacks along axis 0 (matrix-valued)."""
    out = np.zeros((order,) + np.broadcast_shapes(a.shape[1:-1] + (1,), b.shape[1:])[:-1]
                   + (b.shape[-1],), dtype=complex)
    for j in range(min(order, a.shape[0])):
        kmax = min(order - j, b.shape[0])
        if kmax <= 0:
            break
        out[j:j + kmax] += a[j] @ b[:kmax]
    return out


def _scalar_series_inv(a, order):
    """Inverse of a scalar series with nonzero constant term."""
    out = np.zeros(order, dtype=complex)
    out[0] = 1.0 / a[0]
    for k in range(1, order):
        kk = min(k, a.size - 1)
        out[k] = -out[0] * np.dot(a[1:kk + 1], out[k - 1::-1][:kk])
    return out


def _valuation(a, tol):
    """Index of the first coefficient above ``tol`` (axis 0), or ``None``."""
    mag = np.abs(a).reshape(a.shape[0], -1).max(axis=1)
    nz = np.nonzero(mag > tol)[0]
    return int(nz[0]) if nz.size else None


@dataclass
class PolyMatrix:
    """Matrix of power series in ``z`` known modulo ``z^order``.

    Attributes
    ----------
    coeffs : ndarray, shape (order, m, m), complex
        ``coeffs[k]`` is the matrix coefficient of ``z^k``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1] != self.coeffs.shape[2]:
            raise DomainError("PolyMatrix coefficients must have shape (order, m, m)")

    @property
    def order(self):
        return self.coeffs.shape[0]

    @property
    def dim(self):
        return self.coeffs.shape[1]

    @classmethod
    def identity(cls, m, order=DEFAULT_TRUNCATION):
        c = np.zeros((order, m, m), dtype=complex)
        c[0] = np.eye(m)
        return cls(c)

    @classmethod
    def from_entries(cls, entries, order=DEFAULT_TRUNCATION):
        """Build from nested lists of polynomial coefficient lists."""
        m = len(entries)
        c = np.zeros((order, m, m), dtype=complex)
        for i, row in enumerate(entries):
            for j, poly in enumerate(row):
                poly = np.atleast_1d(np.asarray(poly, dtype=complex))
                k = min(order, poly.size)
                c[:k, i, j] = poly[:k]
        return cls(c)

    @classmethod
    def knot_local(cls, weights, lower=None, order=DEFAULT_TRUNCATION):
        m = len(weights) + 1
        c = np.zeros((order, m, m), dtype=complex)
        if lower is not None:
            low = np.asarray(lower, dtype=complex)
            low = low[None] if low.ndim == 2 else low
            k = min(order, low.shape[0])
            c[:k] += np.tril(low[:k])
        for i, r in enumerate(weights):
            if r < order:
                c[r, i, i + 1] += 1.0
        return cls(c)

    def truncate(self, order):
        return PolyMatrix(self.coeffs[:order].copy())

    def __matmul__(self, other):
        order = min(self.order, other.order)
        return PolyMatrix(_series_mul(self.coeffs, other.coeffs, order))

    def __add__(self, other):
        order = min(self.order, other.order)
        return PolyMatrix(self.coeffs[:order] + other.coeffs[:order])

    def __sub__(self, other):
        order = min(self.order, other.order)
        return PolyMatrix(self.coeffs[:order] - other.coeffs[:order])

    def inverse(self):
        """Series inverse; requires an invertible constant term."""
        a0_inv = np.linalg.inv(self.coeffs[0])
        out = np.zeros_like(self.coeffs)
        out[0] = a0_inv
        for k in range(1, self.order):
            acc = sum(self.coeffs[j] @ out[k - j] for j in range(1, k + 1))
            out[k] = -a0_inv @ acc
        return PolyMatrix(out)

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        powers = z[..., None] ** np.arange(self.order)
        return np.einsum("...k,kij->...ij", powers, self.coeffs)

    def row_apply(self, v):
        """Row-series product ``v phi``; ``v`` has shape (order, m)."""
        order = min(self.order, v.shape[0])
        return _series_mul(v[:, None, :], self.coeffs, order)[:, 0, :]

    def conjugate_by(self, g):
        """``g phi g^-1``."""
        return g @ self @ g.inverse()


def random_unimodular(m, rng, order=DEFAULT_TRUNCATION, degree=2, fix_line=False,
                      max_coeff=2):
    """Random polynomial matrix with constant determinant 1.

    Built as a product of elementary matrices with small integer
    polynomial entries and a unimodular constant diagonal.  With
    ``fix_line`` the first row stays ``(1, 0, ..., 0)`` so the line
    ``span(e_1)`` is preserved under row action.
    """
    g = PolyMatrix.identity(m, order)
    for _ in range(3 * m):
        i, j = rng.choice(m, size=2, replace=False)
        if fix_line and i == 0:
            continue
        e = np.zeros((order, m, m), dtype=complex)
        e[0] = np.eye(m)
        poly = rng.integers(-max_coeff, max_coeff + 1, size=degree + 1)
        e[:degree + 1, i, j] = poly
        g = PolyMatrix(e) @ g
    # constant unit diagonal with product one
    d = rng.choice([1.0, -1.0, 2.0, 0.5], size=m).astype(complex)
    if fix_line:
        d[0] = 1.0
    d[-1] = 1.0 / np.prod(d[:-1])
    scale = np.zeros((order, m, m), dtype=complex)
    scale[0] = np.diag(d)
    return PolyMatrix(scale) @ g


# --------------------------------------------------------------------------
# divisors
# --------------------------------------------------------------------------

def _minor_order(mat, tol):
    """Minimal vanishing order of the maximal minors of a series matrix.

    ``mat`` has shape ``(order, p, q)`` with ``p <= q``.  Uses elimination
    over the discrete valuation ring of power series: the answer is the sum
    of the ``p`` invariant-factor exponents.
    """
    a = mat.copy()
    prec = a.shape[0]
    total = 0
    while a.shape[1] > 0:
        p, q = a.shape[1], a.shape[2]
        best = None
        for i in range(p):
            for j in range(q):
                v = _valuation(a[:prec, i, j], tol)
                if v is not None and (best is None or v < best[0]):
                    best = (v, i, j)
        if best is None:
            raise InconclusiveError("all minors vanish to truncation order")
        v, i, j = best
        total += v
        piv_inv = _scalar_series_inv(a[v:prec, i, j], prec - v)
        for r in range(p):
            if r == i:
                continue
            # multiplier = a[r, j] / pivot, a series because ord >= v
            mult = _series_mul(a[v:prec, r, j][:, None, None], piv_inv[:, None, None],
                               prec - v)[:, 0, 0]
            a[:prec - v, r, :] -= _series_mul(mult[:, None, None], a[:prec - v, i, :][:, None, :],
                                              prec - v)[:, 0, :]
        prec -= v
        keep_r = [r for r in range(p) if r != i]
        keep_c = [c for c in range(q) if c != j]
        a = a[:prec][:, keep_r][:, :, keep_c]
        if prec <= 0 and a.shape[1] > 0:
            raise InconclusiveError("truncation exhausted during elimination")
    return total


@dataclass
class Divisor:
    """Wedge vanishing orders and the knot weights they encode.

    ``z_orders[i-1] = Z(f_i)`` for ``i = 1..n``; ``weights[k]`` is the
    exponent attached to the ``(k+1, k+2)`` superdiagonal slot of the
    canonical form.
    """

    z_orders: tuple
    weights: tuple
    effective: bool

    @property
    def is_empty(self):
        return all(z == 0 for z in self.z_orders)


def _chain(phi, v, count):
    rows = [v]
    for _ in range(count):
        rows.append(phi.row_apply(rows[-1]))
    return rows


def divisor_orders(phi, v=None, tol=ZERO_TOL, line_index=0, action="row"):
    """Vanishing orders of ``v ^ v phi ^ ... ^ v phi^i`` at ``z = 0``.

    ``Z(f_i)`` is the least vanishing order among the ``(i+1) x (i+1)``
    minors of the row stack ``[v; v phi; ...; v phi^i]``.  Consecutive
    differences ``Z(f_i) - Z(f_{i-1})`` accumulate the exponents met along
    the chain, so each weight is a second difference.

    Parameters
    ----------
    phi : PolyMatrix
    v : ndarray, shape (order, m), optional
        Row series spanning the initial line; defaults to ``e_{line_index}``.
    tol : float
        Relative threshold below which coefficients count as zero.
    line_index : int
        Basis vector used when ``v`` is omitted.
    action : {"row", "column"}
        ``"column"`` runs the chain ``v, phi v, ...`` instead, which is the
        row chain of the transpose.

    Returns
    -------
    Divisor

    Raises
    ------
    InconclusiveError
        If a wedge vanishes to the truncation order.
    """
    if action == "column":
        phi = PolyMatrix(np.swapaxes(phi.coeffs, 1, 2))
    elif action != "row":
        raise DomainError(f"unknown action {action!r}")
    m, order = phi.dim, phi.order
    if v is None:
        v = np.zeros((order, m), dtype=complex)
        v[0, line_index] = 1.0
    scale = max(np.abs(phi.coeffs).max(), np.abs(v).max(), 1.0)
    rows = _chain(phi, v, m - 1)
    z = []
    for i in range(1, m):
        stack = np.stack(rows[:i + 1], axis=1)
        thr = tol * max(scale, np.abs(stack).max())
        z.append(_minor_order(stack, thr))
    first = np.diff(np.concatenate([[0], z]))
    weights = np.diff(np.concatenate([[0], first]))
    return Divisor(tuple(int(x) for x in z), tuple(int(x) for x in weights),
                   bool(np.all(weights >= 0)))


def divisor_orders_adaptive(phi_builder, order=DEFAULT_TRUNCATION, max_order=256, **kw):
    """Retry :func:`divisor_orders` with doubled truncation when inconclusive.

    ``phi_builder(order)`` must return the PolyMatrix at that truncation.
    """
    while True:
        try:
            return divisor_orders(phi_builder(order), **kw)
        except InconclusiveError:
            if order * 2 > max_order:
                raise
            order *= 2


def canonical_frame(phi, v=None, tol=ZERO_TOL):
    """Frame in which ``phi`` has ``z^{r_k}`` exactly on the superdiagonal.

    Rows ``e_1, ..., e_{n+1}`` are built inductively: ``e_1 = v`` and
    ``e_k phi = z^{r_k} e_{k+1} + (span of e_1..e_k)``, the unit factor being
    absorbed into ``e_{k+1}``.  In the new frame ``P`` (rows ``e_k``) the
    field is ``P phi P^-1``: lower Hessenberg with superdiagonal
    ``z^{r_k}``.

    Returns
    -------
    frame : PolyMatrix
        ``P``.
    transformed : PolyMatrix
        ``P phi P^-1``, truncated to the precision that survives.
    weights : tuple of int

    Raises
    ------
    InconclusiveError
        If a pivot cannot be determined at the truncation order.
    """
    m, order = phi.dim, phi.order
    if v is None:
        v = np.zeros((order, m), dtype=complex)
        v[0, 0] = 1.0
    scale = max(np.abs(phi.coeffs).max(), 1.0)
    thr = tol * scale
    if _valuation(v, thr) != 0:
        raise DomainError("initial section must be nonvanishing at z = 0")
    # working frame: rows of built vectors followed by complement basis rows
    frame = np.zeros((order, m, m), dtype=complex)
    frame[:, 0, :] = v
    comp = [k for k in range(m) if k != int(np.argmax(np.abs(v[0])))]
    for pos, k in enumerate(comp, start=1):
        frame[0, pos, k] = 1.0
    prec = order
    weights = []
    for k in range(m - 1):
        w = PolyMatrix(phi.coeffs[:prec]).row_apply(frame[:prec, k, :])
        finv = PolyMatrix(frame[:prec]).inverse()
        coords = finv.row_apply(w)  # w = coords @ frame
        tail = coords[:, k + 1:]
        r = _valuation(tail, thr)
        if r is None:
            raise InconclusiveError("chain step vanishes to truncation order")
        weights.append(r)
        unit = tail[r:]
        prec = min(prec, order) - r
        new_row = _series_mul(unit[:prec, None, :], frame[:prec, k + 1:, :], prec)[:, 0, :]
        # replace the complement row with the largest constant coefficient
        piv = k + 1 + int(np.argmax(np.abs(unit[0])))
        frame = frame[:prec].copy()
        frame[:, [k + 1, piv]] = frame[:, [piv, k + 1]]
        frame[:, k + 1, :] = new_row
        if prec <= 0:
            raise InconclusiveError("truncation exhausted")
    p = PolyMatrix(frame[:prec])
    transformed = p @ PolyMatrix(phi.coeffs[:prec]) @ p.inverse()
    return p, transformed, tuple(weights)
