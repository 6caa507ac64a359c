"""Structure data for sl(n+1): Cartan matrix, Chevalley basis, principal sl2.

Every other module pulls its Lie-algebraic constants from a
:class:`LieContext`.  Integer-valued objects (Cartan matrix, Chevalley
generators, the grading element) are exact; the principal nilpotent carries
square roots of the weights and is stored in double precision.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConsistencyError, DomainError

MAX_RANK = 8


def cartan_matrix(n):
    """Cartan matrix of sl(n+1) as an integer array."""
    a = 2 * np.eye(n, dtype=np.int64)
    idx = np.arange(n - 1)
    a[idx, idx + 1] = -1
    a[idx + 1, idx] = -1
    return a


def cartan_inverse(n):
    """Exact inverse of the Cartan matrix, ``min(i, j) - i*j/(n+1)``.

    Returns
    -------
    list of list of Fraction
        1-based formula, 0-based storage.
    """
    return [[Fraction(min(i, j)) - Fraction(i * j, n + 1)
             for j in range(1, n + 1)] for i in range(1, n + 1)]


def _elementary(m, i, j):
    e = np.zeros((m, m), dtype=np.int64)
    e[i, j] = 1
    return e


@dataclass(frozen=True)
class LieContext:
    """Immutable sl(n+1) data.

    Attributes
    ----------
    n : int
        Rank; the group is SL(n+1).
    cartan : ndarray of int, shape (n, n)
    cartan_inv : tuple of tuple of Fraction
    weights : tuple of int
        ``B_i = i (n + 1 - i)``.
    e_plus, e_minus, h_basis : tuple of ndarray of int
        Chevalley generators ``E_j^+ = E_{j,j+1}``, ``E_j^- = E_{j+1,j}`` and
        ``H_j = E_jj - E_{j+1,j+1}``.
    sl2_plus, sl2_zero, sl2_minus : ndarray
        Principal sl2 triple.  ``sl2_plus = sum sqrt(B_j) E_j^+`` (float),
        ``sl2_zero = diag(n, n-2, ..., -n)`` (int) and ``sl2_minus`` its
        transpose, so that ``[sl2_plus, sl2_minus] = sl2_zero``.
    """

    n: int
    cartan: np.ndarray = field(repr=False)
    cartan_inv: tuple = field(repr=False)
    weights: tuple
    e_plus: tuple = field(repr=False)
    e_minus: tuple = field(repr=False)
    h_basis: tuple = field(repr=False)
    sl2_plus: np.ndarray = field(repr=False)
    sl2_zero: np.ndarray = field(repr=False)
    sl2_minus: np.ndarray = field(repr=False)

    @property
    def dim(self):
        """Matrix size ``n + 1``."""
        return self.n + 1

    @property
    def cartan_inv_float(self):
        return np.array([[float(x) for x in row] for row in self.cartan_inv])

    def to_dict(self):
        """JSON-friendly summary used by the CLI."""
        return {
            "n": self.n,
            "cartan": self.cartan.tolist(),
            "cartan_inv": [[str(x) for x in row] for row in self.cartan_inv],
            "weights": list(self.weights),
            "sl2_zero_diagonal": np.diag(self.sl2_zero).tolist(),
            "sl2_plus_superdiagonal": np.diag(self.sl2_plus, 1).tolist(),
        }


@lru_cache(maxsize=None)
def build_lie_context(n):
    """Construct the structure data of sl(n+1).

    Parameters
    ----------
    n : int
        Rank, ``1 <= n <= 8``.

    Returns
    -------
    LieContext

    Raises
    ------
    DomainError
        If ``n`` is not an integer in range.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise DomainError(f"rank must be an integer, got {n!r}")
    n = int(n)
    if not 1 <= n <= MAX_RANK:
        raise DomainError(f"rank n={n} outside 1 <= n <= {MAX_RANK}")
    m = n + 1
    a = cartan_matrix(n)
    a_inv = cartan_inverse(n)
    # exact check A A^{-1} = I in rational arithmetic
    for i in range(n):
        for j in range(n):
            acc = sum(int(a[i, k]) * a_inv[k][j] for k in range(n))
            if acc != (1 if i == j else 0):
                raise ConsistencyError("Cartan inverse formula failed")
    weights = tuple(i * (m - i) for i in range(1, m))
    for i in range(n):
        if 2 * sum(a_inv[i]) != weights[i]:
            raise ConsistencyError("weights disagree with row sums of A^{-1}")

    e_plus = tuple(_elementary(m, j, j + 1) for j in range(n))
    e_minus = tuple(_elementary(m, j + 1, j) for j in range(n))
    h_basis = tuple(_elementary(m, j, j) - _elementary(m, j + 1, j + 1)
                    for j in range(n))
    sqrt_b = np.sqrt(np.array(weights, dtype=float))
    sl2_plus = sum(sqrt_b[j] * e_plus[j] for j in range(n)).astype(float)
    sl2_zero = sum(weights[j] * h_basis[j] for j in range(n))
    sl2_minus = sl2_plus.T.copy()
    for arr in (a, sl2_plus, sl2_zero, sl2_minus, *e_plus, *e_minus, *h_basis):
        arr.setflags(write=False)
    return LieContext(n=n, cartan=a, cartan_inv=tuple(map(tuple, a_inv)),
                      weights=weights, e_plus=e_plus, e_minus=e_minus,
                      h_basis=h_basis, sl2_plus=sl2_plus, sl2_zero=sl2_zero,
                      sl2_minus=sl2_minus)


def commutator(a, b):
    """Matrix commutator ``[a, b]``, batched over leading axes."""
    return a @ b - b @ a


@lru_cache(maxsize=None)
def hermitian_basis(m):
    """Orthonormal basis of traceless Hermitian ``m x m`` matrices.

    Orthonormality is with respect to ``Tr(a b)``.  The first ``m - 1``
    elements are diagonal, followed by symmetric and antisymmetric
    off-diagonal pairs.

    Returns
    -------
    ndarray, shape (m*m - 1, m, m), complex
    """
    basis = []
    for k in range(1, m):
        d = np.zeros(m)
        d[:k] = 1.0
        d[k] = -k
        basis.append(np.diag(d / np.sqrt(k * (k + 1))).astype(complex))
    r2 = np.sqrt(0.5)
    for i in range(m):
        for j in range(i + 1, m):
            sym = np.zeros((m, m), dtype=complex)
            sym[i, j] = sym[j, i] = r2
            asym = np.zeros((m, m), dtype=complex)
            asym[i, j] = -1j * r2
            asym[j, i] = 1j * r2
            basis.extend([sym, asym])
    out = np.array(basis)
    out.setflags(write=False)
    return out


def to_coords(s):
    """Real coordinates of traceless Hermitian matrices in :func:`hermitian_basis`."""
    basis = hermitian_basis(s.shape[-1])
    return np.einsum("aji,...ij->...a", basis, s).real


def from_coords(c, m):
    """Inverse of :func:`to_coords`."""
    return np.einsum("...a,aij->...ij", c, hermitian_basis(m))


def casimir_apply(ctx, s):
    """Apply the Casimir operator of the principal sl2 in the adjoint action.

    ``C s = 1/2 ([e+, [e-, s]] + [e-, [e+, s]]) + 1/4 [e0, [e0, s]]``

    Parameters
    ----------
    ctx : LieContext
    s : array_like, shape (..., n+1, n+1)
        Traceless matrices; leading axes are batched.

    Returns
    -------
    ndarray
        Same shape as ``s``.
    """
    s = np.asarray(s)
    if s.shape[-2:] != (ctx.dim, ctx.dim):
        raise DomainError(f"expected trailing shape {(ctx.dim,) * 2}, got {s.shape}")
    ep, em, e0 = ctx.sl2_plus, ctx.sl2_minus, ctx.sl2_zero
    return (0.5 * (commutator(ep, commutator(em, s)) + commutator(em, commutator(ep, s)))
            + 0.25 * commutator(e0, commutator(e0, s)))


def casimir_matrix(ctx):
    """Matrix of :func:`casimir_apply` on the orthonormal Hermitian basis.

    Real symmetric of size ``(n+1)^2 - 1``.
    """
    basis = hermitian_basis(ctx.dim)
    images = casimir_apply(ctx, basis)
    return np.einsum("aji,bij->ab", basis, images).real


def casimir_spectrum(ctx):
    """Eigenvalues and orthonormal eigenvectors (in basis coordinates)."""
    return np.linalg.eigh(casimir_matrix(ctx))


def indicial_roots(ctx, tol=1e-8):
    """Growth exponents of the normal operator, read off the Casimir spectrum.

    Each eigenvalue ``j(j+1)`` contributes the pair ``{-j, j+1}``.

    Raises
    ------
    ConsistencyError
        If an eigenvalue is not within ``tol`` of ``j(j+1)`` for an integer
        ``j``, or the result disagrees with ``{-n..-1} U {2..n+1}``.
    """
    evals, _ = casimir_spectrum(ctx)
    roots = set()
    for mu in evals:
        j = int(round((-1.0 + np.sqrt(1.0 + 4.0 * max(mu, 0.0))) / 2.0))
        if abs(mu - j * (j + 1)) > tol:
            raise ConsistencyError(f"Casimir eigenvalue {mu!r} is not j(j+1)")
        roots.update((-j, j + 1))
    out = sorted(roots)
    expected = list(range(-ctx.n, 0)) + list(range(2, ctx.n + 2))
    if out != expected:
        raise ConsistencyError(f"indicial roots {out} differ from {expected}")
    return out
