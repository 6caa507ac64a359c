"""Grids, finite-difference stencils and matrix functional calculus.

Fields are numpy arrays whose leading axes are the grid axes ``(x2, x3)``
or ``(x2, x3, y)``, followed by any trailing matrix axes.  The ``(x2, x3)``
directions are periodic with period 1 and use fourth-order central
differences; ``y`` lives on a geometrically graded mesh and uses
second-order three-point stencils that accept non-uniform spacing.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DomainError

MIN_NODES = 5
MIN_NODES_PER_DECADE = 8
SERIES_CUTOFF = 1e-5


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

def _fd_weights(xs, x0, deriv):
    """Finite-difference weights on arbitrary nodes (Vandermonde solve)."""
    xs = np.asarray(xs, dtype=float) - x0
    k = len(xs)
    scale = np.max(np.abs(xs))
    v = np.vander(xs / scale, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[deriv] = np.prod(np.arange(1, deriv + 1))
    return np.linalg.solve(v, rhs) / scale ** deriv


def _y_stencils(y):
    """Index and weight tables for first and second y-derivatives."""
    ny = len(y)
    i1 = np.empty((ny, 3), dtype=int)
    w1 = np.empty((ny, 3))
    i2 = np.empty((ny, 4), dtype=int)
    w2 = np.zeros((ny, 4))
    for k in range(ny):
        lo = min(max(k - 1, 0), ny - 3)
        i1[k] = np.arange(lo, lo + 3)
        w1[k] = _fd_weights(y[i1[k]], y[k], 1)
        if 0 < k < ny - 1:
            i2[k] = [k - 1, k, k + 1, k + 1]
            w2[k, :3] = _fd_weights(y[k - 1:k + 2], y[k], 2)
        else:
            lo = 0 if k == 0 else ny - 4
            i2[k] = np.arange(lo, lo + 4)
            w2[k] = _fd_weights(y[i2[k]], y[k], 2)
    return i1, w1, i2, w2


@dataclass(frozen=True)
class Grid2:
    """Periodic ``nx x nz`` grid on the unit square ``[0, 1)^2``."""

    nx: int
    nz: int

    def __post_init__(self):
        if min(self.nx, self.nz) < MIN_NODES:
            raise DomainError(f"need at least {MIN_NODES} nodes per direction")

    @property
    def hx(self):
        return 1.0 / self.nx

    @property
    def hz(self):
        return 1.0 / self.nz

    @property
    def shape(self):
        return (self.nx, self.nz)

    def coords(self):
        """Meshgrid arrays ``(x2, x3)`` of shape ``(nx, nz)``."""
        x2 = np.arange(self.nx) * self.hx
        x3 = np.arange(self.nz) * self.hz
        return np.meshgrid(x2, x3, indexing="ij")

    def complex_coords(self):
        x2, x3 = self.coords()
        return x2 + 1j * x3

    def area_weights(self):
        return np.full(self.shape, self.hx * self.hz)


@dataclass(frozen=True)
class Grid3:
    """Periodic ``(x2, x3)`` square times a graded ``y`` mesh.

    Parameters
    ----------
    nx, nz : int
        Periodic sample counts.
    y : ndarray
        Strictly increasing positive nodes.
    """

    nx: int
    nz: int
    y: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if min(self.nx, self.nz, y.size) < MIN_NODES:
            raise DomainError(f"need at least {MIN_NODES} nodes per direction")
        if y[0] <= 0 or np.any(np.diff(y) <= 0):
            raise DomainError("y nodes must be positive and strictly increasing")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        i1, w1, i2, w2 = _y_stencils(y)
        object.__setattr__(self, "_stencils", (i1, w1, i2, w2))

    @classmethod
    def graded(cls, nx, nz, y_max, ny=None, nodes_per_decade=12, y_min=None):
        """Geometric mesh ``y_k = y_min * rho**k`` ending exactly at ``y_max``.

        ``y_min`` defaults to ``1e-3 * y_max``.  If ``ny`` is omitted it is
        chosen from ``nodes_per_decade``.
        """
        if y_max <= 0:
            raise DomainError("y_max must be positive")
        y_min = 1e-3 * y_max if y_min is None else y_min
        if not 0 < y_min < y_max:
            raise DomainError("need 0 < y_min < y_max")
        decades = np.log10(y_max / y_min)
        if ny is None:
            ny = int(np.ceil(nodes_per_decade * decades)) + 1
        if (ny - 1) < MIN_NODES_PER_DECADE * decades - 1e-9:
            raise DomainError(
                f"{ny} nodes give fewer than {MIN_NODES_PER_DECADE} per decade")
        return cls(nx, nz, np.geomspace(y_min, y_max, ny))

    def extend_to(self, y_max):
        """Same nodes plus geometric continuation up to ``y_max``.

        The last ratio is kept within the mesh ratio, so the new grid shares
        every node of ``self`` and stays graded.
        """
        y = list(self.y)
        rho = self.y[-1] / self.y[-2]
        if y_max <= y[-1]:
            raise DomainError("extension must increase y_max")
        while y[-1] * rho < y_max * (1 - 1e-12):
            y.append(y[-1] * rho)
        if y_max - y[-1] < 0.3 * (y[-1] - y[-2]):
            y[-1] = y_max
        else:
            y.append(y_max)
        return Grid3(self.nx, self.nz, np.array(y))

    @property
    def ny(self):
        return self.y.size

    @property
    def hx(self):
        return 1.0 / self.nx

    @property
    def hz(self):
        return 1.0 / self.nz

    @property
    def shape(self):
        return (self.nx, self.nz, self.ny)

    @property
    def slice2d(self):
        return Grid2(self.nx, self.nz)

    @property
    def y_min(self):
        return float(self.y[0])

    @property
    def y_max(self):
        return float(self.y[-1])

    @property
    def ratio(self):
        """Largest consecutive ratio ``y_{k+1} / y_k``."""
        return float(np.max(self.y[1:] / self.y[:-1]))

    def coords(self):
        """Meshgrid arrays ``(x2, x3, y)`` of shape ``(nx, nz, ny)``."""
        x2 = np.arange(self.nx) * self.hx
        x3 = np.arange(self.nz) * self.hz
        return np.meshgrid(x2, x3, self.y, indexing="ij")

    def y_weights(self):
        """Trapezoid weights on the y nodes."""
        dy = np.diff(self.y)
        w = np.zeros(self.ny)
        w[:-1] += 0.5 * dy
        w[1:] += 0.5 * dy
        return w

    def volume_weights(self):
        return self.hx * self.hz * np.broadcast_to(self.y_weights(), self.shape)

    def interior(self):
        """Boolean mask excluding the two y boundary layers."""
        mask = np.ones(self.shape, dtype=bool)
        mask[:, :, 0] = False
        mask[:, :, -1] = False
        return mask


# --------------------------------------------------------------------------
# stencils
# --------------------------------------------------------------------------

def _check_grid(f, grid, ndim):
    if f.shape[:ndim] != grid.shape[:ndim]:
        raise DomainError(f"field shape {f.shape} does not match grid {grid.shape}")


def d_periodic(f, h, axis):
    """Fourth-order central first derivative along a periodic axis."""
    return (8.0 * (np.roll(f, -1, axis) - np.roll(f, 1, axis))
            - (np.roll(f, -2, axis) - np.roll(f, 2, axis))) / (12.0 * h)


def d2_periodic(f, h, axis):
    """Fourth-order central second derivative along a periodic axis."""
    return (16.0 * (np.roll(f, -1, axis) + np.roll(f, 1, axis))
            - (np.roll(f, -2, axis) + np.roll(f, 2, axis)) - 30.0 * f) / (12.0 * h * h)


def dx2_apply(f, grid):
    _check_grid(f, grid, 2)
    return d_periodic(f, grid.hx, 0)


def dx3_apply(f, grid):
    _check_grid(f, grid, 2)
    return d_periodic(f, grid.hz, 1)


def del_apply(f, grid):
    """``d/dz = (d/dx2 - i d/dx3) / 2``."""
    _check_grid(f, grid, 2)
    return 0.5 * (d_periodic(f, grid.hx, 0) - 1j * d_periodic(f, grid.hz, 1))


def dbar_apply(f, grid):
    """``d/dzbar = (d/dx2 + i d/dx3) / 2``."""
    _check_grid(f, grid, 2)
    return 0.5 * (d_periodic(f, grid.hx, 0) + 1j * d_periodic(f, grid.hz, 1))


def dbar_del_apply(f, grid):
    """Compact ``d^2/dz dzbar = (d^2/dx2^2 + d^2/dx3^2) / 4``."""
    _check_grid(f, grid, 2)
    return 0.25 * (d2_periodic(f, grid.hx, 0) + d2_periodic(f, grid.hz, 1))


def _apply_y(f, idx, w):
    taken = np.take(f, idx, axis=2)
    wshape = (1, 1) + w.shape + (1,) * (f.ndim - 3)
    return np.sum(taken * w.reshape(wshape), axis=3)


def dy_apply(f, grid):
    """Second-order first derivative in y (one-sided at the ends)."""
    _check_grid(f, grid, 3)
    i1, w1, _, _ = grid._stencils
    return _apply_y(f, i1, w1)


def dyy_apply(f, grid):
    """Second-order second derivative in y (one-sided at the ends)."""
    _check_grid(f, grid, 3)
    _, _, i2, w2 = grid._stencils
    return _apply_y(f, i2, w2)


# --------------------------------------------------------------------------
# matrix functional calculus
# --------------------------------------------------------------------------

def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def hermitian_part(a):
    return 0.5 * (a + dagger(a))


def traceless(a):
    m = a.shape[-1]
    tr = np.trace(a, axis1=-2, axis2=-1)
    return a - (tr / m)[..., None, None] * np.eye(m)


def _check_hermitian(s, tol=1e-10):
    s = np.asarray(s)
    scale = max(1.0, float(np.max(np.abs(s), initial=0.0)))
    if np.max(np.abs(s - dagger(s)), initial=0.0) > tol * scale:
        raise DomainError("matrix field is not Hermitian")


def herm_eig(s):
    """Batched eigendecomposition of Hermitian matrices."""
    return np.linalg.eigh(hermitian_part(s))


def herm_func(s, fn):
    """``fn(s)`` for Hermitian ``s`` via the unitary eigendecomposition."""
    lam, v = herm_eig(s)
    return (v * fn(lam)[..., None, :]) @ dagger(v)


def herm_exp(s, check=True):
    """Exponential of Hermitian matrices.

    Parameters
    ----------
    s : ndarray, shape (..., m, m)
        Hermitian; traceless input gives unit determinant.
    check : bool
        Raise :class:`DomainError` when ``s`` is not Hermitian.
    """
    if check:
        _check_hermitian(s)
    return herm_func(s, np.exp)


def herm_log(h):
    """Logarithm of Hermitian positive-definite matrices."""
    lam, v = herm_eig(h)
    if np.any(lam <= 0):
        raise DomainError("matrix is not positive definite")
    return (v * np.log(lam)[..., None, :]) @ dagger(v)


def herm_sqrt(h):
    lam, v = herm_eig(h)
    if np.any(lam <= 0):
        raise DomainError("matrix is not positive definite")
    return (v * np.sqrt(lam)[..., None, :]) @ dagger(v)


def phi1(x):
    """``(e^x - 1) / x`` with the removable singularity handled by series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2.0 + x * x / 6.0, np.expm1(safe) / safe)


def adjoint_function(s, a, fn):
    """``fn(ad_s) a`` for Hermitian ``s`` and arbitrary ``a``.

    In an eigenbasis of ``s`` with eigenvalues ``l``, ``ad_s`` multiplies the
    ``(i, j)`` entry by ``l_i - l_j``.
    """
    lam, v = herm_eig(s)
    diff = lam[..., :, None] - lam[..., None, :]
    vh = dagger(v)
    return v @ ((vh @ a @ v) * fn(diff)) @ vh


def gamma_apply(s, a, sign=1):
    """``gamma(sign * s) a`` with ``gamma(x) = (e^{ad x} - 1) / ad x``.

    Parameters
    ----------
    s : ndarray, shape (..., m, m)
        Hermitian.
    a : ndarray, shape (..., m, m)
    sign : {1, -1}
    """
    _check_hermitian(s)
    return adjoint_function(s, a, lambda d: phi1(sign * d))


def sqrt_gamma_apply(s, a, sign=-1):
    """``v(s) a`` with ``v(s) = gamma(sign * s)^{1/2}`` (default ``sign=-1``)."""
    _check_hermitian(s)
    return adjoint_function(s, a, lambda d: np.sqrt(phi1(sign * d)))


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------

@dataclass
class WeightedNorms:
    """Sup of ``y^-mu |s|`` and the fitted decay exponent.

    ``alpha`` is ``None`` when the field vanishes on the fit window.
    """

    sup: float
    alpha: float | None
    mu: float
    fit_window: tuple


def frobenius(a):
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))


def weighted_norms(s, grid, mu=0.0, y_fit=None, y_from=None):
    """Weighted sup-norm and least-squares decay exponent of a correction.

    Parameters
    ----------
    s : ndarray, shape (nx, nz, ny, m, m)
    grid : Grid3
    mu : float
        Weight exponent in ``sup y^-mu |s|``.
    y_fit : float, optional
        Upper end of the fit window, default ``sqrt(y_min * y_max)``.
    y_from : float, optional
        Lower end of the fit window, default ``3 * y_min`` so Dirichlet
        boundary values do not bias the fit.

    Returns
    -------
    WeightedNorms
        ``alpha`` is the slope of ``log max_x |s(., y)|`` against ``log y``.
    """
    _check_grid(s, grid, 3)
    mag = frobenius(s)
    col = mag.max(axis=(0, 1))
    sup = float(np.max(col * grid.y ** (-mu)))
    lo = 3.0 * grid.y_min if y_from is None else y_from
    hi = np.sqrt(grid.y_min * grid.y_max) if y_fit is None else y_fit
    sel = (grid.y >= lo) & (grid.y <= hi) & (col > 0)
    alpha = None
    if np.count_nonzero(sel) >= 2 and np.max(col[sel]) > 1e-300:
        alpha = float(np.polyfit(np.log(grid.y[sel]), np.log(col[sel]), 1)[0])
    return WeightedNorms(sup=sup, alpha=alpha, mu=mu, fit_window=(lo, hi))


def field_to_rows(f, grid):
    """Flatten a matrix field into CSV rows ``x2, x3, y, i, j, re, im``.

    On a :class:`Grid2` the ``y`` column is NaN.
    """
    if isinstance(grid, Grid3):
        x2, x3, y = grid.coords()
    else:
        x2, x3 = grid.coords()
        y = np.full(x2.shape, np.nan)
    m = f.shape[-1]
    rows = []
    for i in range(m):
        for j in range(m):
            ent = f[..., i, j]
            rows.append(np.stack([x2.ravel(), x3.ravel(), y.ravel(),
                                  np.full(ent.size, i), np.full(ent.size, j),
                                  ent.real.ravel(), ent.imag.ravel()], axis=1))
    return np.concatenate(rows, axis=0)
