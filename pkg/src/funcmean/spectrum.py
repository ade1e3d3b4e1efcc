"""Covariance kernels on the unit cube and their grid spectra.

Kernels are evaluated pointwise, assembled into normalized grid matrices
C_N = [G(X_j, X_j') / N], and analyzed spectrally.  Two closed-form
families are provided:

* the cosine-process kernel, a rank-2d kernel whose grid matrix has
  largest eigenvalue xi_var/2 (times 1/d when normalized) for every
  axis size, and
* the periodic series kernel built from the even cosine series

      g_m(u) = 2 * sum_{k>=1} cos(2 pi k u) / (2 pi k)^m,   m > 1,

  applied additively per axis with exponent m = varrho * d.  Its axis
  circulant blocks have eigenvalues available exactly through Hurwitz
  zeta sums, so decay studies never depend on series truncation.

A note on decay versus maximum: for the series kernel the largest
circulant eigenvalue tends to the constant (2 pi)^(-m) as the axis size
grows, while the eigenvalue of the constant eigenvector (DFT index 0)
equals 2 (2 pi N_axis)^(-m) zeta(m) and decays exactly like
N_axis^(-varrho d).  Decay-rate sweeps therefore track the DFT-index-0
eigenvalue; `max_eigenvalue` always reports the true maximum.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.special import zeta as _hurwitz_zeta

from .errors import ConfigError, NumericalError
from .grid import Grid

__all__ = [
    "CosineKernel",
    "BernoulliKernel",
    "SpectralKernel",
    "GridKernel",
    "KernelMatrix",
    "kernel_value",
    "kernel_matrix",
    "circulant_eigenvalues",
    "bernoulli_eigenvalues",
    "bernoulli_axis_row",
    "assemble_axis_term",
    "kronecker_max_eigenvalue",
    "max_eigenvalue",
    "estimate_decay_rate",
    "DecayFit",
    "SpectrumReport",
    "decay_sweep",
]

DENSE_LIMIT = 10_000  # default cap on grid points for dense kernel matrices

# ---------------------------------------------------------------------------
# kernel specifications


@dataclass(frozen=True)
class CosineKernel:
    """Covariance of a random cosine expansion.

    G(x, x') = scale * xi_var * sum_k cos(2 pi (x_k - x'_k)) with
    scale = 1/d when ``normalize_by_d`` else 1.  The process itself is
    eta(x) = sqrt(scale * xi_var) * sum_k (a_k cos(2 pi x_k)
    + b_k sin(2 pi x_k)) with independent standard normal a_k, b_k.
    """

    d: int
    xi_var: float = 1.0
    normalize_by_d: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if not self.xi_var >= 0:
            raise ConfigError(f"xi_var must be >= 0, got {self.xi_var}")

    @property
    def scale(self) -> float:
        return self.xi_var / self.d if self.normalize_by_d else self.xi_var

    def value(self, x, xp) -> float:
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        _check_point_dims(self.d, x, xp)
        return self.scale * float(np.sum(np.cos(2 * np.pi * (x - xp))))


@dataclass(frozen=True)
class BernoulliKernel:
    """Additive periodic kernel G(x, x') = sum_k g_m(x_k - x'_k).

    The exponent is m = varrho * d and must exceed 1 for the series to
    converge.  With ``k_max`` unset the series is summed in closed form
    (exact up to roundoff); an explicit ``k_max`` truncates it, which is
    useful only for cross-checks.
    """

    varrho: float
    d: int
    k_max: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        m = self.varrho * self.d
        if not m > 1:
            raise ConfigError(
                f"series kernel needs varrho * d > 1 for convergence, got {m}"
            )
        if self.k_max is not None and self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")

    @property
    def exponent(self) -> float:
        return self.varrho * self.d

    def value(self, x, xp) -> float:
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        _check_point_dims(self.d, x, xp)
        m = self.exponent
        return float(sum(_g_series(float(u), m, self.k_max) for u in (x - xp)))


@dataclass(frozen=True)
class SpectralKernel:
    """Finite Mercer expansion G(x, x') = sum_k lam_k psi_k(x) psi_k(x')."""

    d: int
    eigenvalues: tuple
    functions: tuple

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if len(self.eigenvalues) != len(self.functions):
            raise ConfigError("eigenvalues and functions must pair up")
        if any(lam < 0 for lam in self.eigenvalues):
            raise ConfigError("spectral kernel eigenvalues must be >= 0")

    def value(self, x, xp) -> float:
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        _check_point_dims(self.d, x, xp)
        total = 0.0
        for lam, psi in zip(self.eigenvalues, self.functions):
            total += lam * float(psi(x)) * float(psi(xp))
        return total


@dataclass(frozen=True, eq=False)
class GridKernel:
    """Kernel known only through its value table on one grid.

    ``table[j, j']`` holds G(X_j, X_j') in the grid's linear order (not
    divided by N).  Pointwise evaluation is defined for grid points only.
    """

    grid: Grid
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        n = self.grid.n_points
        if table.shape != (n, n):
            raise ConfigError(
                f"table shape {table.shape} does not match grid with {n} points"
            )
        if not np.allclose(table, table.T, rtol=0, atol=1e-12):
            raise ConfigError("grid kernel table must be symmetric")
        object.__setattr__(self, "table", table)

    @property
    def d(self) -> int:
        return self.grid.d

    def value(self, x, xp) -> float:
        i = _locate_on_grid(self.grid, x)
        j = _locate_on_grid(self.grid, xp)
        return float(self.table[i, j])


def _check_point_dims(d, x, xp):
    if x.shape != (d,) or xp.shape != (d,):
        raise ConfigError(
            f"points must have shape ({d},), got {x.shape} and {xp.shape}"
        )


def _locate_on_grid(grid: Grid, x) -> int:
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.d,):
        raise ConfigError(f"point shape {x.shape} does not match grid d={grid.d}")
    multi = []
    for xk, m in zip(x, grid.dims):
        j = int(round(xk * m))
        if not (1 <= j <= m) or abs(j / m - xk) > 1e-9:
            raise ConfigError(f"point {x} is not on grid {grid.dims}")
        multi.append(j)
    return grid.index_of(multi) - 1  # 0-based row into the table


# ---------------------------------------------------------------------------
# series kernel evaluation


@functools.lru_cache(maxsize=64)
def _bernoulli_poly_coeffs(m: int) -> tuple:
    """Monomial coefficients (highest degree first) of the Bernoulli
    polynomial B_m, exact rationals evaluated to float."""
    coeffs = []
    for k in range(m + 1):
        c = mpmath.binomial(m, k) * mpmath.bernoulli(m - k)
        coeffs.append(float(c))
    # coeffs[k] multiplies u^k; np.polyval wants highest degree first
    return tuple(reversed(coeffs))


@functools.lru_cache(maxsize=200_000)
def _g_series_closed(u: float, m: float) -> float:
    """Closed-form g_m(u) for u in [0, 1)."""
    if float(m).is_integer() and int(m) % 2 == 0:
        mi = int(m)
        poly = np.polyval(_bernoulli_poly_coeffs(mi), u)
        sign = -1.0 if (mi // 2) % 2 == 0 else 1.0
        return float(sign * poly / math.factorial(mi))
    z = mpmath.expjpi(2 * u)  # exp(2 pi i u)
    li = mpmath.polylog(mpmath.mpf(m), z)
    return float(2 * (2 * mpmath.pi) ** (-mpmath.mpf(m)) * mpmath.re(li))


def _g_series(u: float, m: float, k_max: int | None) -> float:
    u = u % 1.0
    if k_max is None:
        return _g_series_closed(u, m)
    k = np.arange(1, k_max + 1, dtype=float)
    return float(2.0 * np.sum(np.cos(2 * np.pi * k * u) * (2 * np.pi * k) ** (-m)))


# ---------------------------------------------------------------------------
# grid matrices


def kernel_value(kernel, x, xp) -> float:
    """G(x, x') for any kernel specification."""
    return kernel.value(x, xp)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Normalized kernel matrix C_N = [G(X_j, X_j') / N] on a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.values.shape


def kernel_matrix(kernel, grid: Grid, dense_limit: int = DENSE_LIMIT) -> KernelMatrix:
    """Assemble C_N densely.  Refuses grids above ``dense_limit`` points."""
    n = grid.n_points
    if n > dense_limit:
        raise ConfigError(
            f"grid has {n} points, above the dense limit {dense_limit}"
        )
    if isinstance(kernel, GridKernel):
        if kernel.grid != grid:
            raise ConfigError("grid kernel table was built for a different grid")
        values = kernel.table / n
    elif isinstance(kernel, CosineKernel):
        values = _cosine_table(kernel, grid) / n
    elif isinstance(kernel, BernoulliKernel):
        values = _bernoulli_table(kernel, grid) / n
    elif isinstance(kernel, SpectralKernel):
        values = _spectral_table(kernel, grid) / n
    else:
        raise ConfigError(f"unsupported kernel type {type(kernel).__name__}")
    return KernelMatrix(grid=grid, values=values)


def _cosine_table(kernel: CosineKernel, grid: Grid) -> np.ndarray:
    if grid.d != kernel.d:
        raise ConfigError(f"kernel d={kernel.d} does not match grid d={grid.d}")
    pts = grid.coords()
    out = np.zeros((grid.n_points, grid.n_points))
    for k in range(grid.d):
        diff = pts[:, k][:, None] - pts[:, k][None, :]
        out += np.cos(2 * np.pi * diff)
    return kernel.scale * out


def _bernoulli_table(kernel: BernoulliKernel, grid: Grid) -> np.ndarray:
    if grid.d != kernel.d:
        raise ConfigError(f"kernel d={kernel.d} does not match grid d={grid.d}")
    m = kernel.exponent
    idx = grid.axis_indices()
    out = np.zeros((grid.n_points, grid.n_points))
    for k, n_axis in enumerate(grid.dims):
        # only n_axis distinct lag values occur on axis k
        tab = np.array(
            [_g_series(t / n_axis, m, kernel.k_max) for t in range(n_axis)]
        )
        lag = np.abs(idx[:, k][:, None] - idx[:, k][None, :])
        out += tab[lag]
    return out


def _spectral_table(kernel: SpectralKernel, grid: Grid) -> np.ndarray:
    pts = grid.coords()
    if grid.d != kernel.d:
        raise ConfigError(f"kernel d={kernel.d} does not match grid d={grid.d}")
    out = np.zeros((grid.n_points, grid.n_points))
    for lam, psi in zip(kernel.eigenvalues, kernel.functions):
        vec = np.array([float(psi(p)) for p in pts])
        out += lam * np.outer(vec, vec)
    return out


# ---------------------------------------------------------------------------
# circulant spectra


def circulant_eigenvalues(first_row) -> np.ndarray:
    """Eigenvalues of the circulant matrix with the given first row.

    Computed as the DFT of the row.  For symmetric rows (row[l] ==
    row[-l mod n]) the spectrum is real; imaginary parts below 1e-10
    relative to the largest magnitude are then truncated.  Rows that are
    not symmetric return their genuinely complex spectrum.
    """
    row = np.asarray(first_row, dtype=float)
    if row.ndim != 1 or row.size == 0:
        raise ConfigError("first_row must be a nonempty 1-d array")
    eig = np.fft.fft(row)
    scale = np.max(np.abs(eig))
    if scale == 0.0:
        return np.zeros(row.size)
    if np.max(np.abs(eig.imag)) <= 1e-10 * scale:
        return eig.real.copy()
    return eig


def bernoulli_axis_row(varrho: float, d: int, n_axis: int,
                       k_max: int | None = None) -> np.ndarray:
    """First row of the axis circulant block A = [g_m((j-j')/n_axis) / n_axis]."""
    kernel = BernoulliKernel(varrho=varrho, d=d, k_max=k_max)
    m = kernel.exponent
    return np.array(
        [_g_series(l / n_axis, m, k_max) / n_axis for l in range(n_axis)]
    )


def bernoulli_eigenvalues(varrho: float, d: int, n_axis: int,
                          k_max: int | None = None) -> np.ndarray:
    """All n_axis eigenvalues of the axis circulant block, DFT order.

    Exact form (``k_max`` unset), obtained by folding the cosine series
    onto DFT frequencies:

        lam[0] = 2 (2 pi n_axis)^(-m) zeta(m)
        lam[j] = (2 pi n_axis)^(-m) (zeta(m, j/n_axis) + zeta(m, 1 - j/n_axis))

    with m = varrho * d and zeta(s, a) the Hurwitz zeta function.  The
    spectrum is symmetric, lam[j] == lam[n_axis - j].  lam[0] is the
    eigenvalue of the constant eigenvector and decays exactly like
    n_axis^(-m); the maximum over j instead tends to (2 pi)^(-m).

    With ``k_max`` set, eigenvalues come from the DFT of the truncated
    row instead.
    """
    kernel = BernoulliKernel(varrho=varrho, d=d, k_max=k_max)  # validates
    if n_axis < 1:
        raise ConfigError(f"n_axis must be >= 1, got {n_axis}")
    if k_max is not None:
        return circulant_eigenvalues(bernoulli_axis_row(varrho, d, n_axis, k_max))
    m = kernel.exponent
    lam = np.empty(n_axis)
    lam[0] = 2.0 * (2 * np.pi * n_axis) ** (-m) * _hurwitz_zeta(m, 1.0)
    if n_axis > 1:
        j = np.arange(1, n_axis, dtype=float)
        lam[1:] = (2 * np.pi * n_axis) ** (-m) * (
            _hurwitz_zeta(m, j / n_axis) + _hurwitz_zeta(m, 1.0 - j / n_axis)
        )
    return lam


def assemble_axis_term(axis_block: np.ndarray, dims, axis: int) -> np.ndarray:
    """Dense single-axis term of an additive kernel matrix.

    Builds norm_ones x ... x axis_block x ... x norm_ones (Kronecker
    product over axes, axis 1 placed innermost to match the grid's
    linear order), where norm_ones is the all-ones matrix divided by the
    axis size.  ``axis`` is 1-based.
    """
    dims = tuple(int(m) for m in dims)
    if not 1 <= axis <= len(dims):
        raise ConfigError(f"axis {axis} out of range for dims {dims}")
    block = np.asarray(axis_block, dtype=float)
    if block.shape != (dims[axis - 1], dims[axis - 1]):
        raise ConfigError(
            f"axis block shape {block.shape} does not match axis size "
            f"{dims[axis - 1]}"
        )
    mats = [np.full((m, m), 1.0 / m) for m in dims]
    mats[axis - 1] = block
    out = np.array([[1.0]])
    for mat in reversed(mats):  # axis 1 ends up innermost (fastest varying)
        out = np.kron(out, mat)
    return out


def kronecker_max_eigenvalue(axis_block: np.ndarray, d: int) -> float:
    """Largest eigenvalue of a single-axis additive term, via structure.

    The term factors as a Kronecker product of the axis block with
    normalized all-ones blocks on the other d-1 axes; each normalized
    all-ones block is a rank-1 projector with top eigenvalue 1, so the
    term's largest eigenvalue equals the axis block's.
    """
    if d < 1:
        raise ConfigError(f"d must be >= 1, got {d}")
    block = np.asarray(axis_block, dtype=float)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ConfigError("axis block must be a square matrix")
    return float(np.linalg.eigvalsh(block)[-1])


def max_eigenvalue(matrix, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    The start vector is all-ones plus a small perturbation drawn from a
    fixed-seed generator, so results are deterministic and the iteration
    cannot start orthogonal to the top eigenspace.  Convergence is
    declared when the Rayleigh quotient moves by at most ``tol``
    relatively; a NumericalError is raised after ``max_iter`` steps.
    """
    if isinstance(matrix, KernelMatrix):
        matrix = matrix.values
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError("matrix must be square")
    n = a.shape[0]
    rng = np.random.default_rng(0x5EED)
    q = np.ones(n) + 1e-3 * rng.standard_normal(n)
    q /= np.linalg.norm(q)
    lam_prev = float(q @ (a @ q))
    for _ in range(max_iter):
        z = a @ q
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        q = z / nz
        lam = float(q @ (a @ q))
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            return lam
        lam_prev = lam
    raise NumericalError(
        f"power iteration did not converge in {max_iter} steps "
        f"(last value {lam_prev:.6e})"
    )


# ---------------------------------------------------------------------------
# decay-rate estimation


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of log(lambda) against log(axis size)."""

    rho_hat: float
    stderr: float
    slope: float
    intercept: float
    n_points: int


def estimate_decay_rate(axis_sizes, eigenvalues) -> DecayFit:
    """Fit log lam = a + b log N_axis; the decay estimate is -b.

    Needs at least three distinct sizes and strictly positive
    eigenvalues.  The slope standard error comes from the usual OLS
    residual variance with size - 2 degrees of freedom.
    """
    ns = np.asarray(axis_sizes, dtype=float)
    lams = np.asarray(eigenvalues, dtype=float)
    if ns.shape != lams.shape or ns.ndim != 1:
        raise ConfigError("axis_sizes and eigenvalues must be matching 1-d arrays")
    if np.unique(ns).size < 3:
        raise ConfigError(
            "need at least three distinct axis sizes to fit a decay rate"
        )
    if np.any(lams <= 0):
        raise ConfigError("eigenvalues must be positive to fit a log-log slope")
    x = np.log(ns)
    y = np.log(lams)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    intercept, slope = float(coef[0]), float(coef[1])
    resid = y - design @ coef
    dof = ns.size - 2
    sigma2 = float(resid @ resid) / dof
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(sigma2 / sxx)
    return DecayFit(
        rho_hat=-slope,
        stderr=stderr,
        slope=slope,
        intercept=intercept,
        n_points=int(ns.size),
    )


@dataclass(frozen=True)
class SpectrumReport:
    """Per-size tracked eigenvalues of a kernel family plus a decay fit."""

    kernel: str
    varrho: float
    d: int
    rows: tuple  # (axis_size, lambda1, method) triples
    fit: DecayFit | None


def decay_sweep(kernel: str, d: int, axis_sizes, varrho: float = 0.0,
                xi_var: float = 1.0, normalize_by_d: bool = False) -> SpectrumReport:
    """Tracked eigenvalue per axis size for a closed-form kernel family.

    For ``kernel == "cosine"`` the tracked value is the exact largest
    eigenvalue, xi_var/2 scaled by 1/d when normalized, constant in the
    axis size.  For ``kernel == "bernoulli"`` the tracked value is the
    DFT-index-0 eigenvalue of the axis block, the mode whose decay in
    the axis size identifies varrho (see `bernoulli_eigenvalues`).  The
    decay fit needs at least three distinct sizes and is None otherwise.
    """
    sizes = [int(m) for m in axis_sizes]
    if len(sizes) == 0:
        raise ConfigError("need at least one axis size")
    if any(m < 1 for m in sizes):
        raise ConfigError(f"axis sizes must be >= 1, got {sizes}")
    rows = []
    if kernel == "cosine":
        spec = CosineKernel(d=d, xi_var=xi_var, normalize_by_d=normalize_by_d)
        for m in sizes:
            rows.append((m, spec.scale / 2.0, "formula"))
    elif kernel == "bernoulli":
        for m in sizes:
            lam0 = float(bernoulli_eigenvalues(varrho, d, m)[0])
            rows.append((m, lam0, "formula"))
    else:
        raise ConfigError(f"unknown kernel family {kernel!r}")
    fit = None
    uniq = sorted(set(sizes))
    if len(uniq) >= 3:
        by_size = {m: lam for m, lam, _ in rows}
        fit = estimate_decay_rate(uniq, [by_size[m] for m in uniq])
    return SpectrumReport(
        kernel=kernel, varrho=varrho, d=d, rows=tuple(rows), fit=fit
    )
