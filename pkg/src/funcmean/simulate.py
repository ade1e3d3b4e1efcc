"""Synthetic functional datasets on regular grids.

A dataset holds n subject curves observed on a common grid,

    Y_ij = f0(X_j) + eta_i(X_j) + eps_ij,

with f0 a fixed mean function, eta_i independent mean-zero Gaussian
process draws, and eps_ij independent Gaussian measurement noise.  Each
subject's process and noise come from dedicated seeded substreams keyed
by (seed, subject, role), so a dataset with more subjects extends one
with fewer subject-for-subject, and regeneration is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .grid import Grid
from .spectrum import (
    CosineKernel,
    SpectralKernel,
    kernel_matrix,
)

__all__ = [
    "MeanFunction",
    "mean_function",
    "additive_mean",
    "CompositionSpec",
    "effective_smoothness",
    "composition_mean",
    "NoiseSpec",
    "GaussianProcessSampler",
    "sample_eta",
    "FunctionalDataset",
    "simulate_dataset",
    "subject_rng",
    "MEAN_NAMES",
]


# ---------------------------------------------------------------------------
# mean functions


@dataclass(frozen=True)
class MeanFunction:
    """A named mean surface f0 on (0, 1]^d, vectorized over point arrays."""

    name: str
    d: int
    fn: object = field(repr=False)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.d:
            raise ConfigError(
                f"points must have shape (n, {self.d}), got {points.shape}"
            )
        out = np.asarray(self.fn(points), dtype=float)
        if out.shape != (points.shape[0],):
            raise ConfigError(
                f"mean function {self.name!r} returned shape {out.shape}"
            )
        return out

    def evaluate(self, where) -> np.ndarray:
        """Evaluate on a Grid (in linear order) or an (n, d) point array."""
        if isinstance(where, Grid):
            if where.d != self.d:
                raise ConfigError(
                    f"mean function has d={self.d}, grid has d={where.d}"
                )
            return self(where.coords())
        return self(np.asarray(where, dtype=float))


def _case1_2d(points):
    x1 = points[:, 0]
    x2 = points[:, 1]
    t = x1 * x1
    cot = np.cos(t) / np.sin(t)
    # the exponent can overflow float64 near x1 = 0; the clipped value is
    # already deep in the saturated tail of the logistic
    expo = np.clip(cot * np.cos(2 * np.pi * x2), -700.0, 700.0)
    return -8.0 / (1.0 + np.exp(expo))


def _case2_2d(points):
    x1 = points[:, 0]
    x2 = points[:, 1]
    arg = np.sin(2 * np.pi * x1) + 2.0 * np.abs(np.tan(2 * np.pi * x2)) + 2.0
    return np.log(arg)


def _case3d(points):
    x1 = points[:, 0]
    x2 = points[:, 1]
    x3 = points[:, 2]
    return np.exp(x1 / 3.0 + x2 / 3.0 + np.sqrt(x3 + 0.1))


_BUILTIN_MEANS = {
    "case1-2d": (2, _case1_2d),
    "case2-2d": (2, _case2_2d),
    "case3d": (3, _case3d),
}

MEAN_NAMES = tuple(sorted(_BUILTIN_MEANS))


def mean_function(name: str) -> MeanFunction:
    """Look up a built-in mean surface by name."""
    try:
        d, fn = _BUILTIN_MEANS[name]
    except KeyError:
        raise ConfigError(
            f"unknown mean function {name!r}; available: {', '.join(MEAN_NAMES)}"
        ) from None
    return MeanFunction(name=name, d=d, fn=fn)


def additive_mean(components, name: str = "additive") -> MeanFunction:
    """Mean f0(x) = sum_k f_k(x_k) from scalar component callables."""
    comps = tuple(components)
    if len(comps) == 0:
        raise ConfigError("need at least one component")

    def fn(points):
        total = np.zeros(points.shape[0])
        for k, comp in enumerate(comps):
            total += np.asarray(comp(points[:, k]), dtype=float)
        return total

    return MeanFunction(name=name, d=len(comps), fn=fn)


# ---------------------------------------------------------------------------
# composition structure


@dataclass(frozen=True)
class CompositionSpec:
    """Shape of a layered composition h_q o ... o h_0.

    Level i maps a d_vec[i]-dimensional input to d_vec[i+1] outputs, each
    output depending on at most t_vec[i] of its arguments, with Hoelder
    smoothness beta_vec[i] and Hoelder constant bound K_vec[i].  d_vec has
    q + 2 entries (input through final scalar output), the others q + 1.
    """

    q: int
    d_vec: tuple
    t_vec: tuple
    beta_vec: tuple
    K_vec: tuple

    def __post_init__(self):
        if self.q < 0:
            raise ConfigError(f"q must be >= 0, got {self.q}")
        if len(self.d_vec) != self.q + 2:
            raise ConfigError(
                f"d_vec needs {self.q + 2} entries, got {len(self.d_vec)}"
            )
        for v, label in ((self.t_vec, "t_vec"), (self.beta_vec, "beta_vec"),
                         (self.K_vec, "K_vec")):
            if len(v) != self.q + 1:
                raise ConfigError(
                    f"{label} needs {self.q + 1} entries, got {len(v)}"
                )
        if self.d_vec[-1] != 1:
            raise ConfigError("the final output dimension must be 1")
        if any(m < 1 for m in self.d_vec):
            raise ConfigError("all level dimensions must be >= 1")
        for i, t in enumerate(self.t_vec):
            if not 1 <= t <= self.d_vec[i]:
                raise ConfigError(
                    f"t_vec[{i}] = {t} must lie in [1, {self.d_vec[i]}]"
                )
        if any(not b > 0 for b in self.beta_vec):
            raise ConfigError("all smoothness indices must be > 0")
        if any(not k > 0 for k in self.K_vec):
            raise ConfigError("all Hoelder bounds must be > 0")


def effective_smoothness(spec: CompositionSpec):
    """Per-level adjusted smoothness and the rate exponent they induce.

    Level i has adjusted smoothness beta*_i = beta_i * prod_{k>i}
    min(beta_k, 1); the rate exponent is theta = min_i 2 beta*_i / t_i.
    Returns (theta, beta_star tuple).
    """
    betas = spec.beta_vec
    q = spec.q
    beta_star = []
    for i in range(q + 1):
        prod = 1.0
        for k in range(i + 1, q + 1):
            prod *= min(betas[k], 1.0)
        beta_star.append(betas[i] * prod)
    theta = min(
        2.0 * bs / t for bs, t in zip(beta_star, spec.t_vec)
    )
    return theta, tuple(beta_star)


def composition_mean(spec: CompositionSpec, layer_fns,
                     name: str = "composition") -> MeanFunction:
    """Mean built by composing vectorized layer maps along a CompositionSpec.

    ``layer_fns[i]`` must map an (n, d_vec[i]) array to (n, d_vec[i+1]).
    Shapes are validated at every level on each evaluation.
    """
    fns = tuple(layer_fns)
    if len(fns) != spec.q + 1:
        raise ConfigError(f"need {spec.q + 1} layer functions, got {len(fns)}")

    def fn(points):
        h = points
        for i, layer in enumerate(fns):
            h = np.asarray(layer(h), dtype=float)
            if h.ndim == 1:
                h = h[:, None]
            want = (points.shape[0], spec.d_vec[i + 1])
            if h.shape != want:
                raise ConfigError(
                    f"composition level {i} returned shape {h.shape}, "
                    f"expected {want}"
                )
        return h[:, 0]

    return MeanFunction(name=name, d=spec.d_vec[0], fn=fn)


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Measurement-noise standard deviation: one sigma or a per-point vector."""

    sigma: float | None = None
    tau: np.ndarray | None = None

    def __post_init__(self):
        if (self.sigma is None) == (self.tau is None):
            raise ConfigError("set exactly one of sigma and tau")
        if self.sigma is not None and not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.tau is not None:
            tau = np.asarray(self.tau, dtype=float)
            if tau.ndim != 1:
                raise ConfigError("tau must be a 1-d array")
            if not np.all(tau >= 0):
                raise ConfigError("tau entries must be >= 0")
            object.__setattr__(self, "tau", tau)

    def sd_vector(self, n_points: int) -> np.ndarray:
        if self.sigma is not None:
            return np.full(n_points, float(self.sigma))
        if self.tau.size != n_points:
            raise ConfigError(
                f"tau has {self.tau.size} entries, grid has {n_points} points"
            )
        return self.tau


# ---------------------------------------------------------------------------
# Gaussian process sampling


class GaussianProcessSampler:
    """Draws mean-zero Gaussian process values on a fixed grid.

    Kernels with a known finite expansion (cosine, spectral) are sampled
    exactly through their basis; any other kernel goes through a dense
    eigendecomposition of the covariance table, so it must fit under the
    dense limit.  The factor is built once at construction.
    """

    def __init__(self, kernel, grid: Grid, dense_limit: int = 10_000):
        self.kernel = kernel
        self.grid = grid
        pts = grid.coords()
        if isinstance(kernel, CosineKernel):
            if kernel.d != grid.d:
                raise ConfigError(
                    f"kernel d={kernel.d} does not match grid d={grid.d}"
                )
            amp = np.sqrt(kernel.scale)
            rows = []
            for k in range(grid.d):
                rows.append(amp * np.cos(2 * np.pi * pts[:, k]))
                rows.append(amp * np.sin(2 * np.pi * pts[:, k]))
            self._factor = np.array(rows)  # (2d, N)
        elif isinstance(kernel, SpectralKernel):
            rows = []
            for lam, psi in zip(kernel.eigenvalues, kernel.functions):
                vec = np.array([float(psi(p)) for p in pts])
                rows.append(np.sqrt(lam) * vec)
            self._factor = np.array(rows) if rows else np.zeros((0, grid.n_points))
        else:
            cov = kernel_matrix(kernel, grid, dense_limit).values * grid.n_points
            w, u = np.linalg.eigh(cov)
            wmax = max(float(w[-1]), 0.0)
            if float(w[0]) < -1e-8 * max(wmax, 1.0):
                raise NumericalError(
                    f"covariance table is not positive semidefinite "
                    f"(min eigenvalue {w[0]:.3e})"
                )
            w = np.clip(w, 0.0, None)
            self._factor = (u * np.sqrt(w)).T  # (N, N): eta = z @ factor

    @property
    def n_terms(self) -> int:
        return self._factor.shape[0]

    def draw(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """One draw (shape (N,)) or n draws (shape (n, N)).

        Consumes exactly one standard-normal block of shape (n, n_terms)
        from the generator, so draw sequences are reproducible.
        """
        count = 1 if n is None else int(n)
        if count < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        z = rng.standard_normal((count, self._factor.shape[0]))
        out = z @ self._factor
        return out[0] if n is None else out


def sample_eta(kernel, grid: Grid, rng: np.random.Generator,
               n: int | None = None) -> np.ndarray:
    """Convenience wrapper: build a sampler for (kernel, grid) and draw."""
    return GaussianProcessSampler(kernel, grid).draw(rng, n)


# ---------------------------------------------------------------------------
# datasets


@dataclass(eq=False)
class FunctionalDataset:
    """n subject curves on a shared grid, subject-major storage."""

    grid: Grid
    values: np.ndarray  # (n, N) float64
    meta: dict

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.grid.n_points:
            raise ConfigError(
                f"values shape {values.shape} does not match grid with "
                f"{self.grid.n_points} points"
            )
        self.values = values

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    def pointwise_mean(self) -> np.ndarray:
        """Across-subject average curve, length N, in grid linear order."""
        return self.values.mean(axis=0)


def subject_rng(seed: int, subject: int, role: int) -> np.random.Generator:
    """Dedicated generator for one subject's process (role 0) or noise (role 1)."""
    if seed < 0 or subject < 0 or role < 0:
        raise ConfigError("seed, subject and role must be nonnegative")
    ss = np.random.SeedSequence([int(seed), int(subject), int(role)])
    return np.random.Generator(np.random.PCG64(ss))


def simulate_dataset(n: int, grid: Grid, mean: MeanFunction,
                     kernel=None, noise: NoiseSpec | None = None,
                     seed: int = 0) -> FunctionalDataset:
    """Generate a dataset of n subjects on a grid.

    ``kernel`` None disables the process term; ``noise`` None disables
    measurement noise.  Subject i draws its process from the stream
    keyed (seed, i, 0) and its noise from (seed, i, 1), so datasets with
    the same seed agree subject-for-subject regardless of n.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    f0 = mean.evaluate(grid)
    n_pts = grid.n_points
    sampler = None if kernel is None else GaussianProcessSampler(kernel, grid)
    sd = None if noise is None else noise.sd_vector(n_pts)
    values = np.empty((n, n_pts))
    for i in range(n):
        row = f0.copy()
        if sampler is not None:
            row += sampler.draw(subject_rng(seed, i, 0))
        if sd is not None:
            row += sd * subject_rng(seed, i, 1).standard_normal(n_pts)
        values[i] = row
    meta = {
        "mean": mean.name,
        "kernel": "none" if kernel is None else repr(kernel),
        "sigma": "none" if noise is None or noise.sigma is None
        else repr(float(noise.sigma)),
        "seed": str(int(seed)),
    }
    return FunctionalDataset(grid=grid, values=values, meta=meta)
