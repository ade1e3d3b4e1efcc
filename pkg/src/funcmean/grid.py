"""Regular observation grids on the half-open unit cube (0, 1]^d.

A grid is the tensor product of d axis grids; axis k has points
j_k / N_k for j_k = 1, ..., N_k.  Grid points carry a linear order that
sorts on the last coordinate first and the first coordinate last, so
axis 1 varies fastest.  The 1-based linear index of multi-index
(j_1, ..., j_d) is

    j = 1 + (j_1 - 1) + (j_2 - 1) N_1 + (j_3 - 1) N_1 N_2 + ...

Public methods speak 1-based indices (matching external file formats);
array storage is 0-based in the same order, which coincides with
NumPy's Fortran-order raveling of the 0-based multi-index.  Every
structure in the package (data payloads, kernel matrices, image
exports) uses this one ordering.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Grid", "build_grid"]


class Grid:
    """Tensor-product grid with a fixed linear ordering of its points.

    Attributes
    ----------
    dims : tuple of int
        Per-axis point counts (N_1, ..., N_d), each >= 1.
    d : int
        Number of axes.
    n_points : int
        Total number of grid points, prod(dims).
    """

    __slots__ = ("dims", "d", "n_points", "_coords")

    def __init__(self, dims):
        dims = tuple(int(m) for m in dims)
        if len(dims) == 0:
            raise ValueError("grid needs at least one axis")
        for m in dims:
            if m < 1:
                raise ValueError(f"axis sizes must be >= 1, got {dims}")
        self.dims = dims
        self.d = len(dims)
        self.n_points = int(np.prod(dims))
        self._coords = None

    def __repr__(self):
        return f"Grid(dims={self.dims})"

    def __eq__(self, other):
        return isinstance(other, Grid) and self.dims == other.dims

    def __hash__(self):
        return hash(self.dims)

    def coords(self) -> np.ndarray:
        """All grid points as an (n_points, d) array, in linear order.

        Row i holds the point with 1-based linear index i + 1.  Each
        coordinate is one exact division j_k / N_k; the array is built
        once and cached read-only.
        """
        if self._coords is None:
            axes = [np.arange(1, m + 1, dtype=np.float64) / m for m in self.dims]
            # meshgrid with ij indexing puts axis 1 first; Fortran-order
            # raveling then makes axis 1 the fastest-varying one.
            mesh = np.meshgrid(*axes, indexing="ij")
            out = np.empty((self.n_points, self.d))
            for k, g in enumerate(mesh):
                out[:, k] = g.ravel(order="F")
            out.setflags(write=False)
            self._coords = out
        return self._coords

    def point_at(self, index: int) -> np.ndarray:
        """Coordinates of the point with 1-based linear index."""
        if not 1 <= index <= self.n_points:
            raise ValueError(
                f"linear index {index} out of range [1, {self.n_points}]"
            )
        multi = np.unravel_index(index - 1, self.dims, order="F")
        return np.array([(j + 1) / m for j, m in zip(multi, self.dims)])

    def index_of(self, multi) -> int:
        """1-based linear index of a 1-based multi-index (j_1, ..., j_d)."""
        multi = tuple(int(j) for j in multi)
        if len(multi) != self.d:
            raise ValueError(f"multi-index has {len(multi)} axes, grid has {self.d}")
        for j, m in zip(multi, self.dims):
            if not 1 <= j <= m:
                raise ValueError(f"multi-index {multi} outside grid {self.dims}")
        zero_based = tuple(j - 1 for j in multi)
        return int(np.ravel_multi_index(zero_based, self.dims, order="F")) + 1

    def multi_index_of(self, index: int) -> tuple:
        """1-based multi-index (j_1, ..., j_d) of a 1-based linear index."""
        if not 1 <= index <= self.n_points:
            raise ValueError(
                f"linear index {index} out of range [1, {self.n_points}]"
            )
        multi = np.unravel_index(index - 1, self.dims, order="F")
        return tuple(int(j) + 1 for j in multi)

    def axis_indices(self) -> np.ndarray:
        """0-based per-axis indices of every point, shape (n_points, d).

        Column k holds j_k - 1 for each point in linear (storage) order.
        Useful for building matrices indexed by per-axis differences.
        """
        idx = np.unravel_index(np.arange(self.n_points), self.dims, order="F")
        return np.stack(idx, axis=1)


def build_grid(dims) -> Grid:
    """Construct a Grid after validating the axis sizes."""
    return Grid(dims)
