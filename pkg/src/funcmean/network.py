"""Sparse shifted-ReLU networks and their function-class constraints.

A network with L hidden layers and widths (p_0, ..., p_{L+1}),
p_{L+1} = 1, computes

    f(x) = W_L sigma_{v_L}( ... W_1 sigma_{v_1}(W_0 x) ... ),

where sigma_v(y) = max(y - v, 0) acts componentwise.  The constrained
function class additionally requires every weight and shift to lie in
[-1, 1], at most s nonzero parameters in total, and empirical norm
sqrt(mean_j f(X_j)^2) at most F on the observation grid.

The depth/width/sparsity selector scales with the effective sample size
n * N^varrho: depth with its base-2 logarithm, width with its power
1 / (theta + 1), and the sparsity budget with width times depth.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ConfigError, DataFormatError
from .grid import Grid

__all__ = [
    "Architecture",
    "NetworkParams",
    "theory_architecture",
    "practical_architecture",
    "INIT_SCHEMES",
    "init_params",
    "forward",
    "forward_batch",
    "count_nonzero",
    "hard_threshold",
    "clip_unit_interval",
    "project_params",
    "project_sparsity",
    "empirical_norm",
    "class_violations",
    "is_in_class",
    "save_params",
    "load_params",
]

FORWARD_CHUNK = 65_536  # points per forward block, caps activation memory


@dataclass(frozen=True)
class Architecture:
    """Network shape plus optional class constraints.

    ``widths`` lists (p_0, ..., p_{L+1}) including input and output.
    ``sparsity`` (total nonzero budget) and ``f_bound`` (empirical-norm
    cap) are None in unconstrained practical fits.
    """

    n_hidden: int
    widths: tuple
    sparsity: int | None = None
    f_bound: float | None = None

    def __post_init__(self):
        if self.n_hidden < 1:
            raise ConfigError(f"need at least one hidden layer, got {self.n_hidden}")
        if len(self.widths) != self.n_hidden + 2:
            raise ConfigError(
                f"widths needs {self.n_hidden + 2} entries for "
                f"{self.n_hidden} hidden layers, got {len(self.widths)}"
            )
        if any(int(p) < 1 for p in self.widths):
            raise ConfigError(f"all widths must be >= 1, got {self.widths}")
        if self.widths[-1] != 1:
            raise ConfigError(f"output width must be 1, got {self.widths[-1]}")
        object.__setattr__(self, "widths", tuple(int(p) for p in self.widths))
        if self.sparsity is not None and self.sparsity < 1:
            raise ConfigError(f"sparsity must be >= 1, got {self.sparsity}")
        if self.f_bound is not None and not self.f_bound > 0:
            raise ConfigError(f"f_bound must be > 0, got {self.f_bound}")

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        total = 0
        for l in range(self.n_hidden + 1):
            total += self.widths[l + 1] * self.widths[l]
        total += sum(self.widths[1:-1])
        return total


def theory_architecture(n: int, n_points: int, varrho: float = 0.0,
                        theta: float = 1.0, c_depth: float = 1.0,
                        c_width: float = 1.0, c_sparsity: float = 1.0,
                        d: int = 1, f_bound: float | None = None) -> Architecture:
    """Rate-matched architecture for n subjects on an N-point grid.

    With effective sample size M = n * N^varrho:

        depth  L = max(1, ceil(c_depth * log2(M)))
        width  p = ceil(c_width * M^(1 / (theta + 1)))
        budget s = ceil(c_sparsity * M^(1 / (theta + 1)) * L)

    All hidden layers share the width.  The sparsity budget grows with
    depth, so deeper selections keep roughly constant nonzeros per layer.
    """
    if n < 1 or n_points < 1:
        raise ConfigError("n and n_points must be >= 1")
    if theta <= 0:
        raise ConfigError(f"theta must be > 0, got {theta}")
    if varrho < 0:
        raise ConfigError(f"varrho must be >= 0, got {varrho}")
    m_eff = n * float(n_points) ** varrho
    if m_eff <= 1:
        raise ConfigError(f"effective sample size must exceed 1, got {m_eff}")
    depth = max(1, math.ceil(c_depth * math.log2(m_eff)))
    core = m_eff ** (1.0 / (theta + 1.0))
    width = max(1, math.ceil(c_width * core))
    budget = max(1, math.ceil(c_sparsity * core * depth))
    widths = (d,) + (width,) * depth + (1,)
    return Architecture(
        n_hidden=depth, widths=widths, sparsity=budget, f_bound=f_bound
    )


def practical_architecture(n: int, n_points: int, d: int,
                           n_hidden: int = 3, c_width: float = 2.0,
                           varrho: float = 0.0, theta: float = 1.0) -> Architecture:
    """Unconstrained architecture with fixed depth and the theory width rule."""
    if n < 1 or n_points < 1:
        raise ConfigError("n and n_points must be >= 1")
    m_eff = n * float(n_points) ** varrho
    width = max(1, math.ceil(c_width * m_eff ** (1.0 / (theta + 1.0))))
    widths = (d,) + (width,) * n_hidden + (1,)
    return Architecture(n_hidden=n_hidden, widths=widths)


@dataclass(eq=False)
class NetworkParams:
    """Weight matrices W_0..W_L and shift vectors v_1..v_L.

    ``weights[l]`` has shape (p_{l+1}, p_l); ``shifts[l-1]`` has shape
    (p_l,).  Arrays are float64 and C-contiguous.
    """

    weights: list = field(repr=False)
    shifts: list = field(repr=False)

    def __post_init__(self):
        self.weights = [np.ascontiguousarray(w, dtype=float) for w in self.weights]
        self.shifts = [np.ascontiguousarray(v, dtype=float) for v in self.shifts]
        if len(self.weights) != len(self.shifts) + 1:
            raise ConfigError(
                f"{len(self.weights)} weight matrices need "
                f"{len(self.weights) - 1} shift vectors, got {len(self.shifts)}"
            )
        for l, v in enumerate(self.shifts):
            if v.ndim != 1 or v.size != self.weights[l].shape[0]:
                raise ConfigError(
                    f"shift vector {l} has shape {v.shape}, expected "
                    f"({self.weights[l].shape[0]},)"
                )
        for l in range(len(self.weights) - 1):
            if self.weights[l + 1].shape[1] != self.weights[l].shape[0]:
                raise ConfigError(
                    f"weight shapes {self.weights[l].shape} and "
                    f"{self.weights[l + 1].shape} do not chain"
                )
        if self.weights[-1].shape[0] != 1:
            raise ConfigError("output layer must have a single row")

    @property
    def n_hidden(self) -> int:
        return len(self.shifts)

    @property
    def widths(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights) + (1,)

    def all_arrays(self) -> list:
        """Weights then shifts, the canonical flattening order."""
        return list(self.weights) + list(self.shifts)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            weights=[w.copy() for w in self.weights],
            shifts=[v.copy() for v in self.shifts],
        )

    def matches(self, arch: Architecture) -> bool:
        return self.widths == arch.widths


INIT_SCHEMES = ("glorot-uniform", "he-normal")


def init_params(arch: Architecture, rng: np.random.Generator,
                scheme: str = "glorot-uniform",
                constrained: bool = False) -> NetworkParams:
    """Zero-mean fan-scaled weight init, zero shifts.

    ``glorot-uniform`` draws U(-a, a) with a = sqrt(6 / (fan_in +
    fan_out)), the common dense-layer default; ``he-normal`` draws
    N(0, 2/fan_in) on hidden layers and N(0, 1/fan_in) on the readout.
    Constrained init clips weights into [-1, 1].
    """
    if scheme not in INIT_SCHEMES:
        raise ConfigError(
            f"unknown init scheme {scheme!r}; known: {', '.join(INIT_SCHEMES)}"
        )
    weights = []
    for l in range(arch.n_hidden + 1):
        fan_in = arch.widths[l]
        fan_out = arch.widths[l + 1]
        if scheme == "glorot-uniform":
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        else:
            gain = 2.0 if l < arch.n_hidden else 1.0
            w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(gain / fan_in)
        weights.append(w)
    shifts = [np.zeros(arch.widths[l]) for l in range(1, arch.n_hidden + 1)]
    params = NetworkParams(weights=weights, shifts=shifts)
    if constrained:
        clip_unit_interval(params)
    return params


def _as_points(where) -> np.ndarray:
    if isinstance(where, Grid):
        return where.coords()
    pts = np.asarray(where, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2:
        raise ConfigError(f"points must be 2-d, got shape {pts.shape}")
    return pts


def forward(params: NetworkParams, x) -> float:
    """Network value at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.weights[0].shape[1],):
        raise ConfigError(
            f"point must have shape ({params.weights[0].shape[1]},), "
            f"got {x.shape}"
        )
    batch = np.ascontiguousarray(x[None, :])
    return float(_backend.forward(batch, params.weights, params.shifts)[0])


def forward_batch(params: NetworkParams, where, chunk: int = FORWARD_CHUNK) -> np.ndarray:
    """Network values on a Grid or an (n, d) point array, in order."""
    pts = _as_points(where)
    if pts.shape[1] != params.weights[0].shape[1]:
        raise ConfigError(
            f"points have d={pts.shape[1]}, network expects "
            f"{params.weights[0].shape[1]}"
        )
    n = pts.shape[0]
    if n <= chunk:
        block = np.ascontiguousarray(pts)
        return _backend.forward(block, params.weights, params.shifts)
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = np.ascontiguousarray(pts[start:stop])
        out[start:stop] = _backend.forward(block, params.weights, params.shifts)
    return out


def count_nonzero(params: NetworkParams, threshold: float = 0.0) -> int:
    """Number of parameters with magnitude strictly above the threshold."""
    total = 0
    for arr in params.all_arrays():
        total += int(np.count_nonzero(np.abs(arr) > threshold))
    return total


def hard_threshold(params: NetworkParams, threshold: float) -> int:
    """Zero all parameters with magnitude at most ``threshold``, in place.

    Returns the number of entries zeroed.
    """
    if threshold < 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")
    zeroed = 0
    for arr in params.all_arrays():
        mask = np.abs(arr) <= threshold
        mask &= arr != 0.0
        zeroed += int(np.count_nonzero(mask))
        arr[mask] = 0.0
    return zeroed


def clip_unit_interval(params: NetworkParams) -> None:
    """Clamp every parameter into [-1, 1], in place."""
    for arr in params.all_arrays():
        np.clip(arr, -1.0, 1.0, out=arr)


def project_params(params: NetworkParams) -> NetworkParams:
    """Return a copy with every parameter clamped to [-1, 1].

    Idempotent: applying it twice gives the same arrays as once.
    """
    out = params.copy()
    clip_unit_interval(out)
    return out


def project_sparsity(params: NetworkParams, budget: int) -> int:
    """Keep the ``budget`` largest-magnitude parameters, zero the rest.

    In-place; ties break by position in the canonical flattening order
    (stable sort), so the result is deterministic.  Returns the number
    of entries zeroed.
    """
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    arrays = params.all_arrays()
    flat = np.concatenate([a.ravel() for a in arrays])
    nz = int(np.count_nonzero(flat))
    if nz <= budget:
        return 0
    order = np.argsort(-np.abs(flat), kind="stable")
    kill = order[budget:]
    flat[kill] = 0.0
    pos = 0
    zeroed = 0
    for a in arrays:
        block = flat[pos:pos + a.size].reshape(a.shape)
        zeroed += int(np.count_nonzero((a != 0) & (block == 0)))
        a[...] = block
        pos += a.size
    return zeroed


def empirical_norm(params: NetworkParams, grid: Grid) -> float:
    """Root mean square of network values over the grid."""
    vals = forward_batch(params, grid)
    return float(np.sqrt(np.mean(vals * vals)))


def class_violations(params: NetworkParams, arch: Architecture,
                     grid: Grid | None = None, tol: float = 1e-12) -> list:
    """Human-readable reasons the parameters fall outside the class."""
    reasons = []
    if not params.matches(arch):
        reasons.append(
            f"widths {params.widths} do not match architecture {arch.widths}"
        )
        return reasons
    worst = max(float(np.max(np.abs(a))) if a.size else 0.0
                for a in params.all_arrays())
    if worst > 1.0 + tol:
        reasons.append(f"parameter magnitude {worst:.6g} exceeds 1")
    if arch.sparsity is not None:
        nz = count_nonzero(params)
        if nz > arch.sparsity:
            reasons.append(
                f"{nz} nonzero parameters exceed the budget {arch.sparsity}"
            )
    if arch.f_bound is not None:
        if grid is None:
            reasons.append("empirical norm bound set but no grid supplied")
        else:
            norm = empirical_norm(params, grid)
            if norm > arch.f_bound + tol:
                reasons.append(
                    f"empirical norm {norm:.6g} exceeds bound {arch.f_bound:.6g}"
                )
    return reasons


def is_in_class(params: NetworkParams, arch: Architecture,
                grid: Grid | None = None, tol: float = 1e-12) -> bool:
    """Whether the parameters satisfy every constraint the architecture set."""
    return not class_violations(params, arch, grid, tol)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"FMNP"
_VERSION = 1


def save_params(path, params: NetworkParams, arch: Architecture | None = None) -> None:
    """Write parameters to a versioned little-endian binary record.

    Header: magic, version, hidden-layer count, widths, a flags byte
    (bit 0: sparsity budget present, bit 1: norm bound present), the
    budget and the bound.  Payload: weight matrices then shift vectors,
    row-major float64.
    """
    if arch is not None and not params.matches(arch):
        raise ConfigError("parameters do not match the declared architecture")
    widths = params.widths
    flags = 0
    sparsity = 0
    f_bound = float("nan")
    if arch is not None and arch.sparsity is not None:
        flags |= 1
        sparsity = int(arch.sparsity)
    if arch is not None and arch.f_bound is not None:
        flags |= 2
        f_bound = float(arch.f_bound)
    header = struct.pack("<4sII", _MAGIC, _VERSION, params.n_hidden)
    header += struct.pack(f"<{len(widths)}I", *widths)
    header += struct.pack("<BQd", flags, sparsity, f_bound)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in params.all_arrays():
            fh.write(arr.astype("<f8").tobytes())


def load_params(path):
    """Read a parameter record; returns (params, architecture)."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12:
            raise DataFormatError(f"{path}: truncated header")
        magic, version, n_hidden = struct.unpack("<4sII", head)
        if magic != _MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        n_widths = n_hidden + 2
        raw = fh.read(4 * n_widths)
        if len(raw) != 4 * n_widths:
            raise DataFormatError(f"{path}: truncated width table")
        widths = struct.unpack(f"<{n_widths}I", raw)
        raw = fh.read(17)
        if len(raw) != 17:
            raise DataFormatError(f"{path}: truncated constraint block")
        flags, sparsity, f_bound = struct.unpack("<BQd", raw)
        arch = Architecture(
            n_hidden=n_hidden,
            widths=widths,
            sparsity=int(sparsity) if flags & 1 else None,
            f_bound=float(f_bound) if flags & 2 else None,
        )
        weights = []
        shifts = []
        for l in range(n_hidden + 1):
            shape = (widths[l + 1], widths[l])
            weights.append(_read_array(fh, shape, path))
        for l in range(1, n_hidden + 1):
            shifts.append(_read_array(fh, (widths[l],), path))
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"{path}: trailing bytes after payload")
    return NetworkParams(weights=weights, shifts=shifts), arch


def _read_array(fh, shape, path):
    count = int(np.prod(shape))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise DataFormatError(
            f"{path}: truncated payload, wanted {8 * count} bytes "
            f"for shape {shape}, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
