"""Minibatch training of shifted-ReLU networks on averaged curves.

The objective is the mean squared error over grid points of the fitted
surface against the across-subject average curve, plus an L1 penalty on
all weights and shifts.  Optimization is Adam on shuffled minibatches;
shuffling, initialization and therefore the entire run are determined
by the config seed.  Constrained mode additionally clamps parameters
into [-1, 1] after every step and finishes by projecting onto the
sparsity budget, so the returned network lies in the stated class.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .errors import ConfigError, TrainingDiverged
from .grid import Grid
from .network import (
    Architecture,
    NetworkParams,
    clip_unit_interval,
    count_nonzero,
    empirical_norm,
    hard_threshold,
    init_params,
    project_sparsity,
)
from .simulate import FunctionalDataset

__all__ = ["TrainConfig", "TrainReport", "objective", "gradients",
           "AdamState", "adam_step", "fit", "fit_targets",
           "write_report_csv"]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one fit.  Defaults suit the 2-d study designs."""

    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l1_coeff: float = 1e-5
    constrained: bool = False
    zero_threshold: float = 1e-4
    seed: int = 0
    divergence_factor: float = 1e6
    optimizer: str = "adam"  # "sgd" is a plain-step debug option
    init_scheme: str = "glorot-uniform"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.l1_coeff < 0:
            raise ConfigError(f"l1_coeff must be >= 0, got {self.l1_coeff}")
        if self.zero_threshold < 0:
            raise ConfigError(f"zero_threshold must be >= 0, got {self.zero_threshold}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if not self.divergence_factor > 1:
            raise ConfigError("divergence_factor must exceed 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(
                f"optimizer must be adam or sgd, got {self.optimizer!r}"
            )


@dataclass
class TrainReport:
    """Loss history and summary of one fit."""

    architecture: Architecture
    config: TrainConfig
    data_loss: list = field(default_factory=list)  # one entry per epoch
    l1_loss: list = field(default_factory=list)
    final_data_loss: float = float("nan")
    nonzero: int = 0
    empirical_norm: float = float("nan")
    seconds: float = 0.0


def objective(params: NetworkParams, targets: np.ndarray, where,
              l1_coeff: float) -> float:
    """Mean squared error over the grid (or point array) plus the L1 penalty."""
    points = where.coords() if isinstance(where, Grid) else np.asarray(where, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if points.shape[0] != targets.shape[0]:
        raise ConfigError(
            f"{targets.shape[0]} targets for {points.shape[0]} points"
        )
    pred = _backend.forward(
        np.ascontiguousarray(points), params.weights, params.shifts
    )
    resid = pred - targets
    penalty = l1_coeff * sum(
        float(np.sum(np.abs(a))) for a in params.all_arrays()
    )
    return float(np.mean(resid * resid)) + penalty


def gradients(params: NetworkParams, points: np.ndarray, targets: np.ndarray,
              l1_coeff: float):
    """Gradient lists (weights, shifts) of `objective` on one batch.

    The L1 term uses the sign subgradient with sign(0) = 0; the ReLU
    uses the strict-activation mask, so both match the forward pass.
    """
    x = np.ascontiguousarray(points)
    pred, hiddens = _backend.forward_hidden(x, params.weights, params.shifts)
    batch = x.shape[0]
    dy = (2.0 / batch) * (pred - targets)
    d_weights, d_shifts = _backend.backward(
        x, params.weights, params.shifts, hiddens, dy
    )
    if l1_coeff > 0:
        for a, g in zip(params.weights, d_weights):
            g += l1_coeff * np.sign(a)
        for a, g in zip(params.shifts, d_shifts):
            g += l1_coeff * np.sign(a)
    return d_weights, d_shifts


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        arrays = params.all_arrays()
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            t=0,
        )


def adam_step(params: NetworkParams, grads, state: AdamState,
              config: TrainConfig) -> AdamState:
    """Apply one Adam update in place; returns the advanced state."""
    d_weights, d_shifts = grads
    state.t += 1
    _backend.adam_step(
        params.all_arrays(),
        list(d_weights) + list(d_shifts),
        state.m,
        state.v,
        state.t,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.eps,
    )
    return state


def fit_targets(targets: np.ndarray, grid: Grid, arch: Architecture,
                config: TrainConfig, epoch_callback=None):
    """Fit a network to a target curve given in grid linear order.

    Returns (params, report).  Raises TrainingDiverged (report attached)
    when the objective exceeds divergence_factor times its initial
    value.  When the architecture carries a sparsity budget or norm
    bound the fit runs in constrained mode regardless of the config
    flag; a missing norm bound is resolved to max(1, 2 max |target|)
    and echoed through the report's architecture.  ``epoch_callback``,
    when given, is called as callback(epoch, params) after each epoch.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (grid.n_points,):
        raise ConfigError(
            f"targets shape {targets.shape} does not match grid with "
            f"{grid.n_points} points"
        )
    if arch.d != grid.d:
        raise ConfigError(
            f"network expects {arch.d}-dimensional inputs, grid is {grid.d}-dimensional"
        )
    constrained = config.constrained or arch.sparsity is not None
    if constrained and arch.f_bound is None:
        arch = replace(
            arch, f_bound=max(1.0, 2.0 * float(np.max(np.abs(targets))))
        )
    start = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed])))
    params = init_params(arch, rng, scheme=config.init_scheme,
                         constrained=constrained)
    state = AdamState.zeros_like(params)
    points = grid.coords()
    x_all = np.ascontiguousarray(points)
    n_points = grid.n_points
    batch = min(config.batch_size, n_points)
    report = TrainReport(architecture=arch, config=config)
    initial = objective(params, targets, x_all, config.l1_coeff)
    guard = config.divergence_factor * max(initial, 1e-12)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n_points)
        for lo in range(0, n_points, batch):
            idx = perm[lo:lo + batch]
            xb = np.ascontiguousarray(points[idx])
            yb = targets[idx]
            grads = gradients(params, xb, yb, config.l1_coeff)
            if config.optimizer == "sgd":
                for arr, g in zip(params.all_arrays(),
                                  list(grads[0]) + list(grads[1])):
                    arr -= config.learning_rate * g
            else:
                adam_step(params, grads, state, config)
            if constrained:
                clip_unit_interval(params)
        epoch_obj = objective(params, targets, x_all, config.l1_coeff)
        penalty = config.l1_coeff * sum(
            float(np.sum(np.abs(a))) for a in params.all_arrays()
        )
        report.data_loss.append(epoch_obj - penalty)
        report.l1_loss.append(penalty)
        if not np.isfinite(epoch_obj) or epoch_obj > guard:
            report.seconds = time.perf_counter() - start
            raise TrainingDiverged(
                f"objective {epoch_obj:.6e} exceeded the divergence guard "
                f"{guard:.6e}",
                report=report,
            )
        if epoch_callback is not None:
            epoch_callback(epoch, params)
    hard_threshold(params, config.zero_threshold)
    if constrained and arch.sparsity is not None:
        project_sparsity(params, arch.sparsity)
    report.final_data_loss = objective(params, targets, x_all, 0.0)
    report.nonzero = count_nonzero(params)
    report.empirical_norm = empirical_norm(params, grid)
    report.seconds = time.perf_counter() - start
    return params, report


def fit(dataset: FunctionalDataset, arch: Architecture, config: TrainConfig,
        epoch_callback=None):
    """Fit to the across-subject average curve of a dataset."""
    return fit_targets(dataset.pointwise_mean(), dataset.grid, arch, config,
                       epoch_callback=epoch_callback)


def write_report_csv(report: TrainReport, path) -> None:
    """Per-epoch loss table with the architecture echoed in comments."""
    arch = report.architecture
    with open(path, "w", newline="") as fh:
        fh.write(f"# widths={','.join(str(w) for w in arch.widths)}\n")
        fh.write(f"# sparsity={arch.sparsity} f_bound={arch.f_bound}\n")
        fh.write(
            f"# epochs={report.config.epochs} batch={report.config.batch_size} "
            f"lr={report.config.learning_rate!r} l1={report.config.l1_coeff!r} "
            f"seed={report.config.seed}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["epoch", "data_loss", "l1_loss"])
        for e, (dl, pl) in enumerate(zip(report.data_loss, report.l1_loss), 1):
            writer.writerow([e, repr(dl), repr(pl)])
        fh.write(
            f"# final_data_loss={report.final_data_loss!r} "
            f"nonzero={report.nonzero} "
            f"empirical_norm={report.empirical_norm!r} "
            f"seconds={report.seconds:.3f}\n"
        )
