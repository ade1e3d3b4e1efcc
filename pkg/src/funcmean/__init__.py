"""Mean-surface estimation for functional data observed on regular grids.

The package simulates subject curves Y_ij = f0(X_j) + eta_i(X_j) + eps_ij
on tensor-product grids, studies the spectra of the induced covariance
matrices, and estimates f0 by fitting sparse shifted-ReLU networks to
the across-subject average curve.
"""

from ._backend import BACKEND_NAME
from .errors import ConfigError, DataFormatError, NumericalError, TrainingDiverged
from .grid import Grid, build_grid
from .spectrum import (
    BernoulliKernel,
    CosineKernel,
    DecayFit,
    GridKernel,
    KernelMatrix,
    SpectralKernel,
    SpectrumReport,
    assemble_axis_term,
    bernoulli_axis_row,
    bernoulli_eigenvalues,
    circulant_eigenvalues,
    decay_sweep,
    estimate_decay_rate,
    kernel_matrix,
    kernel_value,
    kronecker_max_eigenvalue,
    max_eigenvalue,
)
from .simulate import (
    MEAN_NAMES,
    CompositionSpec,
    FunctionalDataset,
    GaussianProcessSampler,
    MeanFunction,
    NoiseSpec,
    additive_mean,
    composition_mean,
    effective_smoothness,
    mean_function,
    sample_eta,
    simulate_dataset,
    subject_rng,
)
from .network import (
    Architecture,
    NetworkParams,
    class_violations,
    clip_unit_interval,
    count_nonzero,
    empirical_norm,
    forward,
    forward_batch,
    hard_threshold,
    init_params,
    is_in_class,
    load_params,
    practical_architecture,
    project_params,
    project_sparsity,
    save_params,
    theory_architecture,
)
from .train import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    fit,
    fit_targets,
    gradients,
    objective,
    write_report_csv,
)
from .evaluate import (
    ExperimentPreset,
    FailedReplication,
    RiskRecord,
    StudyResult,
    aggregate,
    baseline_tensor_poly,
    empirical_l2_risk,
    get_preset,
    rate_diagnostic,
    run_replications,
    single_run,
)
from .dataio import export_pgm, ingest_raw, read_dataset, write_dataset

__version__ = "0.1.0"
