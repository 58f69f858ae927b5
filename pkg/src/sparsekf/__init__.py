"""Sparsity-based Kalman filters with a Lorenz-96 twin-experiment harness."""

from .sparse_core import (
    FactorizationError,
    SparseColumns,
    SparseSymMatrix,
    SparseVector,
    SparsityPattern,
    incomplete_cholesky,
    merge,
    min_eigenvalue,
    restricted_outer_accumulate,
    restricted_product,
)
from .models import (
    ComponentModel,
    Lorenz96Model,
    ObservationOperator,
    StencilError,
    lorenz96_rhs,
    rk4_step,
)
from .filters import (
    CycleDiagnostics,
    DenseUkfParams,
    EnkfParams,
    FilterState,
    ProgressiveParams,
    UkfParams,
    dense_ukf_cycle,
    enkf_cycle,
    gaspari_cohn,
    progressive_ekf_cycle,
    sparse_ukf_cycle,
    ukf_weights,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    ReplicateResult,
    RunSummary,
    SummaryStats,
    generate_truth,
    rmse,
    run_experiment,
    run_replicate,
    summarize,
    synthesize_observations,
    write_runs_csv,
    write_summary_csv,
)

__version__ = "0.1.0"

__all__ = [
    "FactorizationError",
    "SparseColumns",
    "SparseSymMatrix",
    "SparseVector",
    "SparsityPattern",
    "incomplete_cholesky",
    "merge",
    "min_eigenvalue",
    "restricted_outer_accumulate",
    "restricted_product",
    "ComponentModel",
    "Lorenz96Model",
    "ObservationOperator",
    "StencilError",
    "lorenz96_rhs",
    "rk4_step",
    "CycleDiagnostics",
    "DenseUkfParams",
    "EnkfParams",
    "FilterState",
    "ProgressiveParams",
    "UkfParams",
    "dense_ukf_cycle",
    "enkf_cycle",
    "gaspari_cohn",
    "progressive_ekf_cycle",
    "sparse_ukf_cycle",
    "ukf_weights",
    "ConfigError",
    "ExperimentConfig",
    "ReplicateResult",
    "RunSummary",
    "SummaryStats",
    "generate_truth",
    "rmse",
    "run_experiment",
    "run_replicate",
    "summarize",
    "synthesize_observations",
    "write_runs_csv",
    "write_summary_csv",
]
