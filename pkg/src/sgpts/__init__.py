"""Batch Thompson sampling on sparse variational GP surrogates."""

from .benchmarks import BENCHMARKS, Benchmark, NoiseModel, certify, get_benchmark, random_search
from .engine import (
    RunConfig,
    RunLog,
    believed_best,
    growth_exponents,
    growth_schedule,
    parse_config,
    regret_bound,
    resolve_config,
    run_sgp_ts,
    schedule_alpha,
    strict_regret,
)
from .errors import (
    ConfigError,
    ExplorationInfeasibleError,
    InvalidInputError,
    NumericalDegeneracyError,
    ScheduleUndefinedError,
    UnsupportedDecompositionError,
)
from .exact_gp import (
    Dataset,
    ExactPosterior,
    batch_sigma_bound,
    concentration_radius,
    fit_exact,
    gamma_bound,
    information_gain,
)
from .kernels import (
    FeatureMap,
    KernelSpec,
    eval_kernel,
    kernel_matrix,
    mercer_truncate,
    rff_sample,
    tail_mass,
)
from .sampling import (
    Discretization,
    SampleFunction,
    build_grid,
    decoupled_mean_cov,
    derive_seed,
    draw_sample,
    select_batch,
)
from .svgp import (
    ApproxQuality,
    SvgpModel,
    approximation_constants,
    elbo,
    fit_svgp_closed_form,
    kl_to_exact,
    load_snapshot,
    precision_sup_norm,
    select_inducing_greedy,
    select_inducing_kmeans,
    trace_residual,
    write_snapshot,
)
from .verify import CheckResult, format_results, run_checks

__all__ = [
    "ApproxQuality",
    "BENCHMARKS",
    "Benchmark",
    "CheckResult",
    "ConfigError",
    "Dataset",
    "Discretization",
    "ExactPosterior",
    "ExplorationInfeasibleError",
    "FeatureMap",
    "InvalidInputError",
    "KernelSpec",
    "NoiseModel",
    "NumericalDegeneracyError",
    "RunConfig",
    "RunLog",
    "SampleFunction",
    "ScheduleUndefinedError",
    "SvgpModel",
    "UnsupportedDecompositionError",
    "approximation_constants",
    "batch_sigma_bound",
    "believed_best",
    "build_grid",
    "certify",
    "concentration_radius",
    "decoupled_mean_cov",
    "derive_seed",
    "draw_sample",
    "elbo",
    "eval_kernel",
    "fit_exact",
    "fit_svgp_closed_form",
    "format_results",
    "gamma_bound",
    "get_benchmark",
    "growth_exponents",
    "growth_schedule",
    "information_gain",
    "kernel_matrix",
    "kl_to_exact",
    "load_snapshot",
    "mercer_truncate",
    "parse_config",
    "precision_sup_norm",
    "random_search",
    "regret_bound",
    "resolve_config",
    "rff_sample",
    "run_checks",
    "run_sgp_ts",
    "schedule_alpha",
    "select_batch",
    "select_inducing_greedy",
    "select_inducing_kmeans",
    "strict_regret",
    "tail_mass",
    "trace_residual",
    "write_snapshot",
]

__version__ = "0.1.0"
