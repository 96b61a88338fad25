"""Rough-volatility drivers and weak convergence of the left-point Euler scheme."""

from .experiments import (
    RateFit,
    RunConfig,
    WeakErrorReport,
    emit_report,
    fit_rate,
    read_report,
    weak_error_curve,
)
from .kernels_cov import (
    CovBlocks,
    HurstParams,
    NotPSDError,
    PsdFactor,
    TimeGrid,
    build_joint_covariance,
    cov_fbm_bm,
    cov_fbm_fbm,
    psd_factor,
    rl_kernel,
)
from .markovian import (
    QuadratureGrid,
    build_theta_grid,
    l2_error,
    ou_cov,
    sample_extended,
    surrogate_fbm,
    tail_variance_bound,
)
from .path_sampler import PathBatch, empirical_moments, sample_joint_paths, subsample
from .payoffs import Payoff, black_scholes_call, romano_touzi_price
from .schemes import (
    EulerResult,
    PsiSpec,
    discrete_second_moment,
    euler_left_point,
    exact_second_moment,
    reference_solution,
)

__version__ = "0.1.0"
