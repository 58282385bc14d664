"""Differentially private, gradient-informative local Bayesian optimization."""

from .acquisition import AcquisitionConfig, BatchProposal, acquisition_value, minimize_batch, select_minimal_batch
from .gp_gradient import (
    EvaluationSet,
    GradientPosterior,
    aggregate_mean_gradient,
    gradient_posterior,
    posterior_gradient_covariance,
    posterior_gradient_means,
)
from .kernels import Kernel, KernelFamily, kernel_cross_hessian, kernel_eval, kernel_grad_first, matern, polynomial2, rbf
from .linalg import GramFactorization, IllConditionedGramError, gram_factorize
from .optimizer import OptimizerConfig, RunRecord, StepRule, dp_gibo_run, step_update
from .privacy import (
    BudgetExhaustedError,
    NoisyGradient,
    PrivacyBudget,
    clip,
    clip_aggregate,
    gaussian_mechanism_scale,
    gdp_compose,
    max_noise_envelope,
    privatize_gradient,
)
from .problems import (
    Problem,
    SyntheticGPDraw,
    dp_gd_baseline,
    gp_lengthscale_tuning_problem,
    huber_regression_problem,
    noisy_wrapper,
    normal_location_problem,
    random_search_baseline,
    svm_surrogate_problem,
)

__version__ = "0.1.0"
