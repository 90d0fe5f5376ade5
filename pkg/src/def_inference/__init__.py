"""Conditional independence tests and confidence intervals that stay valid
when either the response model or the exposure model is correctly specified.
"""

from .ci_inversion import Interval, confidence_interval, debiased_interval, wbeta_region, wbeta_test
from .def_high_dim import WeightSpec, t_db, t_def, t_glm_def, t_w_def
from .glm import fit_glm, t_glm
from .model_core import (
    BINOMIAL,
    GAUSSIAN,
    POISSON,
    ConvergenceError,
    Dataset,
    DefError,
    NumericalError,
    Rng,
    TestResult,
    ValidationError,
    load_dataset,
)
from .ols import t_ols, t_ols_exact
from .sqrt_lasso import default_lambda, quantile_lambda, solve_sqrt_lasso

__version__ = "0.1.0"

__all__ = [
    "BINOMIAL",
    "GAUSSIAN",
    "POISSON",
    "ConvergenceError",
    "Dataset",
    "DefError",
    "Interval",
    "NumericalError",
    "Rng",
    "TestResult",
    "ValidationError",
    "WeightSpec",
    "confidence_interval",
    "debiased_interval",
    "default_lambda",
    "fit_glm",
    "load_dataset",
    "quantile_lambda",
    "solve_sqrt_lasso",
    "t_db",
    "t_def",
    "t_glm",
    "t_glm_def",
    "t_ols",
    "t_ols_exact",
    "t_w_def",
    "wbeta_region",
    "wbeta_test",
]
