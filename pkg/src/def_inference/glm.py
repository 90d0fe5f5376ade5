"""GLM fitting by IRLS, sandwich variances and the corrected Wald test.

The corrected test rescales the inverse Fisher information entry for the
exposure by ``-sum U^2 / sum U'``.  When ``x`` given ``z`` follows a
homoscedastic linear model this equals the (1, 1) entry of the full
sandwich ``H^-1 V H^-1`` in the limit, so the Wald test keeps its level
even if the response model is wrong.  The homoscedasticity requirement
cannot be checked from a single dataset and is not validated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model_core import (
    ConvergenceError,
    Dataset,
    GlmFamily,
    NumericalError,
    TestResult,
    ValidationError,
    normal_pvalue,
)
from .ols import fit_ols

MAX_ITER = 100
MAX_HALVINGS = 10
SEPARATION_BOUND = 30.0


class SeparationError(NumericalError):
    pass


class SingularHessianError(NumericalError):
    pass


class DegenerateCurvatureError(NumericalError):
    pass


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    eta: np.ndarray
    family: GlmFamily
    score_norm: float
    iterations: int
    converged: bool
    response: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)
    clamped: int = 0

    @property
    def n(self) -> int:
        return self.eta.shape[0]


@dataclass(frozen=True)
class SandwichParts:
    H: np.ndarray
    V: np.ndarray
    corrected_var_11: float


def _score_tolerance(y: np.ndarray, d: np.ndarray) -> float:
    n = y.shape[0]
    scale = max(1.0, float(np.max(np.abs(y))) if n else 1.0) * max(1.0, float(np.max(np.abs(d))) if d.size else 1.0)
    return 1e-8 * n * scale


def _initial(y: np.ndarray, d: np.ndarray, family: GlmFamily) -> np.ndarray:
    k = d.shape[1]
    if family.tag == "gaussian-identity":
        return fit_ols(y, d).coefficients
    if family.tag == "poisson-log":
        return fit_ols(np.log(y + 0.5), d).coefficients
    return np.zeros(k)


def fit_glm(response: np.ndarray, design: np.ndarray, family: GlmFamily, max_iter: int = MAX_ITER) -> GlmFit:
    """Maximum likelihood by Newton/IRLS with step halving on the log-likelihood."""
    y = np.asarray(response, dtype=float)
    d = np.asarray(design, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    n, k = d.shape
    if y.shape != (n,):
        raise ValidationError("response and design row counts differ")
    if n <= k:
        raise ValidationError(f"need more rows than columns (n={n}, columns={k})")
    family.check_support(y)
    fit_ols(np.zeros(n), d)  # rank check

    beta = _initial(y, d, family)
    eta = d @ beta
    ll = family.loglik(eta, y)
    trace = [ll]
    tol = _score_tolerance(y, d)
    score = d.T @ family.score(eta, y)
    snorm = float(np.max(np.abs(score))) if k else 0.0
    for it in range(1, max_iter + 1):
        w = -family.score_derivative(eta, y)
        hess = d.T @ (d * w[:, None])
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            raise SingularHessianError("information matrix is singular during IRLS") from None
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            eta_c = d @ cand
            ll_c = family.loglik(eta_c, y)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the log-likelihood", beta)
        rel_step = float(np.max(np.abs(cand - beta))) / max(1.0, float(np.max(np.abs(cand))))
        beta, eta, ll = cand, eta_c, max(ll_c, ll)
        trace.append(ll_c)
        if family.tag == "binomial-logit" and np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError("coefficients diverging: response looks separable")
        score = d.T @ family.score(eta, y)
        snorm = float(np.max(np.abs(score)))
        if snorm <= 1e-3 * tol or (rel_step < 1e-12 and snorm <= tol):
            clamped = 0 if family.clip is None else int(np.sum(np.abs(eta) > family.clip))
            return GlmFit(beta, eta, family, snorm, it, True, y, d, tuple(trace), clamped)
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", beta)


def sandwich(fit: GlmFit, design: np.ndarray | None = None, response: np.ndarray | None = None) -> SandwichParts:
    """Empirical H = -mean(d d' U'), V = mean(d d' U^2) and (H^-1 V H^-1)_11 / n."""
    d = fit.design if design is None else np.asarray(design, dtype=float)
    y = fit.response if response is None else np.asarray(response, dtype=float)
    if not fit.converged:
        raise ValidationError("sandwich requires a converged fit")
    n = d.shape[0]
    u = fit.family.score(fit.eta, y)
    du = fit.family.score_derivative(fit.eta, y)
    V = (d * (u * u)[:, None]).T @ d / n
    H = -(d * du[:, None]).T @ d / n
    V = 0.5 * (V + V.T)
    H = 0.5 * (H + H.T)
    try:
        hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise SingularHessianError("empirical Hessian is singular") from None
    cov = hinv @ V @ hinv
    return SandwichParts(H, V, float(cov[0, 0]) / n)


def correction_factor(fit: GlmFit, mode: str = "full") -> float:
    """``-sum U^2 / sum U'`` at the full linear predictor or at ``Z beta`` only."""
    if mode == "full":
        eta = fit.eta
    elif mode == "z-only":
        eta = fit.eta - fit.coefficients[0] * fit.design[:, 0]
    else:
        raise ValidationError(f"unknown correction mode '{mode}'")
    y = fit.response
    u = fit.family.score(eta, y)
    den = float(np.sum(fit.family.score_derivative(eta, y)))
    if den == 0.0:
        raise DegenerateCurvatureError("sum of U' is zero")
    return -float(np.sum(u * u)) / den


def pearson_dispersion(fit: GlmFit) -> float:
    mu = fit.family.mean(fit.family.clamp(fit.eta))
    v = fit.family.variance(mu)
    n, k = fit.design.shape
    return float(np.sum((fit.response - mu) ** 2 / v)) / (n - k)


def t_glm(ds: Dataset, family: GlmFamily, mode: str = "full") -> TestResult:
    """Corrected Wald test for the exposure coefficient of a GLM of y on (x, z)."""
    fit = fit_glm(ds.y, np.column_stack([ds.x, ds.z]), family)
    parts = sandwich(fit)
    theta = float(fit.coefficients[0])
    n = ds.n
    hinv11 = float(np.linalg.inv(parts.H)[0, 0])
    cf = correction_factor(fit, mode)
    var = hinv11 * cf / n
    if not var > 0:
        raise DegenerateCurvatureError("corrected variance is not positive")
    stat = theta / np.sqrt(var)
    naive = theta / np.sqrt(hinv11 / n)
    disp = pearson_dispersion(fit)
    quasi = naive / np.sqrt(disp)
    full = theta / np.sqrt(parts.corrected_var_11)
    diag = {
        "theta_hat": theta,
        "correction_factor": cf,
        "correction_mode": mode,
        "naive_statistic": float(naive),
        "naive_p_value": normal_pvalue(naive),
        "quasi_statistic": float(quasi),
        "quasi_p_value": normal_pvalue(quasi),
        "dispersion": disp,
        "sandwich_statistic": float(full),
        "sandwich_p_value": normal_pvalue(full),
        "iterations": fit.iterations,
        "score_norm": fit.score_norm,
        "clamped": fit.clamped,
        "family": family.tag,
    }
    return TestResult(float(stat), normal_pvalue(stat), "t-glm", diag)


def deviance(family: GlmFamily, y: np.ndarray, eta: np.ndarray) -> float:
    """Twice the log-likelihood gap to the saturated model."""
    eta = family.clamp(np.asarray(eta, dtype=float))
    mu = family.mean(eta)
    if family.tag == "gaussian-identity":
        return float(np.sum((y - mu) ** 2))
    if family.tag == "binomial-logit":
        return -2.0 * family.loglik(eta, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return 2.0 * float(np.sum(term - (y - mu)))
