"""High-dimensional DEF statistics.

``t_def`` is the regularised partial correlation between the square-root
Lasso residuals of ``y`` on ``z`` and of ``x`` on ``z``; it is symmetric in
``x`` and ``y`` and needs only one of the two regressions to be a sparse
linear model.  ``t_db`` is the debiased-Lasso statistic built from the
regression of ``y`` on ``(x, z)``, kept as a baseline.  ``t_w_def``
handles known heteroscedastic weights through two extra augmented
regressions, and ``t_glm_def`` reduces GLM models to that case through
adjusted responses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .glm import GlmFit, deviance
from .model_core import (
    ConvergenceError,
    Dataset,
    GlmFamily,
    NumericalError,
    TestResult,
    ValidationError,
    normal_pvalue,
    standardize_columns,
)
from .sqrt_lasso import (
    LassoFit,
    default_lambda,
    solve_augmented,
    solve_lasso,
    solve_sqrt_lasso,
)

GLM_MAX_ITER = 100
MU_PRIME_FLOOR = 1e-10


class AdjustedResponseError(NumericalError):
    pass


@dataclass(frozen=True)
class WeightSpec:
    """Diagonals of the known weighting matrices for the y- and x-models."""

    d_y: np.ndarray
    d_x: np.ndarray

    def __post_init__(self) -> None:
        for name in ("d_y", "d_x"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or not np.all(np.isfinite(v)) or not np.all(v > 0):
                raise ValidationError(f"{name} must be a vector of strictly positive finite weights")
            object.__setattr__(self, name, v)

    @classmethod
    def unit(cls, n: int) -> WeightSpec:
        return cls(np.ones(n), np.ones(n))


@dataclass(frozen=True)
class DefDiagnostics:
    lambda_x: float
    lambda_y: float
    kkt_slack_x: float
    kkt_slack_y: float
    sigma_hat_x: float
    sigma_hat_y: float
    degenerate: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def correlation_statistic(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """``sqrt(n) a'b / (|a| |b|)``, or ``(0, True)`` when a norm vanishes."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return math.sqrt(a.shape[0]) * float(a @ b) / (na * nb), False


def _lam(value: float | None, n: int, p: int) -> float:
    return default_lambda(n, max(p, 2)) if value is None else float(value)


def _slack(fit: LassoFit) -> float:
    return float("nan") if fit.degenerate else fit.kkt_slack


@dataclass(frozen=True)
class DefFits:
    """Intermediate square-root Lasso fits behind a DEF statistic."""

    fit_y: LassoFit
    fit_x: LassoFit
    z_scaled: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)


def scaled_controls(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if z.shape[1] == 0:
        return z, np.ones(0)
    return standardize_columns(z)


def def_fits(
    ds: Dataset,
    lambda_x: float,
    lambda_y: float,
    warm_y: np.ndarray | None = None,
    warm_x: np.ndarray | None = None,
    z_scaled: tuple[np.ndarray, np.ndarray] | None = None,
) -> DefFits:
    zs, scale = scaled_controls(ds.z) if z_scaled is None else z_scaled
    fy = solve_sqrt_lasso(ds.y, zs, lambda_y, warm_y)
    fx = solve_sqrt_lasso(ds.x, zs, lambda_x, warm_x)
    return DefFits(fy, fx, zs, scale)


def _def_result(fits: DefFits, method: str, extra: dict | None = None) -> TestResult:
    stat, degen = correlation_statistic(fits.fit_y.residuals, fits.fit_x.residuals)
    degen = degen or fits.fit_y.degenerate or fits.fit_x.degenerate
    if degen:
        stat = 0.0
    diag = DefDiagnostics(
        fits.fit_x.lam,
        fits.fit_y.lam,
        _slack(fits.fit_x),
        _slack(fits.fit_y),
        fits.fit_x.sigma_hat,
        fits.fit_y.sigma_hat,
        degen,
    ).to_dict()
    if extra:
        diag.update(extra)
    return TestResult(stat, normal_pvalue(stat), method, diag)


def t_def(ds: Dataset, lambda_x: float | None = None, lambda_y: float | None = None) -> TestResult:
    """DEF test of x independent of y given z (both regressions on z alone)."""
    if ds.n < 2:
        raise ValidationError("t_def needs at least two observations")
    lx, ly = _lam(lambda_x, ds.n, ds.p), _lam(lambda_y, ds.n, ds.p)
    return _def_result(def_fits(ds, lx, ly), "t-def")


def db_fits(
    ds: Dataset, lambda_x: float, lambda_y: float, z_scaled=None, penalize_exposure: bool = False
) -> tuple[LassoFit, LassoFit, np.ndarray]:
    """Fit of y on (x, z) and the x-on-z fit.

    By default the exposure coefficient is unpenalised.  With
    ``penalize_exposure`` x is rescaled to unit mean square and penalised
    like the controls; the returned first coefficient is always on the
    original x scale.
    """
    zs, _ = scaled_controls(ds.z) if z_scaled is None else z_scaled
    pen = np.ones(ds.p + 1)
    if penalize_exposure:
        x_scale = 1.0 / math.sqrt(float(ds.x @ ds.x) / ds.n)
        if not math.isfinite(x_scale):
            raise ValidationError("exposure column is identically zero")
    else:
        x_scale = 1.0
        pen[0] = 0.0
    design = np.column_stack([ds.x * x_scale, zs])
    fy = solve_sqrt_lasso(ds.y, design, lambda_y, penalty_factor=None if penalize_exposure else pen)
    if x_scale != 1.0:
        coef = fy.coefficients.copy()
        coef[0] *= x_scale
        fy = replace(fy, coefficients=coef)
    fx = solve_sqrt_lasso(ds.x, zs, lambda_x)
    return fy, fx, zs


def t_db(
    ds: Dataset,
    lambda_x: float | None = None,
    lambda_y: float | None = None,
    penalize_exposure: bool = False,
) -> TestResult:
    """Debiased-Lasso statistic; valid only when the y-model is sparse linear."""
    if ds.n < 2:
        raise ValidationError("t_db needs at least two observations")
    lx, ly = _lam(lambda_x, ds.n, ds.p), _lam(lambda_y, ds.n, ds.p)
    fy, fx, zs = db_fits(ds, lx, ly, penalize_exposure=penalize_exposure)
    theta = float(fy.coefficients[0])
    beta_y = fy.coefficients[1:]
    r = fx.residuals
    num_vec = ds.y - zs @ beta_y
    den = float(np.linalg.norm(fy.residuals)) * float(np.linalg.norm(r))
    degen = den == 0.0 or fy.degenerate or fx.degenerate
    stat = 0.0 if degen else math.sqrt(ds.n) * float(num_vec @ r) / den
    diag = DefDiagnostics(lx, ly, _slack(fx), _slack(fy), fx.sigma_hat, fy.sigma_hat, degen).to_dict()
    diag["theta_hat"] = theta
    diag["penalize_exposure"] = penalize_exposure
    return TestResult(stat, normal_pvalue(stat), "t-db", diag)


# ------------------------------------------------------------------ #
# Heteroscedastic weights
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class WDefComponents:
    """All regressions behind the weighted statistic.

    ``first_*`` are the weighted square-root Lasso fits, ``orth_*`` the
    augmented orthogonalisation fits whose residuals are ``R^Y``/``R^X``.
    For ``orth_y`` the first ``p`` coefficients multiply the y-weighted
    block and the last ``p`` the x-weighted block (reversed for ``orth_x``).
    """

    first_y: LassoFit
    first_x: LassoFit
    orth_y: LassoFit
    orth_x: LassoFit
    design_y: np.ndarray = field(repr=False)
    design_x: np.ndarray = field(repr=False)
    scale_y: np.ndarray = field(repr=False)
    scale_x: np.ndarray = field(repr=False)

    @property
    def residual_y(self) -> np.ndarray:
        return self.orth_y.residuals

    @property
    def residual_x(self) -> np.ndarray:
        return self.orth_x.residuals


def w_def_components(y, x, z, w: WeightSpec, lam: float) -> WDefComponents:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n = y.shape[0]
    if w.d_y.shape != (n,) or w.d_x.shape != (n,) or x.shape != (n,) or z.shape[0] != n:
        raise ValidationError("weights, x, y and z must share the same n")
    zy, sy = scaled_controls(w.d_y[:, None] * z)
    zx, sx = scaled_controls(w.d_x[:, None] * z)
    first_y = solve_sqrt_lasso(w.d_y * y, zy, lam)
    first_x = solve_sqrt_lasso(w.d_x * x, zx, lam)
    # residual of the weighted fit equals D (Y - Z Lambda b)
    orth_y = solve_augmented(first_y.residuals, zy, zx, lam)
    orth_x = solve_augmented(first_x.residuals, zx, zy, lam)
    return WDefComponents(first_y, first_x, orth_y, orth_x, zy, zx, sy, sx)


def t_w_def(y, x, z, w: WeightSpec, lam: float | None = None) -> TestResult:
    """Weighted DEF statistic: correlation of the orthogonalised weighted residuals."""
    z = np.asarray(z, dtype=float)
    n, p = z.shape
    lam = _lam(lam, n, p)
    comp = w_def_components(y, x, z, w, lam)
    stat, degen = correlation_statistic(comp.residual_x, comp.residual_y)
    degen = degen or comp.orth_x.degenerate or comp.orth_y.degenerate
    if degen:
        stat = 0.0
    diag = DefDiagnostics(
        lam, lam, _slack(comp.orth_x), _slack(comp.orth_y),
        comp.orth_x.sigma_hat, comp.orth_y.sigma_hat, degen,
    ).to_dict()
    diag["kkt_slack_first_x"] = _slack(comp.first_x)
    diag["kkt_slack_first_y"] = _slack(comp.first_y)
    return TestResult(stat, normal_pvalue(stat), "t-w-def", diag)


# ------------------------------------------------------------------ #
# Generalised linear models
# ------------------------------------------------------------------ #


def penalized_kkt(fit: GlmFit, lam: float) -> float:
    """Largest violation of ``|d_j' U| / n <= lam`` (equality with sign when active)."""
    n = fit.n
    g = fit.design.T @ fit.family.score(fit.eta, fit.response) / n
    b = fit.coefficients
    viol = np.where(b != 0, np.abs(g - lam * np.sign(b)), np.abs(g) - lam)
    return float(np.max(viol)) if viol.size else -math.inf


def _penalized_objective(family, y, eta, beta, lam) -> float:
    return -family.loglik(eta, y) / y.shape[0] + lam * float(np.sum(np.abs(beta)))


def fit_penalized_glm(
    response: np.ndarray,
    design: np.ndarray,
    family: GlmFamily,
    lam: float,
    warm_start: np.ndarray | None = None,
    max_iter: int = GLM_MAX_ITER,
) -> GlmFit:
    """l1-penalised GLM: IRLS outer loop, coordinate-descent Lasso inside.

    Minimises ``-loglik / n + lam * ||b||_1`` with step halving on the
    penalised objective.
    """
    y = np.asarray(response, dtype=float)
    d = np.asarray(design, dtype=float)
    n, p = d.shape
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    family.check_support(y)
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    eta = d @ beta
    obj = _penalized_objective(family, y, eta, beta, lam)
    trace = [obj]
    for it in range(1, max_iter + 1):
        w = np.maximum(-family.score_derivative(eta, y), 1e-10)
        work = eta + family.score(eta, y) / w
        sw = np.sqrt(w)
        target = solve_lasso(sw * work, d * sw[:, None], lam, warm_start=beta, tol=1e-13)
        step = target - beta
        t = 1.0
        for _ in range(11):
            cand = beta + t * step
            eta_c = d @ cand
            obj_c = _penalized_objective(family, y, eta_c, cand, lam)
            if obj_c <= obj + 1e-13 * abs(obj):
                break
            t *= 0.5
        else:
            raise ConvergenceError("penalised IRLS could not decrease the objective", beta)
        move = float(np.max(np.abs(cand - beta))) if p else 0.0
        beta, eta, obj = cand, eta_c, min(obj, obj_c)
        trace.append(obj_c)
        if move < 1e-10:
            fit = GlmFit(beta, eta, family, 0.0, it, True, y, d, tuple(trace))
            slack = penalized_kkt(fit, lam)
            if slack <= 1e-7:
                g = d.T @ family.score(eta, y)
                return GlmFit(beta, eta, family, float(np.max(np.abs(g))) if p else 0.0, it, True, y, d, tuple(trace))
    raise ConvergenceError(f"penalised IRLS did not converge in {max_iter} iterations", beta)


def glm_lambda(lam: float, family: GlmFamily, y: np.ndarray) -> float:
    """Penalty on the score scale: ``lam`` times the null-model standard deviation."""
    m = family.null_mean(y)
    return lam * math.sqrt(float(family.variance(np.array([m]))[0]))


def adjusted_response(y: np.ndarray, eta: np.ndarray, family: GlmFamily) -> tuple[np.ndarray, np.ndarray]:
    """Linearised response ``(y - mu) / mu'`` and weights ``mu' / sqrt(V(mu))``."""
    eta = family.clamp(eta)
    mu = family.mean(eta)
    dmu = family.mean_derivative(eta)
    if np.any(np.abs(dmu) < MU_PRIME_FLOOR):
        raise AdjustedResponseError("mean derivative underflows: adjusted response is undefined")
    return (y - mu) / dmu, dmu / np.sqrt(family.variance(mu))


def t_glm_def(
    ds: Dataset,
    family_y: GlmFamily,
    family_x: GlmFamily,
    lam: float | None = None,
    glm_lam_y: float | None = None,
    glm_lam_x: float | None = None,
    split: bool = False,
) -> TestResult:
    """GLM DEF statistic: weighted DEF on adjusted responses with GLM weights.

    With ``split`` the penalised GLMs are fitted on the first half of the
    rows and the weighted statistic is computed on the second half.
    """
    lam = _lam(lam, ds.n, ds.p)
    zs, _ = scaled_controls(ds.z)
    if split:
        if ds.n < 4:
            raise ValidationError("sample splitting needs at least four observations")
        fit_rows, eval_rows = np.arange(ds.n // 2), np.arange(ds.n // 2, ds.n)
    else:
        fit_rows = eval_rows = np.arange(ds.n)
    y_fit, x_fit = ds.y[fit_rows], ds.x[fit_rows]
    ly = glm_lambda(lam, family_y, y_fit) if glm_lam_y is None else glm_lam_y
    lx = glm_lambda(lam, family_x, x_fit) if glm_lam_x is None else glm_lam_x
    fy = fit_penalized_glm(y_fit, zs[fit_rows], family_y, ly)
    fx = fit_penalized_glm(x_fit, zs[fit_rows], family_x, lx)
    eta_y = zs[eval_rows] @ fy.coefficients
    eta_x = zs[eval_rows] @ fx.coefficients
    y_eval, x_eval = ds.y[eval_rows], ds.x[eval_rows]
    y_adj, d_y = adjusted_response(y_eval, eta_y, family_y)
    x_adj, d_x = adjusted_response(x_eval, eta_x, family_x)
    res = t_w_def(y_adj, x_adj, ds.z[eval_rows], WeightSpec(d_y, d_x), lam)
    diag = dict(res.diagnostics)
    diag.update(
        deviance_y=deviance(family_y, y_eval, eta_y),
        deviance_x=deviance(family_x, x_eval, eta_x),
        glm_lambda_y=ly,
        glm_lambda_x=lx,
        glm_iterations_y=fy.iterations,
        glm_iterations_x=fx.iterations,
        split=split,
    )
    return TestResult(res.statistic, res.p_value, "t-glm-def", diag)


def bias_bound_holds(fits: DefFits, beta_true_scaled: np.ndarray, slack: float = 1e-6) -> bool:
    """Hoelder check ``|R'Z(b - b_hat)| / |R| <= sqrt(n) lam_x (1 + slack) |b - b_hat|_1``."""
    r = fits.fit_x.residuals
    diff = beta_true_scaled - fits.fit_y.coefficients
    n = r.shape[0]
    lhs = abs(float(r @ (fits.z_scaled @ diff))) / float(np.linalg.norm(r))
    rhs = math.sqrt(n) * (fits.fit_x.lam + max(fits.fit_x.kkt_slack, 0.0) + slack) * float(np.sum(np.abs(diff)))
    return lhs <= rhs + 1e-12


def orthogonalisation_l1_ratio(comp: WDefComponents, beta_y: np.ndarray) -> tuple[float, float]:
    """``(|beta_tilde|_1 + |eta_tilde|_1, |beta - beta_hat|_1)`` for the y-side fits.

    ``beta_y`` is on the raw covariate scale; it is mapped to the scaled
    weighted design before comparing with the first-stage estimate.
    """
    p = comp.design_y.shape[1]
    target = np.asarray(beta_y, dtype=float) / comp.scale_y
    err = float(np.sum(np.abs(target - comp.first_y.coefficients)))
    extra = float(np.sum(np.abs(comp.orth_y.coefficients[:p])) + np.sum(np.abs(comp.orth_y.coefficients[p:])))
    return extra, err
