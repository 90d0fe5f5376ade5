"""Square-root Lasso by the scaled-Lasso fixed point.

The square-root Lasso

    minimise  ||y - X b||_2 / sqrt(n) + lam * sum_j w_j |b_j|

has the same stationarity conditions as a plain Lasso with penalty
``lam * sigma`` where ``sigma = ||y - X b||_2 / sqrt(n)`` at the solution.
We therefore alternate coordinate descent on the plain Lasso with the
update ``sigma <- ||r||_2 / sqrt(n)`` until ``sigma`` settles.  Both steps
are block minimisations of the jointly convex function
``||y - X b||^2 / (2 n s) + s / 2 + lam * ||b||_1`` so the iteration
converges to the square-root Lasso solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from .model_core import ConvergenceError, NumericalError, ValidationError

INNER_TOL = 1e-10
SIGMA_TOL = 1e-10
MAX_OUTER = 500
MAX_SWEEPS = 100_000
SIGMA_FLOOR = 1e-12


class DegenerateFitError(NumericalError):
    pass


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    sigma_hat: float
    lam: float
    kkt_slack: float
    iterations: int
    degenerate: bool
    penalty_factor: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def objective(self) -> float:
        return sqrt_lasso_objective(self.residuals, self.coefficients, self.lam, self.penalty_factor)


def sqrt_lasso_objective(residuals, coefficients, lam, penalty_factor=None) -> float:
    n = residuals.shape[0]
    w = 1.0 if penalty_factor is None else penalty_factor
    return float(np.linalg.norm(residuals) / math.sqrt(n) + lam * np.sum(w * np.abs(coefficients)))


def default_lambda(n: int, p: int, a: float = 1.05) -> float:
    """``a * sqrt(2 log(p) / n)``."""
    if n < 1:
        raise ValidationError("n must be positive")
    if p < 2:
        raise ValidationError("p must be at least 2 (log p must be positive)")
    if not a > 1:
        raise ValidationError("a must exceed 1")
    return a * math.sqrt(2.0 * math.log(p) / n)


def quantile_lambda(n: int, p: int) -> float:
    """Quantile-based penalty level for the scaled Lasso.

    ``sqrt(2 / n) * L`` where ``L = Phi^{-1}(1 - k / p)`` and ``k`` solves
    ``k = L^4 + 2 L^2`` (damped fixed-point iteration).
    """
    if n < 1 or p < 1:
        raise ValidationError("n and p must be positive")
    if p == 1:
        return math.sqrt(2.0 / n) * 0.5
    big_l, old = 0.1, 0.0
    for _ in range(1000):
        if abs(big_l - old) <= 1e-3:
            break
        k = big_l**4 + 2.0 * big_l**2
        old = big_l
        big_l = -stats.norm.ppf(min(k / p, 0.99))
        big_l = 0.5 * (big_l + old)
    return math.sqrt(2.0 / n) * big_l


def select_lambda(n: int, p: int, mode: str = "fixed-a", a: float = 1.05) -> float:
    if mode == "fixed-a":
        return default_lambda(n, max(p, 2), a)
    if mode == "quantile":
        return quantile_lambda(n, p)
    raise ValidationError(f"unknown lambda mode '{mode}'")


# ------------------------------------------------------------------ #
# Kernels
# ------------------------------------------------------------------ #


@njit(cache=True, nogil=True)
def _cd_sweep(x, beta, r, pen, thresh, col_sq, active_only, n):
    """One coordinate descent pass; returns the largest scaled coefficient move."""
    p = x.shape[1]
    max_move = 0.0
    for j in range(p):
        cj = col_sq[j]
        if cj <= 0.0:
            continue
        bj = beta[j]
        if active_only and bj == 0.0:
            continue
        g = 0.0
        for i in range(n):
            g += x[i, j] * r[i]
        rho = g / n + cj * bj
        t = thresh * pen[j]
        if rho > t:
            new = (rho - t) / cj
        elif rho < -t:
            new = (rho + t) / cj
        else:
            new = 0.0
        delta = new - bj
        if delta != 0.0:
            for i in range(n):
                r[i] -= x[i, j] * delta
            beta[j] = new
            move = abs(delta) * math.sqrt(cj)
            if move > max_move:
                max_move = move
    return max_move


@njit(cache=True, nogil=True)
def _lasso_cd(x, beta, r, pen, thresh, col_sq, tol, max_sweeps):
    """Plain Lasso ``||r||^2 / (2n) + thresh * sum pen_j |b_j|`` by active-set cycling."""
    n = x.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        move = _cd_sweep(x, beta, r, pen, thresh, col_sq, False, n)
        sweeps += 1
        if move <= tol:
            return sweeps
        inner = 0
        while sweeps < max_sweeps:
            move = _cd_sweep(x, beta, r, pen, thresh, col_sq, True, n)
            sweeps += 1
            inner += 1
            if move <= tol or inner % 10 == 0:
                break
    return -sweeps


@njit(cache=True, nogil=True)
def _sqrt_lasso(x, y, beta, pen, lam, col_sq, inner_tol, sigma_tol, sigma_floor, max_outer, max_sweeps):
    n = x.shape[0]
    r = y.copy()
    for j in range(x.shape[1]):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= x[i, j] * beta[j]
    ynorm = 0.0
    for i in range(n):
        ynorm += y[i] * y[i]
    ynorm = math.sqrt(ynorm / n)
    floor = sigma_floor * ynorm
    tol = inner_tol * max(ynorm, 1e-300)
    sigma = 0.0
    for i in range(n):
        sigma += r[i] * r[i]
    sigma = math.sqrt(sigma / n)
    total = 0
    for outer in range(max_outer):
        if sigma <= floor:
            return r, sigma, total, 1, outer
        sweeps = _lasso_cd(x, beta, r, pen, lam * sigma, col_sq, tol, max_sweeps)
        if sweeps < 0:
            return r, sigma, total - sweeps, 2, outer
        total += sweeps
        s_new = 0.0
        for i in range(n):
            s_new += r[i] * r[i]
        s_new = math.sqrt(s_new / n)
        if abs(s_new - sigma) <= sigma_tol * max(sigma, floor):
            sigma = s_new
            if sigma <= floor:
                return r, sigma, total, 1, outer + 1
            # one more pass at the settled sigma keeps the KKT system exact
            sweeps = _lasso_cd(x, beta, r, pen, lam * sigma, col_sq, tol, max_sweeps)
            total += abs(sweeps)
            s2 = 0.0
            for i in range(n):
                s2 += r[i] * r[i]
            sigma = math.sqrt(s2 / n)
            return r, sigma, total, 0, outer + 1
        sigma = s_new
    return r, sigma, total, 3, max_outer


# ------------------------------------------------------------------ #
# Public solvers
# ------------------------------------------------------------------ #


def _prepare(response, design):
    y = np.ascontiguousarray(response, dtype=float)
    x = np.asarray(design, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValidationError("design must be n x p and response length n")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValidationError("non-finite values in response or design")
    return y, np.asfortranarray(x) if x.shape[1] else np.zeros((y.shape[0], 0))


def solve_sqrt_lasso(
    response: np.ndarray,
    design: np.ndarray,
    lam: float,
    warm_start: np.ndarray | None = None,
    penalty_factor: np.ndarray | None = None,
) -> LassoFit:
    """Square-root Lasso with optional warm start and per-column penalty factors.

    Columns are expected to have unit mean square; a column of zeros is
    ignored (its coefficient stays at zero).  A factor of 0 leaves the
    corresponding coefficient unpenalised.
    """
    y, x = _prepare(response, design)
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    n, p = x.shape
    pen = np.ones(p) if penalty_factor is None else np.ascontiguousarray(penalty_factor, dtype=float)
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    if beta.shape != (p,) or pen.shape != (p,):
        raise ValidationError("warm start / penalty factor length must match the design")
    col_sq = np.einsum("ij,ij->j", x, x) / n
    beta[col_sq <= 0] = 0.0
    r, sigma, sweeps, status, outer = _sqrt_lasso(
        x, y, beta, pen, float(lam), col_sq, INNER_TOL, SIGMA_TOL, SIGMA_FLOOR, MAX_OUTER, MAX_SWEEPS
    )
    if status == 2:
        raise ConvergenceError("coordinate descent exceeded its sweep budget", beta)
    if status == 3:
        raise ConvergenceError(f"sigma fixed point not reached in {MAX_OUTER} outer iterations", beta)
    degenerate = status == 1
    fit = LassoFit(beta, r, sigma, float(lam), np.nan, sweeps, degenerate, None if penalty_factor is None else pen)
    if not degenerate:
        object.__setattr__(fit, "kkt_slack", kkt_certificate(fit, x))
    return fit


def solve_augmented(response, design_a, design_b, lam, warm_start=None) -> LassoFit:
    """Square-root Lasso on ``[design_a | design_b]`` with one shared penalty."""
    a = np.asarray(design_a, dtype=float)
    b = np.asarray(design_b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValidationError("augmented blocks must have the same number of rows")
    return solve_sqrt_lasso(response, np.hstack([a, b]), lam, warm_start)


def kkt_certificate(fit: LassoFit, design: np.ndarray) -> float:
    """Largest violation of the square-root Lasso stationarity conditions.

    With ``c_j = x_j' r / (sqrt(n) ||r||)``: inactive columns contribute
    ``|c_j| - w_j lam``, active ones ``|c_j - w_j lam sign(b_j)|``.
    """
    if fit.degenerate:
        raise DegenerateFitError("KKT certificate undefined for a degenerate fit")
    x = np.asarray(design, dtype=float)
    n = x.shape[0]
    r = fit.residuals
    c = x.T @ r / (math.sqrt(n) * np.linalg.norm(r))
    w = np.ones_like(c) if fit.penalty_factor is None else fit.penalty_factor
    lw = fit.lam * w
    active = fit.coefficients != 0
    viol = np.where(active, np.abs(c - lw * np.sign(fit.coefficients)), np.abs(c) - lw)
    zero_cols = np.einsum("ij,ij->j", x, x) == 0
    viol[zero_cols] = -np.inf
    return float(np.max(viol)) if viol.size else -math.inf


def solve_lasso(
    response: np.ndarray,
    design: np.ndarray,
    penalty: float,
    warm_start: np.ndarray | None = None,
    penalty_factor: np.ndarray | None = None,
    tol: float = INNER_TOL,
) -> np.ndarray:
    """Plain Lasso ``||y - X b||^2 / (2n) + penalty * ||b||_1`` by coordinate descent."""
    y, x = _prepare(response, design)
    n, p = x.shape
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    pen = np.ones(p) if penalty_factor is None else np.ascontiguousarray(penalty_factor, dtype=float)
    col_sq = np.einsum("ij,ij->j", x, x) / n
    beta[col_sq <= 0] = 0.0
    r = y - x @ beta
    scale = max(float(np.linalg.norm(y)) / math.sqrt(n), 1e-300)
    sweeps = _lasso_cd(x, beta, r, pen, float(penalty), col_sq, tol * scale, MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceError("coordinate descent exceeded its sweep budget", beta)
    return beta
