"""Low-dimensional least squares: projections, partial correlation and t-tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .model_core import Dataset, NumericalError, TestResult, ValidationError, normal_pvalue

RANK_TOL = 1e-10


class RankError(NumericalError):
    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


class DegenerateResidualError(NumericalError):
    pass


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    sigma_tilde_sq: float
    projection_rank: int
    xtx_inv: np.ndarray

    @property
    def df_resid(self) -> int:
        return self.residuals.shape[0] - self.projection_rank


def fit_ols(response: np.ndarray, design: np.ndarray) -> OlsFit:
    """Least squares via the thin SVD of the design.

    Raises :class:`RankError` when a singular value falls below
    ``1e-10`` times the largest one.
    """
    y = np.asarray(response, dtype=float)
    d = np.asarray(design, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    n, k = d.shape
    if n <= k:
        raise ValidationError(f"need more rows than columns (n={n}, columns={k})")
    u, s, vt = np.linalg.svd(d, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if k else 0
    if rank < k:
        raise RankError(f"design is rank deficient: numerical rank {rank} < {k} columns", rank)
    coef = vt.T @ ((u.T @ y) / s)
    resid = y - d @ coef
    xtx_inv = (vt.T / s**2) @ vt
    return OlsFit(coef, resid, float(resid @ resid) / (n - k), rank, xtx_inv)


def residualize(v: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``(I - P) v`` with ``P`` the orthogonal projection onto the columns of ``z``."""
    v = np.asarray(v, dtype=float)
    if z.shape[1] == 0:
        return v.copy()
    q, r = np.linalg.qr(z)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * diag.max():
        u, s, _ = np.linalg.svd(z, full_matrices=False)
        q = u[:, s > RANK_TOL * s[0]]
    return v - q @ (q.T @ v)


def partial_correlation(ds: Dataset) -> float:
    rx = residualize(ds.x, ds.z)
    ry = residualize(ds.y, ds.z)
    nx, ny = np.linalg.norm(rx), np.linalg.norm(ry)
    if nx <= 1e-12 * max(np.linalg.norm(ds.x), 1e-300) or ny <= 1e-12 * max(np.linalg.norm(ds.y), 1e-300):
        raise DegenerateResidualError("x or y lies in the column span of z")
    rho = float(rx @ ry / (nx * ny))
    return min(1.0, max(-1.0, rho))


def _t_statistic(ds: Dataset) -> tuple[float, float, int]:
    df = ds.n - ds.p - 1
    if df < 1:
        raise ValidationError(f"need n > p + 1 (n={ds.n}, p={ds.p})")
    rho = partial_correlation(ds)
    # 1 - rho^2 within rounding of zero means collinear residuals
    if 1.0 - rho * rho <= 64 * np.finfo(float).eps:
        raise NumericalError("partial correlation is +-1: statistic is infinite")
    return float(np.sqrt(df) * rho / np.sqrt(1.0 - rho * rho)), rho, df


def t_ols(ds: Dataset) -> TestResult:
    """The regression t-statistic for ``x``, written through the partial correlation."""
    stat, rho, df = _t_statistic(ds)
    return TestResult(stat, normal_pvalue(stat), "t-ols", {"rho": rho, "df": df})


def t_pvalue(statistic: float, df: float) -> float:
    """Two-sided Student-t p-value via the regularized incomplete beta function."""
    return float(special.betainc(0.5 * df, 0.5, df / (df + statistic * statistic)))


def t_ols_exact(ds: Dataset) -> TestResult:
    stat, rho, df = _t_statistic(ds)
    return TestResult(stat, t_pvalue(stat, df), "t-ols-exact", {"rho": rho, "df": df})


def classical_t(ds: Dataset) -> tuple[float, OlsFit]:
    """theta_hat / se from OLS of y on (x, z); returned with the fit."""
    fit = fit_ols(ds.y, np.column_stack([ds.x, ds.z]))
    return float(fit.coefficients[0] / np.sqrt(fit.xtx_inv[0, 0] * fit.sigma_tilde_sq)), fit
