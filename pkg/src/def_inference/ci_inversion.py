"""Confidence intervals by inverting DEF tests.

The region reported is the acceptance set ``{t : |T_t| <= z}`` where
``z`` is the upper ``alpha / 2`` normal quantile.  Its endpoints are found
by expanding a bracket around an accepted point until the statistic
exceeds ``z`` on both sides, then bisecting.  Every square-root Lasso
solve along the way is warm-started from the evaluated ``t`` closest to
the new one.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .def_high_dim import correlation_statistic, db_fits, scaled_controls
from .model_core import Dataset, NumericalError, ValidationError
from .sqrt_lasso import default_lambda, solve_sqrt_lasso

MAX_DOUBLINGS = 60
STAT_TOL = 1e-3
WIDTH_TOL = 1e-4
SCAN_POINTS = 17


class NoCrossingError(NumericalError):
    pass


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    alpha: float
    evaluations: int
    bracket_expansions: int
    disconnected_flag: bool
    center: float = math.nan
    bisection_steps: int = 0
    warm_hits: int = 0

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "alpha": self.alpha,
            "evaluations": self.evaluations,
            "bracket_expansions": self.bracket_expansions,
            "disconnected_flag": self.disconnected_flag,
            "center": self.center,
            "bisection_steps": self.bisection_steps,
            "warm_hits": self.warm_hits,
        }


def z_quantile(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    return float(stats.norm.isf(alpha / 2.0))


class _WarmPath:
    """Square-root Lasso of ``base - t * direction`` on a fixed design, warm-started in ``t``."""

    def __init__(self, base, direction, design, lam, warm: bool = True):
        self.base = np.asarray(base, dtype=float)
        self.direction = np.asarray(direction, dtype=float)
        self.design = design
        self.lam = lam
        self.warm = warm
        self._ts: list[float] = []
        self._betas: list[np.ndarray] = []
        self.warm_hits = 0
        self.solves = 0

    def fit(self, t: float):
        start = None
        if self.warm and self._ts:
            k = bisect.bisect_left(self._ts, t)
            cands = [i for i in (k - 1, k) if 0 <= i < len(self._ts)]
            best = min(cands, key=lambda i: abs(self._ts[i] - t))
            start = self._betas[best]
            self.warm_hits += 1
        fit = solve_sqrt_lasso(self.base - t * self.direction, self.design, self.lam, start)
        self.solves += 1
        if self.warm:
            k = bisect.bisect_left(self._ts, t)
            self._ts.insert(k, t)
            self._betas.insert(k, fit.coefficients.copy())
        return fit


class DefPath:
    """Evaluates ``T_DEF`` on ``(y - t x, x, z)``; the x-regression is solved once."""

    def __init__(self, ds: Dataset, lambda_x: float, lambda_y: float, warm: bool = True):
        self.ds = ds
        zs, _ = scaled_controls(ds.z)
        self.fit_x = solve_sqrt_lasso(ds.x, zs, lambda_x)
        self.residual_x = self.fit_x.residuals
        self.path = _WarmPath(ds.y, ds.x, zs, lambda_y, warm)
        self.degenerate = False

    def __call__(self, t: float) -> float:
        fy = self.path.fit(t)
        stat, degen = correlation_statistic(fy.residuals, self.residual_x)
        if degen or fy.degenerate or self.fit_x.degenerate:
            self.degenerate = True
            return 0.0
        return stat

    @property
    def warm_hits(self) -> int:
        return self.path.warm_hits


def _lams(ds: Dataset, lambda_x, lambda_y):
    lam = default_lambda(ds.n, max(ds.p, 2))
    return (lam if lambda_x is None else float(lambda_x), lam if lambda_y is None else float(lambda_y))


def t_def_at(
    ds: Dataset,
    t: float,
    lambda_x: float | None = None,
    lambda_y: float | None = None,
    warm: DefPath | None = None,
) -> float:
    """``T_DEF(y - t x, x)``; pass a :class:`DefPath` to reuse solves across ``t``."""
    if warm is None:
        lx, ly = _lams(ds, lambda_x, lambda_y)
        warm = DefPath(ds, lx, ly, warm=False)
    return warm(t)


def _initial_theta(ds: Dataset) -> float:
    n, p = ds.n, ds.p
    k = min(p, n // 4)
    cols = []
    if k > 0:
        zc = ds.z - ds.z.mean(axis=0)
        norms = np.linalg.norm(zc, axis=0)
        norms[norms == 0] = np.inf
        score = np.abs(zc.T @ (ds.y - ds.y.mean())) / norms
        cols = np.argsort(-score, kind="stable")[:k]
    design = np.column_stack([ds.x, ds.z[:, cols]]) if k > 0 else ds.x[:, None]
    gram = design.T @ design
    ridge = 1e-8 * np.trace(gram) / gram.shape[0]
    coef = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), design.T @ ds.y)
    return float(coef[0])


def invert_statistic(
    stat_fn: Callable[[float], float],
    t0: float,
    step: float,
    alpha: float,
) -> Interval:
    """Acceptance region of ``|stat_fn(t)| <= z`` around ``t0``, by bracketing and bisection."""
    z = z_quantile(alpha)
    if not (math.isfinite(step) and step > 0):
        raise ValidationError("initial step must be positive and finite")
    evals: dict[float, float] = {}

    def f(t: float) -> float:
        if t not in evals:
            evals[t] = stat_fn(t)
        return evals[t]

    expansions = 0
    center = t0
    if abs(f(t0)) > z:
        # walk towards smaller |T| until accepted, bisecting across a sign change
        up, down = abs(f(t0 + step)), abs(f(t0 - step))
        direction = 1.0 if up <= down else -1.0
        prev, h = t0, step
        for _ in range(MAX_DOUBLINGS):
            cur = t0 + direction * h
            expansions += 1
            if abs(f(cur)) <= z:
                center = cur
                break
            if np.sign(f(cur)) != np.sign(f(prev)):
                a, b = prev, cur
                for _ in range(200):
                    m = 0.5 * (a + b)
                    if abs(f(m)) <= z:
                        center = m
                        break
                    if np.sign(f(m)) == np.sign(f(a)):
                        a = m
                    else:
                        b = m
                else:
                    raise NoCrossingError("statistic changes sign without entering the acceptance region")
                break
            prev, h = cur, 2.0 * h
        else:
            raise NoCrossingError("no accepted parameter value found: the region looks empty")

    endpoints = []
    outer = []
    bisections = 0
    for side in (-1.0, 1.0):
        a = center
        h = step
        for _ in range(MAX_DOUBLINGS):
            b = center + side * h
            expansions += 1
            if abs(f(b)) > z:
                break
            a = b
            h *= 2.0
        else:
            raise NoCrossingError(
                "statistic never exceeds the critical value: the region is unbounded on one side"
            )
        outer.append(b)
        width_tol = WIDTH_TOL * step
        while True:
            m = 0.5 * (a + b)
            bisections += 1
            fm = abs(f(m))
            if abs(fm - z) < STAT_TOL or abs(b - a) < width_tol:
                break
            if fm <= z:
                a = m
            else:
                b = m
        endpoints.append(m)
    lower, upper = endpoints
    lo_out, hi_out = outer

    disconnected = False
    for t in np.linspace(lo_out, hi_out, SCAN_POINTS):
        if (t < lower or t > upper) and abs(f(float(t))) <= z:
            disconnected = True
    t_star = min(evals, key=lambda t: abs(evals[t]))
    if not lower <= t_star <= upper:
        t_star = center
    return Interval(lower, upper, alpha, len(evals), expansions, disconnected, t_star, bisections)


def confidence_interval(
    ds: Dataset,
    alpha: float = 0.05,
    lambda_x: float | None = None,
    lambda_y: float | None = None,
    warm: bool = True,
) -> Interval:
    """DEF confidence interval for ``theta`` in ``y = theta x + f(z, eps)``."""
    z_quantile(alpha)
    lx, ly = _lams(ds, lambda_x, lambda_y)
    path = DefPath(ds, lx, ly, warm=warm)
    t0 = _initial_theta(ds)
    sigma = float(np.linalg.norm(path.path.fit(t0).residuals)) / math.sqrt(ds.n)
    rnorm = float(np.linalg.norm(path.residual_x))
    step = 4.0 * sigma / rnorm if rnorm > 0 and sigma > 0 else 4.0 / math.sqrt(ds.n)
    out = invert_statistic(path, t0, step, alpha)
    return Interval(**{**out.to_dict(), "warm_hits": path.warm_hits})


def debiased_interval(
    ds: Dataset,
    alpha: float = 0.05,
    lambda_x: float | None = None,
    lambda_y: float | None = None,
    penalize_exposure: bool = True,
) -> Interval:
    """Classical debiased-Lasso interval ``theta_db +- z sigma |R| / |R'x|`` (baseline).

    The initial fit penalises every coefficient, as in the usual one-step
    debiased Lasso; ``penalize_exposure=False`` leaves x unpenalised.
    """
    z = z_quantile(alpha)
    lx, ly = _lams(ds, lambda_x, lambda_y)
    fy, fx, _ = db_fits(ds, lx, ly, penalize_exposure=penalize_exposure)
    r = fx.residuals
    resid = fy.residuals
    rx = float(r @ ds.x)
    if rx == 0.0:
        raise NumericalError("x residual is orthogonal to x: debiased estimate undefined")
    theta = float(fy.coefficients[0]) + float(r @ resid) / rx
    se = float(np.linalg.norm(resid)) / math.sqrt(ds.n) * float(np.linalg.norm(r)) / abs(rx)
    return Interval(theta - z * se, theta + z * se, alpha, 1, 0, False, theta)


# ------------------------------------------------------------------ #
# Linear contrasts w' beta
# ------------------------------------------------------------------ #


class WbetaPath:
    """``T_t`` for ``H0: w' beta = t`` in the linear model ``y = z beta + eps``."""

    def __init__(self, y, z, w, lam: float, warm: bool = True):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        if w.shape != (z.shape[1],):
            raise ValidationError("w must have one entry per column of z")
        wn2 = float(w @ w)
        if not (math.isfinite(wn2) and wn2 > 0):
            raise ValidationError("w must be a nonzero finite vector")
        zw = z @ w
        zp = z - np.outer(zw, w) / wn2
        norms = np.linalg.norm(zp, axis=0)
        keep = norms > 1e-12 * max(float(norms.max(initial=0.0)), 1e-300)
        design, _ = scaled_controls(zp[:, keep])
        self.keep = keep
        self.design = design
        self.direction = zw / wn2
        self.w_norm_sq = wn2
        self.fit_r = solve_sqrt_lasso(zw, design, lam)
        self.residual = self.fit_r.residuals
        self.path = _WarmPath(y, self.direction, design, lam, warm)
        self.degenerate = False

    def __call__(self, t: float) -> float:
        fb = self.path.fit(t)
        stat, degen = correlation_statistic(self.residual, fb.residuals)
        if degen or fb.degenerate or self.fit_r.degenerate:
            self.degenerate = True
            return 0.0
        return stat


def wbeta_test(y, z, w, t: float, lam: float | None = None, warm: WbetaPath | None = None) -> float:
    """Statistic for ``w' beta = t``; zero when a residual vector vanishes."""
    if warm is None:
        z = np.asarray(z, dtype=float)
        lam = default_lambda(z.shape[0], max(z.shape[1], 2)) if lam is None else lam
        warm = WbetaPath(y, z, w, lam, warm=False)
    return warm(t)


def wbeta_region(y, z, w, alpha: float = 0.05, lam: float | None = None, warm: bool = True) -> Interval:
    """Confidence region for ``w' beta`` by inverting :func:`wbeta_test`."""
    z_quantile(alpha)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = z.shape
    lam = default_lambda(n, max(p, 2)) if lam is None else float(lam)
    path = WbetaPath(y, z, w, lam, warm=warm)
    w = np.asarray(w, dtype=float)
    zs, scale = scaled_controls(z)
    pilot = solve_sqrt_lasso(y, zs, lam)
    t0 = float(w @ (scale * pilot.coefficients))
    fit0 = path.path.fit(t0)
    sigma = float(np.linalg.norm(fit0.residuals)) / math.sqrt(n)
    rnorm = float(np.linalg.norm(path.residual))
    step = 4.0 * sigma * path.w_norm_sq / rnorm if rnorm > 0 and sigma > 0 else 4.0 / math.sqrt(n)
    out = invert_statistic(path, t0, step, alpha)
    return Interval(**{**out.to_dict(), "warm_hits": path.path.warm_hits})
