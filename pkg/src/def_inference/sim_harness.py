"""Seeded data generators and the Monte Carlo runner.

Replicate ``k`` of a run draws from ``Rng(seed).child(k + 1)``; child 0
is reserved for quantities fixed across replicates (e.g. the design of
the example1-* and poisson-misspec scenarios, which mimic a fixed real covariate
matrix).  Results are therefore identical for any thread count.

High-dimensional scenarios choose lambda by the quantile rule of
``sqrt_lasso.quantile_lambda`` unless told otherwise.

Desk-scale defaults (n, p) per scenario::

    example1-*            n=442 p=10   fixed Toeplitz(0.5) design, unit-norm columns, plus intercept
    poisson-misspec       n=442 p=10   as example1
    partial-linear-{a,b,c} n=100 p=200 Toeplitz(0.9), exposure cycles over 12 columns
    logistic-hd-{null,alt} n=250 p=100 Toeplitz(0.9), six fixed (beta, z) setups
    toeplitz-confint       n=200 p=500
    sparse-linear-null     n=100 p=300 s=3
    hetero-linear-null     n=100 p=200 s=3
    wbeta-sparse           n=100 p=200 s=3, w = 1 / sqrt(p)
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from .ci_inversion import DefPath, WbetaPath, confidence_interval, debiased_interval, wbeta_region
from .def_high_dim import WeightSpec, t_db, t_def, t_glm_def, t_w_def
from .glm import t_glm
from .model_core import (
    BINOMIAL,
    GAUSSIAN,
    POISSON,
    Dataset,
    DefError,
    NumericalError,
    Rng,
    ValidationError,
    normal_pvalue,
    read_table,
)
from .ols import classical_t, t_ols, t_ols_exact
from .sqrt_lasso import select_lambda

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.02


class McFailureError(NumericalError):
    pass


# ------------------------------------------------------------------ #
# Generators
# ------------------------------------------------------------------ #


def _expit(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def pairwise_logistic_sum(z: np.ndarray) -> np.ndarray:
    """``eta_i = sum_{j,k} expit(z_ij z_ik)`` over all ordered pairs."""
    n, p = z.shape
    out = np.empty(n)
    step = max(1, 2_000_000 // max(p * p, 1))
    for s in range(0, n, step):
        zi = z[s : s + step]
        out[s : s + step] = _expit(zi[:, :, None] * zi[:, None, :]).sum(axis=(1, 2))
    return out


def with_intercept(z: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(z.shape[0]), z])


def gen_example1(z: np.ndarray, rng: Rng, alt: bool = False, intercept: bool = True) -> Dataset:
    """x = rowsum(z) + (Exp(1) - 1); y = eta * chi2_1 (+ x under the alternative).

    The returned controls carry a leading constant column unless
    ``intercept`` is false.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    x = z.sum(axis=1) + (rng.exponential(n) - 1.0)
    y = pairwise_logistic_sum(z) * rng.chisq1(n)
    if alt:
        y = y + x
    return Dataset(y, x, with_intercept(z) if intercept else z)


def gen_poisson_misspec(z: np.ndarray, x: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """Poisson counts with ``log mu = a1 rowsum(z) + sigma a2 eta``.

    ``a1`` and ``a2`` scale the row sums and the pairwise term so each has
    maximal absolute value 3.  ``x`` only enters through the test.
    """
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    z = np.asarray(z, dtype=float)
    s = z.sum(axis=1)
    eta = pairwise_logistic_sum(z)
    a1 = 3.0 / np.max(np.abs(s))
    a2 = 3.0 / np.max(np.abs(eta))
    log_mu = a1 * s + sigma * a2 * eta
    if np.max(log_mu) > 20:
        raise NumericalError("Poisson mean overflow (log mean above 20)")
    return rng.poisson(np.exp(log_mu))


def _design(n: int, p: int, rng: Rng, rho: float, csv_design: np.ndarray | None) -> np.ndarray:
    if csv_design is None:
        return rng.toeplitz_normal(n, p, rho)
    if csv_design.shape[1] < p:
        raise ValidationError(f"CSV design has {csv_design.shape[1]} columns, need {p}")
    rows = rng.generator.integers(0, csv_design.shape[0], size=n)
    return csv_design[rows][:, :p]


def load_design(path: str | Path) -> np.ndarray:
    """Read a numeric CSV (header row) and centre/scale its columns to unit variance.

    Constant columns are dropped.
    """
    _, m = read_table(path)
    sd = m.std(axis=0)
    keep = sd > 0
    return (m[:, keep] - m[:, keep].mean(axis=0)) / sd[keep]


def gen_partial_linear(
    setting: str,
    n: int,
    p: int,
    rng: Rng,
    exposure_index: int = 0,
    rho: float = 0.9,
    csv_design: np.ndarray | None = None,
    theta: float | None = None,
    interaction_scale: float = 2.0 / 11.0,
) -> tuple[Dataset, float]:
    """Partially linear ``y = theta x + f(z, eps)`` with nuisance of type a, b or c.

    ``p`` counts all generated covariates; column ``exposure_index`` of
    the draw becomes ``x`` and the rest ``z``.  The nuisance uses the first
    eleven columns of ``z``.
    """
    if setting not in ("a", "b", "c"):
        raise ValidationError("setting must be 'a', 'b' or 'c'")
    if p < 12:
        raise ValidationError("p must be at least 12")
    if not 0 <= exposure_index < p:
        raise ValidationError("exposure index out of range")
    w = _design(n, p, rng, rho, csv_design)
    x = w[:, exposure_index]
    z = np.delete(w, exposure_index, axis=1)
    th = rng.uniform(low=0.0, high=2.0) if theta is None else float(theta)
    beta = rng.uniform(11, 0.0, 2.0)
    eps = rng.normal(n)
    signal = z[:, :11]
    if setting == "a":
        f = signal @ beta + eps
    else:
        zt = 2.0 * _expit(signal) - 1.0
        if setting == "b":
            f = zt @ beta + eps
        else:
            theta_jk = rng.uniform((11, 11), 0.0, 1.0) * interaction_scale
            eta = zt @ beta + np.einsum("ij,ik,jk->i", zt, zt, theta_jk) + eps
            f = _expit(eta)
    return Dataset(th * x + f, x, z), float(th)


def gen_logistic_hd(
    n: int,
    p: int,
    rng: Rng,
    alt: bool = False,
    rho: float = 0.9,
    csv_design: np.ndarray | None = None,
    setup_rng: Rng | None = None,
) -> Dataset:
    """Binary x and y sharing the first four covariates of a 24-term y-model.

    ``(beta, z)`` come from ``setup_rng`` when given (so several replicates
    can share one setup) and from ``rng`` otherwise; x and y always use ``rng``.
    """
    if p < 24:
        raise ValidationError("p must be at least 24")
    srng = rng if setup_rng is None else setup_rng
    z = _design(n, p, srng, rho, csv_design)
    beta = srng.uniform(24, 0.0, 1.0)
    a = 1.0 - np.arange(24) / 24.0
    coef = a * beta
    x = rng.bernoulli(_expit(z[:, :4] @ coef[:4]))
    lin_y = z[:, :24] @ coef
    if alt:
        lin_y = lin_y + x
    y = rng.bernoulli(_expit(lin_y))
    return Dataset(y, x, z)


def gen_toeplitz_confint(n: int, p: int, rng: Rng, rho: float = 0.9) -> tuple[Dataset, float]:
    """``y = x - 0.5 z_1 + 0.7 z_2 + eps`` with (x, z) jointly Toeplitz; theta = 1."""
    w = rng.toeplitz_normal(n, p, rho)
    x, z = w[:, 0], w[:, 1:]
    y = x - 0.5 * z[:, 0] + 0.7 * z[:, 1] + rng.normal(n)
    return Dataset(y, x, z), 1.0


def _sparse_coef(p: int, s: int, rng: Rng) -> np.ndarray:
    b = np.zeros(p)
    support = rng.generator.choice(p, size=s, replace=False)
    b[np.sort(support)] = rng.uniform(s, 0.5, 1.0) * np.where(rng.uniform(s) < 0.5, -1.0, 1.0)
    return b


def gen_sparse_linear(
    n: int, p: int, rng: Rng, s: int = 3, rho: float = 0.9, theta: float = 0.0
) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Sparse linear x- and y-models on a Toeplitz design; returns true coefficients too."""
    z = rng.toeplitz_normal(n, p, rho)
    bx = _sparse_coef(p, s, rng)
    by = _sparse_coef(p, s, rng)
    x = z @ bx + rng.normal(n)
    y = theta * x + z @ by + rng.normal(n)
    return Dataset(y, x, z), by, bx


def hetero_weights(z: np.ndarray) -> WeightSpec:
    """Known precision weights depending on the first two covariates."""
    d_y = 1.0 / np.sqrt(0.5 + np.abs(z[:, 0]))
    d_x = 1.0 / np.sqrt(0.5 + np.abs(z[:, 1]))
    return WeightSpec(d_y, d_x)


def gen_hetero_linear(
    n: int, p: int, rng: Rng, s: int = 3, rho: float = 0.9
) -> tuple[Dataset, WeightSpec, np.ndarray, np.ndarray]:
    """Heteroscedastic sparse linear models with ``Var = 1 / d^2``; null holds."""
    z = rng.toeplitz_normal(n, p, rho)
    w = hetero_weights(z)
    bx = _sparse_coef(p, s, rng)
    by = _sparse_coef(p, s, rng)
    x = z @ bx + rng.normal(n) / w.d_x
    y = z @ by + rng.normal(n) / w.d_y
    return Dataset(y, x, z), w, by, bx


def gen_wbeta(n: int, p: int, rng: Rng, s: int = 3, rho: float = 0.9) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Sparse linear ``y = z beta + eps`` with the dense contrast ``w = 1 / sqrt(p)``."""
    z = rng.toeplitz_normal(n, p, rho)
    beta = _sparse_coef(p, s, rng)
    y = z @ beta + rng.normal(n)
    w = np.full(p, 1.0 / math.sqrt(p))
    return y, z, w, float(w @ beta)


# ------------------------------------------------------------------ #
# Scenarios
# ------------------------------------------------------------------ #

SCENARIO_DEFAULTS: dict[str, tuple[int, int]] = {
    "example1-null": (442, 10),
    "example1-alt": (442, 10),
    "poisson-misspec": (442, 10),
    "partial-linear-a": (100, 200),
    "partial-linear-b": (100, 200),
    "partial-linear-c": (100, 200),
    "logistic-hd-null": (250, 100),
    "logistic-hd-alt": (250, 100),
    "toeplitz-confint": (200, 500),
    "sparse-linear-null": (100, 300),
    "hetero-linear-null": (100, 200),
    "wbeta-sparse": (100, 200),
}

LOW_DIM = {"example1-null", "example1-alt", "poisson-misspec"}

# logistic-hd replicates cycle through this many fixed (beta, z) setups
LOGISTIC_SETUPS = 6
SETUP_OFFSET = 1 << 30


@dataclass(frozen=True)
class Scenario:
    tag: str
    n: int | None = None
    p: int | None = None
    seed: int = 0
    design: str = "toeplitz"
    rho: float | None = None
    csv_path: str | None = None
    sigma: float = 0.0
    theta: float | None = None
    sparsity: int = 3

    def __post_init__(self) -> None:
        if self.tag not in SCENARIO_DEFAULTS:
            raise ValidationError(f"unknown scenario '{self.tag}'; choose from {sorted(SCENARIO_DEFAULTS)}")
        n0, p0 = SCENARIO_DEFAULTS[self.tag]
        object.__setattr__(self, "n", n0 if self.n is None else int(self.n))
        object.__setattr__(self, "p", p0 if self.p is None else int(self.p))
        if self.rho is None:
            object.__setattr__(self, "rho", 0.5 if self.tag in LOW_DIM else 0.9)
        if not -1 < self.rho < 1:
            raise ValidationError("rho must lie in (-1, 1)")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        if self.design not in ("toeplitz", "csv"):
            raise ValidationError("design must be 'toeplitz' or 'csv'")
        if self.design == "csv" and not self.csv_path:
            raise ValidationError("design=csv needs a csv_path")
        if self.n < 2 or self.p < 1:
            raise ValidationError("n must be >= 2 and p >= 1")


@dataclass
class Draw:
    """One simulated replicate: data plus whatever truth is needed for scoring."""

    ds: Dataset | None = None
    truth: float | None = None
    weights: WeightSpec | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    w: np.ndarray | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def unit_norm_columns(z: np.ndarray) -> np.ndarray:
    """Centre columns and scale each to unit Euclidean norm."""
    zc = z - z.mean(axis=0)
    norms = np.linalg.norm(zc, axis=0)
    if np.any(norms == 0):
        raise ValidationError("design has a constant column")
    return zc / norms


def _fixed_design(sc: Scenario, base: Rng, csv_design):
    # scaled like the classic diabetes covariates: centred, unit-norm columns
    rng = base.child(0)
    return unit_norm_columns(_design(sc.n, sc.p, rng, sc.rho, csv_design))


def draw_replicate(sc: Scenario, k: int, base: Rng | None = None, csv_design=None, fixed=None) -> Draw:
    base = Rng(sc.seed) if base is None else base
    rng = base.child(k + 1)
    tag = sc.tag
    if tag in ("example1-null", "example1-alt"):
        z = _fixed_design(sc, base, csv_design) if fixed is None else fixed
        return Draw(gen_example1(z, rng, alt=tag.endswith("alt")), truth=1.0 if tag.endswith("alt") else 0.0)
    if tag == "poisson-misspec":
        z = _fixed_design(sc, base, csv_design) if fixed is None else fixed
        x = z.sum(axis=1) + (rng.exponential(sc.n) - 1.0)
        y = gen_poisson_misspec(z, x, sc.sigma, rng)
        return Draw(Dataset(y, x, with_intercept(z)), truth=0.0)
    if tag.startswith("partial-linear-"):
        ds, th = gen_partial_linear(
            tag[-1], sc.n, sc.p, rng, exposure_index=k % 12, rho=sc.rho, csv_design=csv_design, theta=sc.theta
        )
        return Draw(ds, truth=th)
    if tag.startswith("logistic-hd-"):
        setup = base.child(SETUP_OFFSET + k % LOGISTIC_SETUPS)
        ds = gen_logistic_hd(sc.n, sc.p, rng, tag.endswith("alt"), sc.rho, csv_design, setup_rng=setup)
        return Draw(ds, truth=0.0, extra={"setup": k % LOGISTIC_SETUPS})
    if tag == "toeplitz-confint":
        ds, th = gen_toeplitz_confint(sc.n, sc.p, rng, sc.rho)
        return Draw(ds, truth=th)
    if tag == "sparse-linear-null":
        ds, by, bx = gen_sparse_linear(sc.n, sc.p, rng, sc.sparsity, sc.rho)
        return Draw(ds, truth=0.0, extra={"beta_y": by, "beta_x": bx})
    if tag == "hetero-linear-null":
        ds, w, by, bx = gen_hetero_linear(sc.n, sc.p, rng, sc.sparsity, sc.rho)
        return Draw(ds, truth=0.0, weights=w, extra={"beta_y": by, "beta_x": bx})
    if tag == "wbeta-sparse":
        y, z, w, truth = gen_wbeta(sc.n, sc.p, rng, sc.sparsity, sc.rho)
        return Draw(None, truth=truth, y=y, z=z, w=w)
    raise ValidationError(f"unknown scenario '{tag}'")


# ------------------------------------------------------------------ #
# Methods
# ------------------------------------------------------------------ #

TEST_METHODS = ("t-ols", "t-ols-exact", "t-glm", "t-def", "t-db", "t-w-def", "t-glm-def")
INTERVAL_METHODS = ("ci", "db-ci", "wbeta-ci")
METHODS = TEST_METHODS + INTERVAL_METHODS


def _family_for(tag: str):
    if tag == "poisson-misspec":
        return POISSON
    if tag.startswith("logistic-hd"):
        return BINOMIAL
    return GAUSSIAN


def _shifted(draw: Draw, tag: str) -> Dataset:
    # partially linear scenarios are tested at the true theta
    if tag.startswith("partial-linear") or tag == "toeplitz-confint":
        ds = draw.ds
        return ds.with_response(ds.y - draw.truth * ds.x)
    return draw.ds


def run_method(method: str, draw: Draw, sc: Scenario, alpha: float, lam: float | None) -> dict[str, Any]:
    """Apply ``method`` to one replicate and return a flat record."""
    tag = sc.tag
    if method == "wbeta-ci":
        if draw.y is None:
            raise ValidationError("wbeta-ci needs the wbeta-sparse scenario")
        iv = wbeta_region(draw.y, draw.z, draw.w, alpha, lam)
        path = WbetaPath(draw.y, draw.z, draw.w, lam, warm=False)
        stat = path(draw.truth)
        return _interval_record(iv, draw.truth, stat)
    if draw.ds is None:
        raise ValidationError(f"method {method} needs a (y, x, z) scenario")
    if method == "ci":
        iv = confidence_interval(draw.ds, alpha, lam, lam)
        stat = DefPath(draw.ds, lam, lam, warm=False)(draw.truth)
        return _interval_record(iv, draw.truth, stat)
    if method == "db-ci":
        iv = debiased_interval(draw.ds, alpha, lam, lam)
        half = 0.5 * iv.width
        se = half / stats.norm.isf(alpha / 2)
        stat = (iv.center - draw.truth) / se if se > 0 else 0.0
        return _interval_record(iv, draw.truth, stat)
    ds = _shifted(draw, tag)
    if method == "t-ols":
        res = t_ols(ds)
    elif method == "t-ols-exact":
        res = t_ols_exact(ds)
    elif method == "t-glm":
        res = t_glm(ds, _family_for(tag))
    elif method == "t-def":
        res = t_def(ds, lam, lam)
    elif method == "t-db":
        res = t_db(ds, lam, lam)
    elif method == "t-w-def":
        w = draw.weights if draw.weights is not None else WeightSpec.unit(ds.n)
        res = t_w_def(ds.y, ds.x, ds.z, w, lam)
    elif method == "t-glm-def":
        fam = _family_for(tag)
        res = t_glm_def(ds, fam, fam, lam)
    else:
        raise ValidationError(f"unknown method '{method}'")
    rec = {"statistic": res.statistic, "p_value": res.p_value}
    for key, val in res.diagnostics.items():
        if isinstance(val, (int, float, bool, np.floating, np.integer)):
            rec[key] = float(val) if not isinstance(val, bool) else val
    if method in ("t-ols", "t-ols-exact", "t-glm") and sc.tag.startswith("example1"):
        _, fit = classical_t(ds)
        rec["theta_hat"] = float(fit.coefficients[0])
    return rec


def _interval_record(iv, truth: float, stat: float) -> dict[str, Any]:
    return {
        "statistic": float(stat),
        "p_value": normal_pvalue(stat),
        "lower": iv.lower,
        "upper": iv.upper,
        "truth": truth,
        "covered": bool(iv.contains(truth)),
        "evaluations": iv.evaluations,
        "disconnected_flag": iv.disconnected_flag,
    }


# ------------------------------------------------------------------ #
# Runner
# ------------------------------------------------------------------ #


@dataclass
class McSummary:
    scenario: Scenario
    method: str
    replicates: int
    records: list[dict[str, Any]]
    failures: list[tuple[int, str]]
    alpha: float = 0.05
    lam: float | None = None

    @property
    def ok_records(self) -> list[dict[str, Any]]:
        return [r for r in self.records if "error" not in r]

    @property
    def p_values(self) -> np.ndarray:
        return np.array([r["p_value"] for r in self.ok_records])

    @property
    def statistics(self) -> np.ndarray:
        return np.array([r["statistic"] for r in self.ok_records])

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.ok_records])

    def rejection_rate(self, alpha: float | None = None) -> float:
        a = self.alpha if alpha is None else alpha
        pv = self.p_values
        return float(np.mean(pv <= a)) if pv.size else math.nan

    @property
    def coverage(self) -> float | None:
        recs = self.ok_records
        if not recs or "covered" not in recs[0]:
            return None
        return float(np.mean([r["covered"] for r in recs]))

    @property
    def ks_vs_uniform(self) -> float:
        pv = self.p_values
        return float(stats.kstest(pv, "uniform").statistic) if pv.size else math.nan

    @property
    def ks_vs_normal(self) -> float:
        st = self.statistics
        return float(stats.kstest(st, "norm").statistic) if st.size else math.nan

    def summary_dict(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "kind": "summary",
            "scenario": self.scenario.tag,
            "method": self.method,
            "replicates": self.replicates,
            "failed_replicates": len(self.failures),
            "failures": [{"replicate": k, "error": msg} for k, msg in self.failures],
            "rejection_rate_05": self.rejection_rate(0.05),
            "coverage": self.coverage,
            "ks_vs_uniform": self.ks_vs_uniform,
            "seed": self.scenario.seed,
            "n": self.scenario.n,
            "p": self.scenario.p,
            "alpha": self.alpha,
            "lambda": self.lam,
            "scenario_parameters": {k: v for k, v in asdict(self.scenario).items() if k not in ("tag", "seed")},
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "pvalues.csv",
            "# replicate: replicate index; p_value: two-sided p-value; statistic: test statistic",
            ["replicate", "p_value", "statistic"],
            [(r["replicate"], r["p_value"], r["statistic"]) for r in self.ok_records],
        )
        pv = np.sort(self.p_values)
        m = pv.size
        _write_csv(
            out / "ecdf.csv",
            "# p: sorted p-value; ecdf: empirical distribution function at p",
            ["p", "ecdf"],
            [(float(v), (i + 1) / m) for i, v in enumerate(pv)],
        )
        if self.coverage is not None:
            _write_csv(
                out / "coverage.csv",
                "# replicate: index; lower/upper: interval endpoints; truth: target; covered: 1 if truth in interval",
                ["replicate", "lower", "upper", "truth", "covered"],
                [(r["replicate"], r["lower"], r["upper"], r["truth"], int(r["covered"])) for r in self.ok_records],
            )
        (out / "summary.json").write_text(dumps(self.summary_dict()) + "\n", encoding="utf-8")


def fmt_number(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v):.17g}") if math.isfinite(v) else None
    return v


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return fmt_number(obj)


def dumps(obj: Any) -> str:
    """JSON with 17 significant digits and non-finite numbers mapped to null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


def _fmt_cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _write_csv(path: Path, comment: str, header: list[str], rows) -> None:
    lines = [comment, ",".join(header)]
    lines += [",".join(_fmt_cell(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def scenario_lambda(sc: Scenario, mode: str = "quantile", a: float = 1.05) -> float | None:
    if sc.tag in LOW_DIM:
        return None
    p = sc.p - 1 if sc.tag.startswith("partial-linear") or sc.tag == "toeplitz-confint" else sc.p
    return select_lambda(sc.n, p, mode, a)


def run_monte_carlo(
    scenario: Scenario,
    method: str,
    replicates: int,
    alpha: float = 0.05,
    lam: float | None = None,
    lambda_mode: str = "quantile",
    a: float = 1.05,
    threads: int = 1,
    max_failure_fraction: float = MAX_FAILURE_FRACTION,
) -> McSummary:
    """Run ``replicates`` independent draws of ``scenario`` through ``method``.

    Replicates raising a package error are recorded with their message and
    excluded from the summaries; more than ``max_failure_fraction`` of them
    aborts the run with :class:`McFailureError`.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method '{method}'; choose from {METHODS}")
    if replicates < 1:
        raise ValidationError("replicates must be positive")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    sc = scenario
    csv_design = load_design(sc.csv_path) if sc.design == "csv" else None
    base = Rng(sc.seed)
    fixed = _fixed_design(sc, base, csv_design) if sc.tag in LOW_DIM else None
    if lam is None:
        lam = scenario_lambda(sc, lambda_mode, a)

    def one(k: int) -> dict[str, Any]:
        try:
            draw = draw_replicate(sc, k, base, csv_design, fixed)
            rec = run_method(method, draw, sc, alpha, lam)
        except (DefError, np.linalg.LinAlgError) as exc:
            log.debug("replicate %d failed: %s", k, exc)
            return {"replicate": k, "error": f"{type(exc).__name__}: {exc}"}
        rec["replicate"] = k
        return rec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(replicates)))
    else:
        records = [one(k) for k in range(replicates)]
    records.sort(key=lambda r: r["replicate"])
    failures = [(r["replicate"], r["error"]) for r in records if "error" in r]
    summary = McSummary(sc, method, replicates, records, failures, alpha, lam)
    if len(failures) > max_failure_fraction * replicates:
        raise McFailureError(
            f"{len(failures)} of {replicates} replicates failed (first: {failures[0][1]})"
        )
    return summary


def with_seed(sc: Scenario, seed: int) -> Scenario:
    return replace(sc, seed=seed)
