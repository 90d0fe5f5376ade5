"""Shared domain types: datasets, GLM families, test results and seeded RNG.

Everything here is immutable after construction.  Random streams are
derived from a single 64-bit seed through :class:`numpy.random.SeedSequence`
spawning, so replicate ``k`` of a simulation always sees the same draws
no matter how many workers run the study or in which order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats


class DefError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DefError, ValueError):
    """Bad user input: malformed data, missing columns, illegal parameters."""


class NumericalError(DefError, ArithmeticError):
    """A computation could not be completed (rank loss, divergence, ...)."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, last_iterate: Any = None):
        super().__init__(message)
        self.last_iterate = last_iterate


# ------------------------------------------------------------------ #
# Dataset
# ------------------------------------------------------------------ #


def _as_finite(a: Any, name: str, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Response ``y``, exposure ``x`` and controls ``z`` (n x p)."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    column_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        y = _as_finite(self.y, "y", 1)
        x = _as_finite(self.x, "x", 1)
        n = y.shape[0]
        z = np.array(self.z, dtype=float)
        if z.ndim == 1 and z.size == 0:
            z = np.empty((n, 0))
        z = _as_finite(z, "z", 2)
        if n < 1:
            raise ValidationError("dataset must have at least one row")
        if x.shape[0] != n or z.shape[0] != n:
            raise ValidationError(
                f"row counts disagree: y has {n}, x has {x.shape[0]}, z has {z.shape[0]}"
            )
        if self.column_names is not None and len(self.column_names) != z.shape[1]:
            raise ValidationError("column_names must label every column of z")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def with_response(self, y: np.ndarray) -> Dataset:
        return Dataset(y, self.x, self.z, self.column_names)

    def swapped(self) -> Dataset:
        """Exchange the roles of response and exposure."""
        return Dataset(self.x, self.y, self.z, self.column_names)


def read_table(path: str | Path, required: Sequence[str] = ()) -> tuple[list[str], np.ndarray]:
    """Parse a numeric comma-separated file with a header row.

    Cells are parsed with :func:`float` (dot decimal, locale independent);
    ``nan``/``inf`` are rejected.  Errors name the file, line and column.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        for col in required:
            if col not in header:
                raise ValidationError(f"{path}: missing column '{col}'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
                )
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {lineno}, column '{col}': cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ValidationError(
                        f"{path}: line {lineno}, column '{col}': non-finite value {cell!r}"
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def load_dataset(path: str | Path, response_col: str, exposure_col: str) -> Dataset:
    """Read a CSV with a header row into a :class:`Dataset`.

    Every column other than the response and exposure becomes a control,
    in file order.
    """
    if response_col == exposure_col:
        raise ValidationError("response and exposure must be different columns")
    header, data = read_table(path, (response_col, exposure_col))
    iy, ix = header.index(response_col), header.index(exposure_col)
    zcols = [i for i in range(len(header)) if i not in (iy, ix)]
    return Dataset(data[:, iy], data[:, ix], data[:, zcols], tuple(header[i] for i in zcols))


def write_dataset(
    ds: Dataset, path: str | Path, response_col: str = "y", exposure_col: str = "x"
) -> None:
    """Write ``ds`` as CSV; ``repr`` floats make the round trip exact."""
    names = ds.column_names or tuple(f"z{j + 1}" for j in range(ds.p))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([response_col, exposure_col, *names])
        for i in range(ds.n):
            w.writerow([repr(float(ds.y[i])), repr(float(ds.x[i]))] + [repr(float(v)) for v in ds.z[i]])


def standardize_columns(m: np.ndarray, names: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rescale columns to unit mean square (no centring).

    Returns the scaled matrix and the per-column multipliers, i.e. the
    diagonal of the scaling matrix applied on the right.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValidationError("expected a matrix")
    n = m.shape[0]
    sd = m.std(axis=0)
    rms = np.sqrt(np.einsum("ij,ij->j", m, m) / n)
    bad = np.flatnonzero(~(sd > 1e-12 * np.maximum(rms, 1e-300)))
    if bad.size:
        j = int(bad[0])
        label = names[j] if names is not None else f"column {j}"
        raise ValidationError(f"degenerate column: {label} has zero empirical standard deviation")
    scale = 1.0 / rms
    return m * scale, scale


# ------------------------------------------------------------------ #
# GLM families
# ------------------------------------------------------------------ #

ETA_CLIP = 30.0


def _expit(eta: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


@dataclass(frozen=True)
class GlmFamily:
    """Canonical-link family: mean, its derivative, variance and loglik derivatives.

    ``score(eta, y)`` is the derivative of the log-likelihood with respect
    to the linear predictor and ``score_derivative`` its second derivative.
    """

    tag: str
    mean: Callable[[np.ndarray], np.ndarray]
    mean_derivative: Callable[[np.ndarray], np.ndarray]
    variance: Callable[[np.ndarray], np.ndarray]
    clip: float | None = None

    def clamp(self, eta: np.ndarray) -> np.ndarray:
        if self.clip is None:
            return eta
        return np.clip(eta, -self.clip, self.clip)

    def score(self, eta: np.ndarray, y: np.ndarray) -> np.ndarray:
        return y - self.mean(self.clamp(eta))

    def score_derivative(self, eta: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        return -self.mean_derivative(self.clamp(eta))

    def loglik(self, eta: np.ndarray, y: np.ndarray) -> float:
        eta = self.clamp(eta)
        if self.tag == "gaussian-identity":
            return -0.5 * float(np.sum((y - eta) ** 2))
        if self.tag == "binomial-logit":
            return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        return float(np.sum(y * eta - np.exp(eta)))

    def check_support(self, y: np.ndarray) -> None:
        if self.tag == "binomial-logit" and not np.all((y == 0) | (y == 1)):
            raise ValidationError("binomial-logit response must be 0/1")
        if self.tag == "poisson-log" and not (np.all(y >= 0) and np.all(y == np.round(y))):
            raise ValidationError("poisson-log response must be non-negative integers")

    def null_mean(self, y: np.ndarray) -> float:
        """Mean of ``y`` clipped into the interior of the support."""
        m = float(np.mean(y))
        if self.tag == "binomial-logit":
            return min(max(m, 1e-3), 1 - 1e-3)
        if self.tag == "poisson-log":
            return max(m, 1e-3)
        return m


GAUSSIAN = GlmFamily(
    "gaussian-identity",
    mean=lambda eta: np.asarray(eta, dtype=float),
    mean_derivative=lambda eta: np.ones_like(eta, dtype=float),
    variance=lambda m: np.ones_like(m, dtype=float),
)
BINOMIAL = GlmFamily(
    "binomial-logit",
    mean=_expit,
    mean_derivative=lambda eta: _expit(eta) * _expit(-eta),
    variance=lambda m: m * (1.0 - m),
    clip=ETA_CLIP,
)
POISSON = GlmFamily(
    "poisson-log",
    mean=np.exp,
    mean_derivative=np.exp,
    variance=lambda m: np.asarray(m, dtype=float),
    clip=ETA_CLIP,
)

FAMILIES = {
    "gaussian": GAUSSIAN,
    "gaussian-identity": GAUSSIAN,
    "binomial": BINOMIAL,
    "binomial-logit": BINOMIAL,
    "logistic": BINOMIAL,
    "poisson": POISSON,
    "poisson-log": POISSON,
}


def get_family(name: str) -> GlmFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValidationError(f"unknown family '{name}'; choose from {sorted(FAMILIES)}") from None


# ------------------------------------------------------------------ #
# Results
# ------------------------------------------------------------------ #


def normal_pvalue(statistic: float) -> float:
    """Two-sided p-value against N(0, 1)."""
    return float(min(1.0, 2.0 * stats.norm.sf(abs(statistic))))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def one_sided(self, alternative: str) -> float:
        """p-value for ``greater``/``less`` alternatives (normal reference)."""
        if alternative == "greater":
            return float(stats.norm.sf(self.statistic))
        if alternative == "less":
            return float(stats.norm.cdf(self.statistic))
        raise ValidationError(f"unknown alternative '{alternative}'")

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "diagnostics": dict(self.diagnostics),
        }


# ------------------------------------------------------------------ #
# Seeded randomness
# ------------------------------------------------------------------ #


class Rng:
    """PCG64 stream with reproducible child streams.

    ``spawn(k)`` derives ``k`` independent children from the seed
    sequence; child ``i`` depends only on the parent seed and ``i``.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._ss = seed
        else:
            seed = int(seed)
            if not 0 <= seed < 2**64:
                raise ValidationError("seed must be an unsigned 64-bit integer")
            self._ss = np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._ss))

    @property
    def seed(self) -> int | None:
        entropy = self._ss.entropy
        return int(entropy) if isinstance(entropy, int) else None

    def spawn(self, k: int) -> list[Rng]:
        return [Rng(s) for s in self._ss.spawn(k)]

    def child(self, index: int) -> Rng:
        """Child stream ``index`` without materialising the earlier ones."""
        ss = np.random.SeedSequence(self._ss.entropy, spawn_key=(*self._ss.spawn_key, index))
        return Rng(ss)

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self.generator.normal(loc, scale, size)

    def uniform(self, size=None, low=0.0, high=1.0):
        return self.generator.uniform(low, high, size)

    def exponential(self, size=None, scale=1.0):
        return self.generator.exponential(scale, size)

    def bernoulli(self, prob, size=None):
        return (self.generator.uniform(size=size if size is not None else np.shape(prob)) < prob).astype(float)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size).astype(float)

    def chisq1(self, size=None):
        return self.generator.chisquare(1.0, size)

    def toeplitz_normal(self, n: int, p: int, rho: float) -> np.ndarray:
        """Rows i.i.d. N(0, S) with S[j, k] = rho ** |j - k| (AR(1) recursion)."""
        if not -1 < rho < 1:
            raise ValidationError("rho must lie in (-1, 1)")
        e = self.generator.standard_normal((n, p))
        out = np.empty((n, p))
        if p == 0:
            return out
        out[:, 0] = e[:, 0]
        c = math.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            out[:, j] = rho * out[:, j - 1] + c * e[:, j]
        return out
