from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from def_inference.model_core import (
    BINOMIAL,
    FAMILIES,
    GAUSSIAN,
    POISSON,
    ConvergenceError,
    Dataset,
    NumericalError,
    Rng,
    TestResult,
    ValidationError,
    get_family,
    load_dataset,
    normal_pvalue,
    standardize_columns,
    write_dataset,
)


# ---------------------------------------------------------------- Dataset


def test_dataset_shapes():
    ds = Dataset(np.arange(4.0), np.ones(4), np.zeros((4, 2)))
    assert (ds.n, ds.p) == (4, 2)
    assert Dataset(np.ones(3), np.ones(3), np.zeros((3, 0))).p == 0


@pytest.mark.parametrize(
    "y, x, z",
    [
        (np.ones(3), np.ones(4), np.zeros((3, 1))),
        (np.ones(3), np.ones(3), np.zeros((2, 1))),
        (np.array([1.0, np.nan, 2.0]), np.ones(3), np.zeros((3, 1))),
        (np.ones(3), np.array([1.0, np.inf, 2.0]), np.zeros((3, 1))),
        (np.ones(0), np.ones(0), np.zeros((0, 1))),
    ],
)
def test_dataset_rejects_bad_input(y, x, z):
    with pytest.raises(ValidationError):
        Dataset(y, x, z)


def test_swapped_and_with_response():
    ds = Dataset(np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.zeros((2, 1)))
    sw = ds.swapped()
    assert np.array_equal(sw.y, ds.x) and np.array_equal(sw.x, ds.y)
    assert np.array_equal(ds.with_response(np.array([5.0, 6.0])).y, [5.0, 6.0])


def _write(tmp_path, text):
    path = tmp_path / "d.csv"
    path.write_text(text)
    return path


def test_load_small_csv(tmp_path):
    path = _write(tmp_path, "y,x,z1,z2\n1,2,3,4\n5,6,7,8\n9,10,11,12\n13,14,15,16\n")
    ds = load_dataset(path, "y", "x")
    assert (ds.n, ds.p) == (4, 2)
    assert ds.column_names == ("z1", "z2")
    assert np.array_equal(ds.z[:, 1], [4, 8, 12, 16])


def test_load_preserves_z_order_around_named_columns(tmp_path):
    path = _write(tmp_path, "a,y,b,x,c\n1,2,3,4,5\n6,7,8,9,10\n")
    ds = load_dataset(path, "y", "x")
    assert ds.column_names == ("a", "b", "c")
    assert np.array_equal(ds.z[0], [1, 3, 5])


def test_load_nan_cell_reports_location(tmp_path):
    path = _write(tmp_path, "y,x,z1\n1,2,3\n4,NaN,6\n")
    with pytest.raises(ValidationError, match=r"line 3, column 'x'"):
        load_dataset(path, "y", "x")


def test_load_non_numeric_cell(tmp_path):
    path = _write(tmp_path, "y,x,z1\n1,2,abc\n")
    with pytest.raises(ValidationError, match=r"line 2, column 'z1'"):
        load_dataset(path, "y", "x")


def test_load_missing_column(tmp_path):
    path = _write(tmp_path, "y,x,z1\n1,2,3\n")
    with pytest.raises(ValidationError, match="missing column 'w'"):
        load_dataset(path, "y", "w")


def test_load_ragged_row(tmp_path):
    path = _write(tmp_path, "y,x,z1\n1,2\n")
    with pytest.raises(ValidationError, match="2 fields"):
        load_dataset(path, "y", "x")


def test_load_diabetes_shaped(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal(442), rng.standard_normal(442), rng.standard_normal((442, 10)))
    write_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv", "y", "x")
    assert (back.n, back.p) == (442, 10)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4), elements=finite))
def test_csv_round_trip_is_exact(tmp_path_factory, m):
    ds = Dataset(m[:, 0], m[:, 1], m[:, 2:])
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(ds, path)
    back = load_dataset(path, "y", "x")
    assert back.y.tobytes() == ds.y.tobytes()
    assert back.x.tobytes() == ds.x.tobytes()
    assert back.z.tobytes() == ds.z.tobytes()


# ---------------------------------------------------------------- scaling


def test_standardize_constant_column_rejected():
    m = np.column_stack([np.array([1.0, -1.0, 2.0, 0.5, 3.0]), np.full(5, 2.0)])
    with pytest.raises(ValidationError, match="column 1"):
        standardize_columns(m)
    with pytest.raises(ValidationError, match="height"):
        standardize_columns(m, names=["age", "height"])


def test_standardize_examples():
    m, s = standardize_columns(np.array([[1.0], [-1.0], [1.0], [-1.0]]))
    assert np.array_equal(m[:, 0], [1, -1, 1, -1]) and s[0] == 1.0
    m, s = standardize_columns(np.array([[2.0], [-2.0], [2.0], [-2.0]]))
    assert np.allclose(m[:, 0], [1, -1, 1, -1]) and s[0] == 0.5


def test_standardize_no_centering(gen):
    raw = gen.standard_normal((30, 3)) + 5.0
    m, s = standardize_columns(raw)
    assert np.allclose(np.mean(m * m, axis=0), 1.0)
    assert np.allclose(m, raw * s)
    assert np.all(m.mean(axis=0) > 0.9)  # means survive


# ---------------------------------------------------------------- families


def test_family_formulas():
    eta = np.linspace(-3, 3, 7)
    y = np.array([0, 1, 0, 1, 1, 0, 1.0])
    mu = 1 / (1 + np.exp(-eta))
    assert np.allclose(BINOMIAL.mean(eta), mu)
    assert np.allclose(BINOMIAL.variance(mu), mu * (1 - mu))
    assert np.allclose(BINOMIAL.score(eta, y), y - mu)
    assert np.allclose(BINOMIAL.score_derivative(eta, y), -mu * (1 - mu))
    assert np.allclose(POISSON.score(eta, y), y - np.exp(eta))
    assert np.allclose(POISSON.score_derivative(eta, y), -np.exp(eta))
    assert np.allclose(POISSON.variance(np.exp(eta)), np.exp(eta))
    assert np.allclose(GAUSSIAN.score(eta, y), y - eta)
    assert np.allclose(GAUSSIAN.score_derivative(eta, y), -1.0)
    assert np.allclose(GAUSSIAN.variance(eta), 1.0)


@pytest.mark.parametrize("family", list(FAMILIES.values()), ids=list(FAMILIES))
def test_mean_derivative_matches_central_difference(family):
    eta = np.linspace(-5, 5, 41)
    h = 1e-5
    fd = (family.mean(eta + h) - family.mean(eta - h)) / (2 * h)
    assert np.allclose(family.mean_derivative(eta), fd, rtol=1e-6, atol=0)


@pytest.mark.parametrize("family", list(FAMILIES.values()), ids=list(FAMILIES))
@pytest.mark.parametrize("yv", [0.0, 1.0, 3.0])
def test_score_derivative_matches_central_difference(family, yv):
    eta = np.linspace(-5, 5, 41)
    y = np.full_like(eta, yv)
    h = 1e-5
    fd = (family.score(eta + h, y) - family.score(eta - h, y)) / (2 * h)
    du = family.score_derivative(eta, y)
    assert np.all(np.abs(du - fd) <= 1e-6 * (1 + np.abs(du)))


@pytest.mark.parametrize("family", list(FAMILIES.values()), ids=list(FAMILIES))
def test_score_is_loglik_derivative(family):
    eta = np.linspace(-4, 4, 17)
    y = np.ones_like(eta)
    h = 1e-6
    for i in range(eta.size):
        e_plus, e_minus = eta.copy(), eta.copy()
        e_plus[i] += h
        e_minus[i] -= h
        fd = (family.loglik(e_plus, y) - family.loglik(e_minus, y)) / (2 * h)
        assert math.isclose(fd, family.score(eta, y)[i], rel_tol=1e-5, abs_tol=1e-6)


def test_support_checks():
    with pytest.raises(ValidationError):
        BINOMIAL.check_support(np.array([0.0, 0.5]))
    with pytest.raises(ValidationError):
        POISSON.check_support(np.array([1.0, -1.0]))
    with pytest.raises(ValidationError):
        POISSON.check_support(np.array([1.5]))
    with pytest.raises(ValidationError):
        get_family("gamma")
    assert get_family("poisson") is POISSON


# ---------------------------------------------------------------- results


def test_normal_pvalue_and_one_sided():
    assert normal_pvalue(0.0) == 1.0
    assert math.isclose(normal_pvalue(1.959963984540054), 0.05, rel_tol=1e-12)
    r = TestResult(1.0, normal_pvalue(1.0), "t-ols")
    assert math.isclose(r.one_sided("greater") + r.one_sided("less"), 1.0)
    assert math.isclose(2 * r.one_sided("greater"), r.p_value)
    with pytest.raises(ValidationError):
        r.one_sided("sideways")


def test_error_hierarchy():
    err = ConvergenceError("stuck", last_iterate=np.ones(2))
    assert isinstance(err, NumericalError)
    assert np.array_equal(err.last_iterate, np.ones(2))
    assert issubclass(ValidationError, ValueError)


# ---------------------------------------------------------------- Rng


def _draws(seed):
    r = Rng(seed)
    return [
        r.normal(10_000),
        r.uniform(10_000),
        r.exponential(10_000),
        r.bernoulli(np.full(10_000, 0.3)),
        r.poisson(2.5, 10_000),
        r.chisq1(10_000),
    ]


def test_rng_reproducible():
    for a, b in zip(_draws(42), _draws(42)):
        assert a.tobytes() == b.tobytes()
    assert _draws(42)[0].tobytes() != _draws(43)[0].tobytes()


def test_rng_children_independent_of_order():
    base = Rng(7)
    a = base.child(3).normal(5)
    base.child(0).normal(100)
    b = Rng(7).child(3).normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(Rng(7).child(2).normal(5), a)
    kids = Rng(7).spawn(4)
    assert np.array_equal(kids[3].normal(5), a)


def test_rng_seed_bounds():
    with pytest.raises(ValidationError):
        Rng(-1)
    with pytest.raises(ValidationError):
        Rng(2**64)
    assert Rng(2**64 - 1).seed == 2**64 - 1


def test_distribution_moments():
    r = Rng(1)
    assert abs(r.exponential(200_000).mean() - 1) < 0.01
    assert abs(r.chisq1(200_000).mean() - 1) < 0.015
    assert abs(r.bernoulli(np.full(200_000, 0.3)).mean() - 0.3) < 0.005


def test_toeplitz_covariance():
    z = Rng(3).toeplitz_normal(100_000, 4, 0.9)
    c = np.cov(z, rowvar=False)
    target = 0.9 ** np.abs(np.subtract.outer(np.arange(4), np.arange(4)))
    assert np.allclose(c, target, atol=0.02)
    with pytest.raises(ValidationError):
        Rng(3).toeplitz_normal(5, 3, 1.0)
