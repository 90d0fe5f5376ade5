from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import sparse_linear
from def_inference.ci_inversion import (
    DefPath,
    Interval,
    NoCrossingError,
    WbetaPath,
    confidence_interval,
    debiased_interval,
    invert_statistic,
    t_def_at,
    wbeta_region,
    wbeta_test,
    z_quantile,
)
from def_inference.def_high_dim import t_def
from def_inference.model_core import Dataset, Rng, ValidationError
from def_inference.sim_harness import gen_toeplitz_confint
from def_inference.sqrt_lasso import default_lambda


@pytest.fixture
def data(gen) -> Dataset:
    return sparse_linear(gen, n=80, p=120, theta=1.5)


def test_z_quantile():
    assert math.isclose(z_quantile(0.05), 1.959963984540054, rel_tol=1e-14)
    with pytest.raises(ValidationError):
        z_quantile(1.0)


def test_t_def_at_zero_is_t_def(data):
    lam = default_lambda(data.n, data.p)
    assert t_def_at(data, 0.0, lam, lam) == pytest.approx(t_def(data, lam, lam).statistic, rel=1e-12)


def test_location_equivariance(data, gen):
    lam = 0.3
    for c in (-2.0, 0.7):
        moved = Dataset(data.y + c * data.x, data.x, data.z)
        for t in (-1.0, 0.4, 2.5):
            assert abs(t_def_at(moved, t, lam, lam) - t_def_at(data, t - c, lam, lam)) <= 1e-9


def test_endpoint_certification(data):
    iv = confidence_interval(data, 0.05)
    lam = default_lambda(data.n, data.p)
    z = z_quantile(0.05)
    assert iv.lower < iv.upper
    for end in (iv.lower, iv.upper):
        assert abs(abs(t_def_at(data, end, lam, lam)) - z) <= 1e-2
    assert iv.lower <= iv.center <= iv.upper
    assert iv.evaluations > 0 and iv.warm_hits > 0


def test_nesting_in_alpha(data):
    wide = confidence_interval(data, 0.05)
    narrow = confidence_interval(data, 0.5)
    assert wide.lower < narrow.lower < narrow.upper < wide.upper


def test_warm_start_neutrality(data):
    warm = confidence_interval(data, 0.05, warm=True)
    cold = confidence_interval(data, 0.05, warm=False)
    assert abs(warm.lower - cold.lower) <= 1e-4
    assert abs(warm.upper - cold.upper) <= 1e-4
    assert cold.warm_hits == 0


def test_location_shift_moves_interval(data):
    c = 3.0
    a = confidence_interval(data, 0.05)
    b = confidence_interval(Dataset(data.y + c * data.x, data.x, data.z), 0.05)
    tol = 1e-2 * a.width
    assert abs(b.lower - a.lower - c) <= tol and abs(b.upper - a.upper - c) <= tol


def test_invert_statistic_linear_oracle():
    # T(t) = 2 (1 - t): acceptance region is [1 - z/2, 1 + z/2]
    iv = invert_statistic(lambda t: 2.0 * (1.0 - t), 0.0, 0.5, 0.05)
    z = z_quantile(0.05)
    assert abs(iv.lower - (1 - z / 2)) < 1e-3 and abs(iv.upper - (1 + z / 2)) < 1e-3
    assert not iv.disconnected_flag


def test_invert_statistic_start_outside_region():
    iv = invert_statistic(lambda t: 5.0 - t, 0.0, 0.25, 0.05)
    assert iv.contains(5.0)


def test_disconnected_region_flag():
    # accepted on |t| < 0.3 and again on a small island inside the final bracket
    def stat(t):
        return 0.0 if abs(t) < 0.3 or 0.42 < t < 0.46 else 10.0

    iv = invert_statistic(stat, 0.0, 0.5, 0.05)
    assert iv.disconnected_flag
    assert iv.contains(0.0) and not iv.contains(0.44)
    assert abs(iv.upper - 0.3) < 1e-3


def test_no_crossing_error():
    with pytest.raises(NoCrossingError):
        invert_statistic(lambda t: 0.0, 0.0, 1.0, 0.05)
    with pytest.raises(NoCrossingError):
        invert_statistic(lambda t: 10.0, 0.0, 1.0, 0.05)


def test_interval_serialisation():
    iv = Interval(0.0, 1.0, 0.05, 3, 1, False, 0.5)
    d = iv.to_dict()
    assert d["lower"] == 0.0 and d["upper"] == 1.0 and iv.width == 1.0


def test_debiased_interval_contains_estimate(data):
    iv = debiased_interval(data, 0.05)
    assert iv.lower < iv.center < iv.upper
    assert iv.width < 2.0


def test_monotone_probe_two_crossings():
    rng = Rng(404)
    z = z_quantile(0.05)
    good = 0
    reps = 10
    for k in range(reps):
        ds, theta = gen_toeplitz_confint(200, 500, rng.child(k))
        lam = default_lambda(200, 500)
        path = DefPath(ds, lam, lam)
        grid = np.linspace(theta - 1.5, theta + 1.5, 41)
        vals = np.array([abs(path(float(t))) - z for t in grid])
        crossings = int(np.sum(np.sign(vals[1:]) != np.sign(vals[:-1])))
        good += crossings == 2
    assert good >= 0.9 * reps


# ---------------------------------------------------------------- w' beta


def test_wbeta_zero_vector_rejected(gen):
    z = gen.standard_normal((30, 5))
    with pytest.raises(ValidationError):
        wbeta_test(gen.standard_normal(30), z, np.zeros(5), 0.0)
    with pytest.raises(ValidationError):
        WbetaPath(gen.standard_normal(30), z, np.ones(4), 0.3)


def test_wbeta_basis_vector_matches_def_interval(gen):
    n, p, j = 80, 60, 2
    z = gen.standard_normal((n, p))
    beta = np.zeros(p)
    beta[[0, j, 5]] = [1.0, 0.8, -1.0]
    y = z @ beta + gen.standard_normal(n)
    w = np.zeros(p)
    w[j] = 1.0
    lam = 0.3
    region = wbeta_region(y, z, w, 0.05, lam)
    ds = Dataset(y, z[:, j], np.delete(z, j, axis=1))
    ci = confidence_interval(ds, 0.05, lam, lam)
    # same statistic at every t
    for t in (0.0, 0.8, 1.5):
        assert abs(wbeta_test(y, z, w, t, lam) - t_def_at(ds, t, lam, lam)) <= 1e-9
    tol = 1e-2 * ci.width
    assert abs(region.lower - ci.lower) <= tol and abs(region.upper - ci.upper) <= tol


def test_wbeta_power_grows_with_shift(gen):
    n, p = 100, 80
    z = gen.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:3] = 1.0
    y = z @ beta + gen.standard_normal(n)
    w = np.ones(p) / math.sqrt(p)
    truth = float(w @ beta)
    path = WbetaPath(y, z, w, default_lambda(n, p))
    mags = [abs(path(truth + s)) for s in (0.0, 1.0, 3.0)]
    assert mags[0] < mags[1] < mags[2]


def test_wbeta_nesting(gen):
    n, p = 80, 60
    z = gen.standard_normal((n, p))
    y = z[:, :3].sum(axis=1) + gen.standard_normal(n)
    w = np.ones(p) / math.sqrt(p)
    a = wbeta_region(y, z, w, 0.05)
    b = wbeta_region(y, z, w, 0.5)
    assert a.lower < b.lower < b.upper < a.upper
