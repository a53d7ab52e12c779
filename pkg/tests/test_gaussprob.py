import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gaussruin.errors import AccuracyNotReached, NotPositiveDefinite
from gaussruin.gaussprob import (
    UNBOUNDED,
    MvnSpec,
    density,
    log_density,
    orthant_upper,
    tail_upper,
    upper_probability,
)
from oracles import conditional_tail_3d


def test_univariate_tail():
    est = upper_probability([[1.0]], [1.96])
    assert est.value == pytest.approx(stats.norm.sf(1.96), rel=1e-12)
    assert est.value == pytest.approx(0.0249979, abs=1e-7)


def test_univariate_deep_tail_in_log_space():
    est = upper_probability([[1.0]], [40.0])
    assert est.log_value == pytest.approx(stats.norm.logsf(40.0), rel=1e-12)


@pytest.mark.parametrize("rho", [-0.9, -0.3, 0.0, 0.5, 0.95])
def test_bivariate_orthant_arcsine(rho):
    est = upper_probability([[1, rho], [rho, 1]], [0.0, 0.0])
    assert est.value == pytest.approx(0.25 + math.asin(rho) / (2 * math.pi), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    rho=st.floats(-0.95, 0.95),
    h=st.floats(-3, 3),
    k=st.floats(-3, 3),
    s1=st.floats(0.2, 5),
    s2=st.floats(0.2, 5),
)
def test_bivariate_matches_scipy(rho, h, k, s1, s2):
    cov = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
    est = upper_probability(cov, [h * s1, k * s2])
    # P(X > l) = P(-X < -l)
    ref = stats.multivariate_normal(np.zeros(2), [[1, rho], [rho, 1]]).cdf([-h, -k])
    assert est.value == pytest.approx(ref, abs=2e-7)


def test_bivariate_deep_tail_relative_accuracy():
    rho = 0.3
    est = upper_probability([[1, rho], [rho, 1]], [8.0, 7.0])
    # conditional-quadrature oracle
    from scipy import integrate

    s = math.sqrt(1 - rho * rho)
    ref = integrate.quad(lambda x: stats.norm.pdf(x) * stats.norm.sf((7.0 - rho * x) / s), 8.0, 20.0,
                         epsabs=0, epsrel=1e-12)[0]
    assert est.value == pytest.approx(ref, rel=1e-8)


def test_trivariate_identity_orthant():
    est = upper_probability(np.eye(3), [0.0, 0.0, 0.0])
    assert est.value == pytest.approx(0.125, abs=1e-6)


@pytest.mark.parametrize("rho", [-0.3, 0.2, 0.7])
def test_trivariate_equicorrelated_orthant(rho):
    cov = np.full((3, 3), rho) + (1 - rho) * np.eye(3)
    est = upper_probability(cov, [0.0, 0.0, 0.0], abs_tol=1e-7)
    assert est.value == pytest.approx(0.125 + 3 * math.asin(rho) / (4 * math.pi), abs=5e-7)


def test_trivariate_tail_against_conditional_quadrature():
    cov = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.4], [0.2, 0.4, 1.0]])
    lower = [1.0, 0.5, 0.8]
    est = upper_probability(cov, lower, abs_tol=1e-7)
    ref = conditional_tail_3d(cov, lower)
    assert est.value == pytest.approx(ref, abs=5e-6)
    assert abs(est.value - ref) <= 3 * est.error + 5e-6


def test_independent_tail_factorises():
    lower = np.array([2.0, 2.5, 3.0, 1.5])
    est = upper_probability(np.eye(4), lower, abs_tol=0, rel_tol=1e-4)
    assert est.value == pytest.approx(np.prod(stats.norm.sf(lower)), rel=1e-3)


def test_unbounded_coordinates_are_marginalised():
    cov = np.array([[1.0, 0.5, 0.1], [0.5, 1.0, 0.3], [0.1, 0.3, 1.0]])
    est = upper_probability(cov, [1.0, UNBOUNDED, -math.inf])
    assert est.value == pytest.approx(stats.norm.sf(1.0), rel=1e-12)
    assert upper_probability(cov, [UNBOUNDED] * 3).value == 1.0


def test_tail_upper_and_orthant_with_means():
    spec = MvnSpec(mean=[1.0, -1.0], cov=[[1.0, 0.2], [0.2, 2.0]])
    a = tail_upper(spec, [1.0, -1.0]).value
    b = orthant_upper(MvnSpec(mean=[0.0, 0.0], cov=spec.cov)).value
    assert a == pytest.approx(b, abs=1e-14)


def test_log_density_matches_scipy():
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    spec = MvnSpec(mean=[0.5, -0.2], cov=cov)
    x = [1.0, 0.7]
    ref = stats.multivariate_normal([0.5, -0.2], cov).logpdf(x)
    assert log_density(spec, x) == pytest.approx(ref, rel=1e-12)
    assert density(spec, x) == pytest.approx(math.exp(ref), rel=1e-12)


def test_rejects_non_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        upper_probability([[1.0, 1.2], [1.2, 1.0]], [0.0, 0.0])
    with pytest.raises(NotPositiveDefinite):
        MvnSpec(mean=[0, 0], cov=[[1.0, 0.5], [0.2, 1.0]])
    bad = np.array([[1, 0.9, 0.9], [0.9, 1, -0.9], [0.9, -0.9, 1]])
    with pytest.raises(NotPositiveDefinite):
        upper_probability(bad, [0, 0, 0])


def test_budget_exhaustion_warns_and_flags():
    cov = np.array([[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 1.0]])
    with pytest.warns(AccuracyNotReached):
        est = upper_probability(cov, [0.1, 0.2, 0.3], abs_tol=1e-14, rel_tol=1e-12, max_points=2048)
    assert not est.converged
    assert 0 < est.value < 1


def test_seed_reproducible():
    cov = np.array([[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 1.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = upper_probability(cov, [1, 1, 1], seed=3)
        b = upper_probability(cov, [1, 1, 1], seed=3)
    assert a.value == b.value


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 2.0))
def test_monotone_in_threshold(seed, shift):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(3, 3))
    cov = B @ B.T + 0.3 * np.eye(3)
    lower = rng.normal(size=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p0 = upper_probability(cov, lower)
        p1 = upper_probability(cov, lower + shift)
    assert p1.value <= p0.value + 3 * (p0.error + p1.error) + 1e-12
