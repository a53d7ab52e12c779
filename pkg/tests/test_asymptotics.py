import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import random_spec, two_dim
from gaussruin import asymptotics as asy
from gaussruin.errors import AssumptionViolated
from gaussruin.gaussprob import MvnSpec, orthant_upper
from gaussruin.model import ModelSpec, VarianceFunction, covariance_at
from oracles import int_repr_quadrature


def scalar(alpha=1.5, T=1.0, c=0.0, a=1.0, v=None):
    return ModelSpec(A=np.eye(1), v=(v or VarianceFunction.fbm(alpha),), c=[c], a=[a], T=T)


# -- D(t) and its derivative -------------------------------------------------


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
def test_D_scalar_fbm(t):
    assert asy.D_of_t(scalar(1.5), t) == pytest.approx(t**-1.5, rel=1e-12)


def test_D_example_model():
    spec = two_dim(0.5, [1.0, 0.8], T=2.0)
    vT = 2.0**1.5
    assert asy.D_of_t(spec, 2.0) == pytest.approx(0.84 / (0.75 * vT), rel=1e-12)


def test_D_full_and_restricted_forms_agree():
    rng = np.random.default_rng(11)
    for _ in range(20):
        spec = random_spec(rng, int(rng.integers(2, 5)))
        for t in (0.3, 0.7, 1.0):
            assert asy.D_full_form(spec, t) == pytest.approx(asy.D_of_t(spec, t), rel=1e-10)


def test_dD_brownian_scalar():
    spec = scalar(v=VarianceFunction.brownian())
    assert asy.dD_at_T(spec) == pytest.approx(-1.0)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.9])
def test_dD_fbm_scalar(alpha):
    assert asy.dD_at_T(scalar(alpha)) == pytest.approx(-alpha, rel=1e-12)


def test_dD_random_3d_vs_finite_difference():
    spec = random_spec(np.random.default_rng(12), 3)
    h = 1e-5
    fd = (asy.D_of_t(spec, 1.0) - asy.D_of_t(spec, 1.0 - h)) / h
    assert asy.dD_at_T(spec) == pytest.approx(fd, rel=1e-3)


def test_dD_requires_positive_derivative():
    t = np.array([0.0, 0.5, 1.0, 1.5])
    flat = VarianceFunction.table(t, [0.0, 0.5, 0.9, 0.9000001])
    spec = scalar(v=flat, T=1.5)
    with pytest.raises(AssumptionViolated):
        asy.dD_at_T(spec.replace(T=1.5))


# -- G -----------------------------------------------------------------------


def test_G_vanishes_without_drift():
    G = asy.GFunction(two_dim(0.5, [1.0, 0.8]))
    assert G(0.5) == 0.0 and G(1.0) == 0.0


def test_G_scalar_with_drift():
    # lambda = a / t^alpha, D = a^2 / t^alpha, so G(t) = c t / a
    G = asy.GFunction(scalar(1.5, c=0.3, a=2.0))
    assert G(0.5) == pytest.approx(0.3 * 0.5 / 2.0)


def test_window_shape_is_finite_and_decreasing_in_u():
    spec = two_dim(0.5, [1.0, 0.8], c=(0.1, 0.1))
    vals = [asy.window_bound_log_shape(spec, u, 0.2, 0.8) for u in (5, 10, 20)]
    assert np.all(np.isfinite(vals)) and np.all(np.diff(vals) < 0)


# -- window integral -----------------------------------------------------------


def test_int_repr_all_negative():
    for L in (0.0, 1.0, 7.0):
        assert asy.int_repr([-1.0, -2.0], L) == pytest.approx(1.0)


def test_int_repr_zero_sum_branch():
    assert asy.int_repr([1.0, -1.0], 2.0) == 3.0


def test_int_repr_general_branch():
    assert asy.int_repr([2.0, -3.0], 1.0) == pytest.approx(3 - 2 * math.exp(-1), rel=1e-14)
    assert asy.int_repr([2.0, -3.0], 1.0) == pytest.approx(2.2642411, abs=1e-7)
    assert asy.int_repr([2.0, -3.0], 1.0) == pytest.approx(int_repr_quadrature([2.0, -3.0], 1.0), rel=1e-6)


def test_int_repr_rejects_negative_window():
    with pytest.raises(ValueError):
        asy.int_repr([1.0], -1.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(0, 5))
def test_int_repr_at_least_one_and_one_at_zero(f, L):
    assert asy.int_repr(f, 0.0) == 1.0
    assert asy.int_repr(f, L) >= 1.0 - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(0, 5), st.floats(0, 2))
def test_int_repr_nondecreasing_in_window(f, L, dL):
    assert asy.int_repr(f, L + dL) >= asy.int_repr(f, L) * (1 - 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2).filter(lambda x: abs(x) > 1e-3), st.floats(0.1, 3))
def test_int_repr_continuous_across_zero_sum(x, L):
    near = [x, -x + 1e-9]
    assert asy.int_repr(near, L) == pytest.approx(asy.int_repr([x, -x], L), rel=1e-6)


# -- the constant --------------------------------------------------------------


def test_C_is_one_for_nonnegative_direction(spec_c1):
    assert asy.constant_C(spec_c1) == pytest.approx(1.0, abs=1e-15)


def test_C_four_thirds(spec_c43):
    r, a = -0.8, -0.5
    assert asy.constant_C(spec_c43) == pytest.approx((1 - a * r) / (1 - 2 * a * r + a * a), rel=1e-14)
    assert asy.constant_C(spec_c43) == pytest.approx(4 / 3, abs=1e-12)


def test_C_singleton_index_set():
    assert asy.constant_C(two_dim(0.5, [1.0, 0.2])) == pytest.approx(1.0)


def test_C_requires_exact_hypotheses():
    with pytest.raises(AssumptionViolated):
        asy.constant_C(two_dim(0.5, [1.0, 0.8], v=VarianceFunction.brownian()))


def test_C_of_L_for_unit_constant(spec_c1):
    for L in (0.0, 1.0, 10.0, 100.0):
        assert asy.constant_C_of_L(spec_c1, L) == pytest.approx(1.0)


def _C_of_L_quadrature(spec, L):
    """Window constant by direct integration over x_I (d = 2, I = {1, 2})."""
    terms = asy.drift_terms(spec)
    lam, g = terms.sol.lam, terms.g
    f = -0.5 * lam * g
    # substitute y_i = lambda_i x_i: prod(lambda) int 1{...} e^{sum lambda x} dx = int 1{y < f t} e^{sum y} dy
    return int_repr_quadrature(f, L)


def test_C_of_L_increasing_and_converging(spec_c43):
    vals = [asy.constant_C_of_L(spec_c43, L) for L in (1.0, 5.0, 25.0)]
    assert vals[0] < vals[1] < vals[2] < 4 / 3 + 1e-12
    for L in (1.0, 5.0):
        assert asy.constant_C_of_L(spec_c43, L) == pytest.approx(_C_of_L_quadrature(spec_c43, L), rel=1e-8)
    u0 = 1 / abs(asy.dD_at_T(spec_c43))
    assert abs(asy.constant_C_of_L(spec_c43, 25 * u0) - 4 / 3) < 1e-3


def test_invariants_on_random_specs():
    rng = np.random.default_rng(13)
    for k in range(40):
        spec = random_spec(rng, int(rng.integers(2, 5)), common=bool(k % 3 == 0), drift_scale=1.0)
        terms = asy.drift_terms(spec)
        dD = asy.dD_at_T(spec)
        assert dD < 0
        assert terms.denominator == pytest.approx(-dD, rel=1e-9)
        C = asy.constant_C(spec, check=False)
        assert C >= 1.0
        if np.all(terms.products >= 0):
            assert C == 1.0
        Ls = np.linspace(0, 20, 9) / abs(dD)
        CL = [asy.constant_C_of_L(spec, L, check=False) for L in Ls]
        assert np.all(np.diff(CL) >= -1e-12)
        assert abs(asy.constant_C_of_L(spec, 40 / abs(dD), check=False) - C) < 1e-6 * C


def test_constant_is_one_for_common_variance_and_nonnegative_direction():
    rng = np.random.default_rng(14)
    for _ in range(20):
        spec = random_spec(rng, 3, common=True)
        spec = spec.replace(a=np.abs(spec.a))
        assert asy.constant_C(spec, check=False) == pytest.approx(1.0, abs=1e-12)


# -- endpoint tail -----------------------------------------------------------


def test_endpoint_tail_mills_ratio():
    # phi(u)/u over P(N > u) = 1.03731... at u = 5, tending to 1
    spec = scalar(1.5)
    r5 = asy.endpoint_tail_asymptotic(spec, 5.0).value / stats.norm.sf(5.0)
    assert r5 == pytest.approx(stats.norm.pdf(5.0) / 5.0 / stats.norm.sf(5.0), rel=1e-10)
    assert r5 == pytest.approx(1.0373, abs=1e-4)
    r8 = asy.endpoint_tail_asymptotic(spec, 8.0).value / stats.norm.sf(8.0)
    assert abs(r8 - 1) < 0.02


def _u_at_tail(spec, level):
    u = 1.0
    while asy.endpoint_tail_exact(spec, u).value > level:
        u += 0.25
    return u


def test_endpoint_tail_both_active_vs_exact():
    # rho = 0: exact / asymptotic = (u P(N > u) / phi(u))^2, which is about 0.88 at tail 1e-8
    spec = two_dim(0.0, [1.0, 1.0])
    assert asy.qp_at(spec).I == (0, 1)
    for level in (1e-8, 1e-30):
        u = _u_at_tail(spec, level)
        ratio = asy.endpoint_tail_exact(spec, u).value / asy.endpoint_tail_asymptotic(spec, u).value
        assert ratio == pytest.approx((u * stats.norm.sf(u) / stats.norm.pdf(u)) ** 2, rel=1e-8)
    assert abs(ratio - 1) < 0.10
    spec = two_dim(0.3, [1.0, 1.0])
    u = _u_at_tail(spec, 1e-8)
    sol = asy.qp_at(spec)
    S = covariance_at(spec, 1.0)
    manual = math.exp(-0.5 * u * u * sol.D) / (2 * math.pi * math.sqrt(np.linalg.det(S))) / (u * u * np.prod(sol.lam))
    assert asy.endpoint_tail_asymptotic(spec, u).value == pytest.approx(manual, rel=1e-12)


def test_endpoint_tail_small_multiplier_converges_slowly(spec_c1):
    # lambda_2 is half of lambda_1 here, so the 1/u^2 correction is large at moderate levels
    u = _u_at_tail(spec_c1, 1e-8)
    dev = []
    for k in range(4):
        uk = u * 2**k
        ex, ap = asy.endpoint_tail_exact(spec_c1, uk), asy.endpoint_tail_asymptotic(spec_c1, uk)
        dev.append(abs(math.exp(ex.log_value - ap.log_value) - 1))
    assert dev[0] > 0.1
    assert np.all(np.diff(dev) < 0) and dev[-1] < 0.02


@pytest.mark.parametrize("u", [3.0, 10.0, 30.0])
def test_singleton_reduces_to_marginal(u):
    spec = two_dim(0.5, [1.0, 0.2], c=(0.2, 0.3))
    joint = asy.endpoint_tail_asymptotic(spec, u)
    marg = asy.endpoint_tail_asymptotic(scalar(1.5, c=0.2), u)
    assert joint.log_value == pytest.approx(marg.log_value, rel=1e-12)


def test_boundary_coordinate_halves_the_marginal():
    # a_2 = rho: U = {2}, Y_2 centred so P(Y_U < 0) = 1/2
    spec = two_dim(0.5, [1.0, 0.5])
    u = 10.0
    joint = asy.endpoint_tail_asymptotic(spec, u)
    assert joint.sol.U == (1,)
    assert joint.value == pytest.approx(0.5 * stats.norm.pdf(u) / u, rel=1e-12)


def test_completed_square_matches_direct_quadrature():
    # J = {2} with drift: compare the reduced J-integral with numerical quadrature
    spec = two_dim(0.5, [1.0, 0.2], c=(0.3, 0.4))
    S = covariance_at(spec, 1.0)
    P = np.linalg.inv(S)
    ct = P @ (spec.c * spec.T)
    direct = integrate.quad(lambda x: math.exp(-0.5 * P[1, 1] * x * x + ct[1] * x), -np.inf, np.inf)[0]
    tail = asy.endpoint_tail_asymptotic(spec, 5.0)
    assert math.exp(tail.log_reduction_integral) == pytest.approx(direct, rel=1e-10)


def test_log_space_survives_underflow(spec_c43):
    res = asy.ruin_asymptotic(spec_c43, 60.0)
    assert res.value == 0.0
    assert math.isfinite(res.log_value)
    assert res.log_value == pytest.approx(math.log(4 / 3) + res.tail.log_value)


def test_ruin_asymptotic_composition(spec_c43, spec_c1):
    r = asy.ruin_asymptotic(spec_c43, 10.0)
    assert r.value == pytest.approx(4 / 3 * r.tail.value, rel=1e-12)
    assert r.refined.value == pytest.approx(4 / 3 * r.tail_exact.value, rel=1e-12)
    r1 = asy.ruin_asymptotic(spec_c1, 10.0)
    assert r1.value == pytest.approx(asy.endpoint_tail_asymptotic(spec_c1, 10.0).value, rel=1e-12)


def test_ruin_asymptotic_singleton_is_marginal():
    spec = two_dim(0.5, [1.0, 0.2])
    assert asy.ruin_asymptotic(spec, 8.0).value == pytest.approx(stats.norm.pdf(8.0) / 8.0, rel=1e-10)


# -- bounds ------------------------------------------------------------------


def _bm2(A, c):
    bm = VarianceFunction.brownian()
    return ModelSpec(A=np.asarray(A, float), v=(bm, bm), c=np.asarray(c, float), a=[1.0, 1.0], T=1.0)


def test_bounds_orthant_case():
    b = asy.bounds(_bm2(np.eye(2), [0, 0]), [0.0, 0.0])
    assert b.lower.value == pytest.approx(0.25)
    assert b.upper.value == pytest.approx(1.0)


def test_bounds_correlated_case_uses_arcsine_denominator():
    A = [[1.0, 0.0], [0.5, math.sqrt(0.75)]]
    spec = _bm2(A, [1.0, 1.0])
    b = asy.bounds(spec, [1.0, 1.0])
    S = covariance_at(spec, 1.0)
    lower = orthant_upper(MvnSpec(-np.array([2.0, 2.0]), S)).value
    assert b.lower.value == pytest.approx(lower, rel=1e-10)
    assert b.upper.value == pytest.approx(lower / (0.25 + math.asin(0.5) / (2 * math.pi)), rel=1e-10)
    assert b.lower.value <= b.upper.value


def test_bounds_scalar_ratio_is_two():
    spec = scalar(v=VarianceFunction.brownian(), c=0.5)
    b = asy.bounds(spec, [2.0])
    assert b.upper.value / b.lower.value == pytest.approx(2.0)


def test_bounds_clamped_flag():
    b = asy.bounds(_bm2(np.eye(2), [0, 0]), [-1.0, -1.0])
    assert b.clamped and b.upper.value == 1.0


def test_bounds_require_hypotheses(spec_c43):
    with pytest.raises(AssumptionViolated):
        asy.bounds(spec_c43, [1.0, -0.5])


# -- report ------------------------------------------------------------------


def test_report_fields_and_serialisation(spec_c1):
    rep = asy.asymptotic_report(spec_c1, 6.0, L_values=[0.0, 2.0])
    assert rep.C == pytest.approx(1.0)
    assert rep.dD_T < 0
    assert rep.C_of_L[0] == (0.0, 1.0)
    np.testing.assert_allclose(rep.Q_diag, [1.5, 1.5])
    assert rep.bounds is not None
    d = rep.to_dict()
    assert d["p_ruin_asym"]["value"] == pytest.approx(rep.C * rep.tail_T.value)
    assert set(rep.csv_row()) == set(asy.CSV_COLUMNS)


def test_report_omits_bounds_when_hypotheses_fail(spec_c43):
    rep = asy.asymptotic_report(spec_c43, 6.0)
    assert rep.bounds is None
    assert rep.csv_row()["lower"] == ""
