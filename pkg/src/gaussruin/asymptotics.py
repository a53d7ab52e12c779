"""Closed-form asymptotics and bounds for the simultaneous ruin probability.

Everything here is evaluated at the horizon ``T`` from the solution of the
quadratic programme for ``Sigma(T)``:

* ``D(t)`` and its derivative at ``T``;
* the constant ``C`` relating ``p_T(u a)`` to the endpoint tail
  ``P(X(T) - c T > u a)``, and its finite-window version ``C(L)``;
* the first-order asymptotic of the endpoint tail itself;
* two-sided bounds valid for every ``u`` under a common convex variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gaussprob
from .errors import AssumptionViolated
from .gaussprob import Estimate, MvnSpec
from .model import ModelSpec, covariance_at, validate
from .qp import QpSolution, solve_pi

LOG_2PI = math.log(2.0 * math.pi)


def require_exact(spec: ModelSpec):
    report = validate(spec)
    if not report.exact_ok:
        raise AssumptionViolated(f"exact-asymptotics hypotheses fail: {report.exact_violation}", report)
    return report


def require_bounds(spec: ModelSpec):
    report = validate(spec)
    if not report.bounds_ok:
        raise AssumptionViolated(f"bound hypotheses fail: {report.bounds_violation}", report)
    return report


def qp_at(spec: ModelSpec, t: float | None = None) -> QpSolution:
    t = spec.T if t is None else t
    return solve_pi(covariance_at(spec, t), spec.a)


# ---------------------------------------------------------------------------
# D(t), its derivative, and G(t)
# ---------------------------------------------------------------------------


def D_of_t(spec: ModelSpec, t: float) -> float:
    """Optimal value ``a_tilde(t)^T Sigma(t)^{-1} a_tilde(t)``."""
    return qp_at(spec, t).D


def D_full_form(spec: ModelSpec, t: float) -> float:
    """Same value through the full quadratic form rather than the ``I``-restricted one."""
    S = covariance_at(spec, t)
    sol = solve_pi(S, spec.a)
    return float(sol.a_tilde @ np.linalg.solve(S, sol.a_tilde))


def dD_at_T(spec: ModelSpec, sol: QpSolution | None = None) -> float:
    """``D'(T) = -|| diag(sqrt(v'(T)) / v(T)) A^{-1} a_tilde(T) ||^2``."""
    vdot = spec.vdot_at(spec.T)
    if np.any(vdot <= 0):
        i = int(np.argmax(vdot <= 0))
        raise AssumptionViolated(f"v'(T) <= 0 for coordinate {i + 1}")
    sol = sol or qp_at(spec)
    vT = spec.v_at(spec.T)
    w = np.sqrt(vdot) / vT * (spec.A_inv @ sol.a_tilde)
    return -float(w @ w)


class GFunction:
    """``G(t) = <lambda(t), c> t / D(t)``."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def __call__(self, t: float) -> float:
        if not np.any(self.spec.c):
            return 0.0
        sol = qp_at(self.spec, t)
        return float(sol.lam @ self.spec.c) * t / sol.D


def window_bound_log_shape(spec: ModelSpec, u: float, left: float, right: float, points: int = 64) -> float:
    """Log of ``(u + G(T*)) exp(-D(R)(u + G(T*))^2 / 2)`` on ``[left, right]``.

    Diagnostic only: the multiplicative constant of the underlying window
    bound is not known, so this is a shape, not a certified bound.
    """
    G = GFunction(spec)
    ts = np.linspace(left, right, points)
    g = np.array([G(t) for t in ts])
    g_star = float(g[np.argmin(g)])
    z = u + g_star
    if z <= 0:
        return math.inf
    return math.log(z) - 0.5 * D_of_t(spec, right) * z * z


# ---------------------------------------------------------------------------
# Constants C and C(L)
# ---------------------------------------------------------------------------


def int_repr(f, L: float) -> float:
    """``int 1{exists t in [0, L]: x < f t} exp(sum x) dx`` in closed form."""
    f = np.asarray(f, dtype=float)
    if L < 0:
        raise ValueError("L must be non-negative")
    S = float(np.sum(f))
    pos = float(np.sum(np.maximum(f, 0.0)))
    neg = float(np.sum(np.minimum(f, 0.0)))
    if S == 0.0:
        return 1.0 + pos * L
    # neg/S + pos/S e^{SL} = 1 + pos (e^{SL} - 1) / S
    return 1.0 + pos * L * _expm1_over(S * L)


def _expm1_over(x: float) -> float:
    """``(e^x - 1) / x`` with the removable singularity filled in."""
    if abs(x) < 1e-8:
        return 1.0 + 0.5 * x
    return math.expm1(x) / x


@dataclass(frozen=True)
class DriftTerms:
    """Per-coordinate pieces of the constant: ``lambda_i`` and ``(A Q A^{-1} a_tilde)_i``."""

    sol: QpSolution
    Q_diag: np.ndarray
    g: np.ndarray

    @property
    def products(self) -> np.ndarray:
        return self.sol.lam * self.g

    @property
    def numerator(self) -> float:
        return float(np.sum(np.maximum(self.products, 0.0)))

    @property
    def denominator(self) -> float:
        return float(np.sum(self.products))

    @property
    def f(self) -> np.ndarray:
        """Slopes of the finite-window integral over the ``I`` coordinates."""
        return -0.5 * self.products[list(self.sol.I)]


def drift_terms(spec: ModelSpec, sol: QpSolution | None = None) -> DriftTerms:
    sol = sol or qp_at(spec)
    Q = spec.vdot_at(spec.T) / spec.v_at(spec.T)
    g = spec.A @ (Q * (spec.A_inv @ sol.a_tilde))
    return DriftTerms(sol=sol, Q_diag=Q, g=g)


def constant_C(spec: ModelSpec, check: bool = True) -> float:
    """``C = sum max(lambda_i g_i, 0) / sum lambda_i g_i`` with ``g = A Q A^{-1} a_tilde``."""
    if check:
        require_exact(spec)
    terms = drift_terms(spec)
    if not terms.denominator > 0:
        raise AssumptionViolated("denominator of C is not positive")
    return terms.numerator / terms.denominator


def constant_C_of_L(spec: ModelSpec, L: float, check: bool = True) -> float:
    """Finite-window constant; equals 1 at ``L = 0`` and increases to ``C``."""
    if check:
        require_exact(spec)
    return int_repr(drift_terms(spec).f, L)


# ---------------------------------------------------------------------------
# Endpoint tail
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailAsymptotic:
    log_value: float
    log_prefactor: float
    log_reduction_integral: float
    orthant: Estimate
    sol: QpSolution

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value > -745 else 0.0

    @property
    def converged(self) -> bool:
        return self.orthant.converged


def tail_asymptotic(Sigma, a, shift, u: float, sol: QpSolution | None = None, **prob_kw) -> TailAsymptotic:
    """First-order asymptotic of ``P(X - shift > u a)`` for ``X ~ N(0, Sigma)``.

    The integral over the ``J`` coordinates is reduced by completing the
    square to a Gaussian normalising constant times ``P(Y_U < 0)``.
    """
    if not u > 0:
        raise ValueError("u must be positive")
    Sigma = np.asarray(Sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    shift = np.asarray(shift, dtype=float)
    sol = sol or solve_pi(Sigma, a)
    I, J, U = list(sol.I), list(sol.J), list(sol.U)
    x = u * sol.a_tilde + shift
    log_phi = gaussprob.log_density(MvnSpec(np.zeros(a.size), Sigma), x)
    log_pref = -len(I) * math.log(u) + log_phi - float(np.sum(np.log(sol.lam[I])))
    if not J:
        orth = Estimate(1.0, 0.0, True, 0.0)
        return TailAsymptotic(log_pref, log_pref, 0.0, orth, sol)
    prec = np.linalg.inv(Sigma)
    prec = 0.5 * (prec + prec.T)
    P = prec[np.ix_(J, J)]
    c_tilde = (prec @ shift)[J]
    P_inv = np.linalg.inv(P)
    P_inv = 0.5 * (P_inv + P_inv.T)
    mean = P_inv @ c_tilde
    _, logdet = np.linalg.slogdet(P)
    log_int = 0.5 * len(J) * LOG_2PI - 0.5 * logdet + 0.5 * float(c_tilde @ mean)
    if U:
        pos = [J.index(j) for j in U]
        # P(Y_U < 0) = P(-Y_U > 0)
        orth = gaussprob.orthant_upper(MvnSpec(-mean[pos], P_inv[np.ix_(pos, pos)]), **prob_kw)
        log_int += orth.log_value
    else:
        orth = Estimate(1.0, 0.0, True, 0.0)
    return TailAsymptotic(log_pref + log_int, log_pref, log_int, orth, sol)


def endpoint_tail_asymptotic(spec: ModelSpec, u: float, **prob_kw) -> TailAsymptotic:
    """Asymptotic of ``P(X(T) - c T > u a)``."""
    return tail_asymptotic(covariance_at(spec, spec.T), spec.a, spec.c * spec.T, u, **prob_kw)


def endpoint_tail_exact(spec: ModelSpec, u: float, **prob_kw) -> Estimate:
    """``P(X(T) - c T > u a)`` by numerical integration."""
    S = covariance_at(spec, spec.T)
    return gaussprob.tail_upper(MvnSpec(np.zeros(spec.d), S), u * spec.a + spec.c * spec.T, **prob_kw)


@dataclass(frozen=True)
class RuinAsymptotic:
    C: float
    log_value: float
    tail: TailAsymptotic
    tail_exact: Estimate

    @property
    def value(self) -> float:
        """``C`` times the asymptotic endpoint tail (pure asymptotic formula)."""
        return math.exp(self.log_value) if self.log_value > -745 else 0.0

    @property
    def refined(self) -> Estimate:
        """``C`` times the numerically exact endpoint tail."""
        return self.tail_exact.scaled(self.C)

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "asymptotic": {"value": self.value, "log_value": self.log_value},
            "finite_u": self.refined.to_dict(),
        }


def ruin_asymptotic(spec: ModelSpec, u: float, check: bool = True, **prob_kw) -> RuinAsymptotic:
    """``p_T(u a) ~ C P(X(T) - c T > u a)``, in pure and finite-u forms."""
    if check:
        require_exact(spec)
    C = constant_C(spec, check=False)
    tail = endpoint_tail_asymptotic(spec, u, **prob_kw)
    exact = endpoint_tail_exact(spec, u, **prob_kw)
    return RuinAsymptotic(C=C, log_value=math.log(C) + tail.log_value, tail=tail, tail_exact=exact)


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    lower: Estimate
    upper: Estimate
    orthant: Estimate
    clamped: bool = False

    @property
    def converged(self) -> bool:
        return self.lower.converged and self.upper.converged

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
            "orthant": self.orthant.to_dict(),
            "clamped": self.clamped,
        }


def bounds(spec: ModelSpec, u_vec, check: bool = True, **prob_kw) -> Bounds:
    """Bounds on ``P(exists t <= T: X(t) - c t > u_vec)``.

    ``lower = P(X(T) - c T > u_vec)`` and ``upper = lower / P(X(T) > 0)``,
    where ``P(X(T) > 0) = P(N(0, A A^T) > 0)``.
    """
    if check:
        require_bounds(spec)
    u_vec = np.asarray(u_vec, dtype=float)
    S = covariance_at(spec, spec.T)
    lower = gaussprob.tail_upper(MvnSpec(np.zeros(spec.d), S), u_vec + spec.c * spec.T, **prob_kw)
    gram = spec.A @ spec.A.T
    orth = gaussprob.orthant_upper(MvnSpec(np.zeros(spec.d), gram), **prob_kw)
    value = lower.value / orth.value
    rel = math.hypot(lower.error / lower.value if lower.value > 0 else 0.0, orth.error / orth.value)
    upper = Estimate(value, value * rel, lower.converged and orth.converged, lower.log_value - orth.log_value)
    clamped = False
    if upper.value > 1.0:
        upper = Estimate(1.0, 0.0, upper.converged, 0.0)
        clamped = True
    return Bounds(lower=lower, upper=upper, orthant=orth, clamped=clamped)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("u", "tail_exact", "tail_asym", "C", "p_asym", "lower", "upper")


@dataclass
class AsymptoticReport:
    u: float
    qp_at_T: QpSolution
    D_T: float
    dD_T: float
    Q_diag: np.ndarray
    C: float
    tail_T: TailAsymptotic
    tail_exact: Estimate
    C_of_L: list = field(default_factory=list)
    bounds: Bounds | None = None

    @property
    def p_ruin_asym(self) -> float:
        return self.C * self.tail_T.value

    @property
    def p_ruin_asym_log(self) -> float:
        return math.log(self.C) + self.tail_T.log_value

    @property
    def p_ruin_refined(self) -> Estimate:
        return self.tail_exact.scaled(self.C)

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "qp_at_T": self.qp_at_T.to_dict(),
            "D_T": self.D_T,
            "dD_T": self.dD_T,
            "Q_diag": self.Q_diag.tolist(),
            "C": self.C,
            "C_of_L": [{"L": L, "value": val} for L, val in self.C_of_L],
            "tail_T": {"value": self.tail_T.value, "log_value": self.tail_T.log_value},
            "tail_exact": self.tail_exact.to_dict(),
            "p_ruin_asym": {"value": self.p_ruin_asym, "log_value": self.p_ruin_asym_log},
            "p_ruin_refined": self.p_ruin_refined.to_dict(),
            "bounds": self.bounds.to_dict() if self.bounds else None,
        }

    def csv_row(self) -> dict:
        return {
            "u": self.u,
            "tail_exact": self.tail_exact.value,
            "tail_asym": self.tail_T.value,
            "C": self.C,
            "p_asym": self.p_ruin_asym,
            "lower": self.bounds.lower.value if self.bounds else "",
            "upper": self.bounds.upper.value if self.bounds else "",
        }


def asymptotic_report(spec: ModelSpec, u: float, L_values=(), with_bounds: bool | None = None, **prob_kw) -> AsymptoticReport:
    """Collect every closed-form quantity at level ``u``.

    Bounds are attached when ``with_bounds`` is true, or when it is ``None``
    and the bound hypotheses hold.
    """
    report = require_exact(spec)
    sol = qp_at(spec)
    terms = drift_terms(spec, sol)
    dD = dD_at_T(spec, sol)
    C = terms.numerator / terms.denominator
    tail = endpoint_tail_asymptotic(spec, u, **prob_kw)
    exact = endpoint_tail_exact(spec, u, **prob_kw)
    c_of_L = [(float(L), int_repr(terms.f, float(L))) for L in L_values]
    bnd = None
    if with_bounds or (with_bounds is None and report.bounds_ok):
        bnd = bounds(spec, u * spec.a, check=bool(with_bounds), **prob_kw)
    return AsymptoticReport(
        u=float(u),
        qp_at_T=sol,
        D_T=sol.D,
        dD_T=dD,
        Q_diag=terms.Q_diag,
        C=C,
        tail_T=tail,
        tail_exact=exact,
        C_of_L=c_of_L,
        bounds=bnd,
    )
