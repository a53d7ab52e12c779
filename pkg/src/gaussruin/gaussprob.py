"""Multivariate normal densities and upper-orthant / tail probabilities.

Probabilities are returned as :class:`Estimate` objects carrying the value,
an error bound, a convergence flag and the natural log of the value (so
that tails far below the double-precision range stay usable).

Dimensions 1 and 2 are handled by closed forms and one-dimensional
adaptive quadrature.  From dimension 3 upward the probability is reduced by
sequential conditioning through a pivoted Cholesky factor to an integral
over the unit cube, which is evaluated with randomly scrambled Sobol'
points.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize, special
from scipy.stats import qmc

from .errors import AccuracyNotReached, FactorizationFailed, NotPositiveDefinite
from .model import cholesky_with_jitter

LOG_2PI = math.log(2.0 * math.pi)

#: Marker for a coordinate without a lower threshold (the event does not constrain it).
UNBOUNDED = None


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    converged: bool = True
    log_value: float | None = None

    def __post_init__(self):
        if self.log_value is None:
            lv = math.log(self.value) if self.value > 0 else -math.inf
            object.__setattr__(self, "log_value", lv)

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "converged": self.converged, "log_value": self.log_value}

    def scaled(self, factor: float) -> "Estimate":
        return Estimate(self.value * factor, self.error * abs(factor), self.converged, self.log_value + math.log(factor))


@dataclass(frozen=True, eq=False)
class MvnSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        k = mean.size
        if cov.shape != (k, k):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {k}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14 * max(1.0, float(np.max(np.abs(cov))))):
            raise NotPositiveDefinite("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def k(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        try:
            return cholesky_with_jitter(self.cov)[0]
        except FactorizationFailed as exc:
            raise NotPositiveDefinite("covariance is not positive definite") from exc


def log_density(spec: MvnSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    L = spec.chol
    z = np.linalg.solve(L, x - spec.mean) if spec.k > 1 else (x - spec.mean) / L[0, 0]
    half_logdet = float(np.sum(np.log(np.diag(L))))
    return float(-0.5 * spec.k * LOG_2PI - half_logdet - 0.5 * np.dot(z, z))


def density(spec: MvnSpec, x) -> float:
    return math.exp(log_density(spec, x))


# ---------------------------------------------------------------------------
# Upper probabilities P(X > l) for centred X
# ---------------------------------------------------------------------------


def _log_ndtr_upper(x):
    """``log P(N(0,1) > x)``."""
    return special.log_ndtr(-np.asarray(x, dtype=float))


def _bivariate_upper(h: float, k: float, rho: float) -> Estimate:
    """``P(X1 > h, X2 > k)`` for a standard bivariate normal with correlation ``rho``."""
    if h == 0.0 and k == 0.0:
        v = 0.25 + math.asin(rho) / (2.0 * math.pi)
        return Estimate(v, 1e-16)
    s = math.sqrt(max(1.0 - rho * rho, 0.0))
    # integrate over the coordinate with the larger threshold
    if k > h:
        h, k = k, h

    def logf(x):
        return -0.5 * x * x - 0.5 * LOG_2PI + float(special.log_ndtr((rho * x - k) / s))

    def dlogf(x):
        z = (rho * x - k) / s
        mills = math.exp(-0.5 * z * z - 0.5 * LOG_2PI - float(special.log_ndtr(z)))
        return -x + rho / s * mills

    if dlogf(h) <= 0:
        mode = h
    else:
        hi = max(h, 0.0) + 1.0
        while dlogf(hi) > 0:
            hi = 2 * hi + 1.0
        mode = optimize.brentq(dlogf, h, hi, xtol=1e-12)
    top = logf(mode)
    g = lambda x: math.exp(logf(x) - top)
    pieces = [h, mode]
    if rho != 0.0:
        knee = k / rho
        if h < knee < mode + 40:
            pieces.append(knee)
    pieces = sorted(set(pieces)) + [mode + 40.0]
    total, err = 0.0, 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        if hi <= lo:
            continue
        val, e = integrate.quad(g, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
        total += val
        err += e
    log_value = top + math.log(total)
    value = math.exp(log_value)
    return Estimate(value, err * math.exp(top) + 1e-15 * value, True, log_value)


def _genz_reorder(cov, lower):
    """Pivoted Cholesky putting the most restrictive conditional variable first."""
    k = lower.size
    S = cov.copy()
    lo = lower.copy()
    C = np.zeros((k, k))
    y = np.zeros(k)
    perm = np.arange(k)
    for i in range(k):
        best, best_lp = i, math.inf
        for j in range(i, k):
            var = S[j, j] - np.dot(C[j, :i], C[j, :i])
            if var <= 0:
                raise NotPositiveDefinite("covariance lost definiteness during pivoting")
            sd = math.sqrt(var)
            tj = (lo[j] - np.dot(C[j, :i], y[:i])) / sd
            lp = float(_log_ndtr_upper(tj))
            if lp < best_lp:
                best, best_lp = j, lp
        if best != i:
            S[[i, best]] = S[[best, i]]
            S[:, [i, best]] = S[:, [best, i]]
            lo[[i, best]] = lo[[best, i]]
            C[[i, best]] = C[[best, i]]
            perm[[i, best]] = perm[[best, i]]
        var = S[i, i] - np.dot(C[i, :i], C[i, :i])
        C[i, i] = math.sqrt(var)
        for r in range(i + 1, k):
            C[r, i] = (S[r, i] - np.dot(C[r, :i], C[i, :i])) / C[i, i]
        t = (lo[i] - np.dot(C[i, :i], y[:i])) / C[i, i]
        # mean of N(0,1) truncated to (t, inf)
        y[i] = math.exp(-0.5 * t * t - 0.5 * LOG_2PI - float(_log_ndtr_upper(t)))
    return C, lo, perm


def _sov_log_integrand(C, lower, w):
    """Log of the conditioned product for each row of ``w`` (shape n x (k-1))."""
    n = w.shape[0]
    k = lower.size
    z = np.zeros((n, k))
    logp = np.zeros(n)
    for i in range(k):
        t = (lower[i] - z[:, :i] @ C[i, :i]) / C[i, i]
        lp = _log_ndtr_upper(t)
        logp += lp
        if i < k - 1:
            z[:, i] = -special.ndtri_exp(np.log(w[:, i]) + lp)
    return logp


def _logmeanexp(x):
    top = np.max(x)
    if not np.isfinite(top):
        return -math.inf
    return float(top + np.log(np.mean(np.exp(x - top))))


def _qmc_upper(cov, lower, abs_tol, rel_tol, seed, randomizations, start_points, max_points) -> Estimate:
    C, lo, _ = _genz_reorder(cov, lower)
    k = lo.size
    seeds = np.random.SeedSequence(seed).spawn(randomizations)
    engines = [qmc.Sobol(d=max(k - 1, 1), scramble=True, seed=np.random.default_rng(s)) for s in seeds]
    # running log-sum-exp per randomization
    log_sums = np.full(randomizations, -math.inf)
    count = 0
    n = start_points
    while True:
        for r, eng in enumerate(engines):
            w = np.clip(eng.random(n), 1e-300, 1.0 - 1e-16)
            lv = _sov_log_integrand(C, lo, w)
            log_sums[r] = np.logaddexp(log_sums[r], _logsumexp(lv))
        count += n
        log_means = log_sums - math.log(count)
        top = float(np.max(log_means))
        if not np.isfinite(top):
            return Estimate(0.0, 0.0, True, -math.inf)
        rel = np.exp(log_means - top)
        mean_rel = float(np.mean(rel))
        se_rel = float(np.std(rel, ddof=1) / math.sqrt(randomizations))
        log_value = top + math.log(mean_rel)
        value = math.exp(log_value)
        rel_err = 3.0 * se_rel / mean_rel
        error = rel_err * value
        ok_abs = error <= abs_tol
        ok_rel = rel_tol is None or rel_err <= rel_tol
        if ok_abs and ok_rel:
            return Estimate(value, error, True, log_value)
        if count * 2 > max_points:
            warnings.warn(
                AccuracyNotReached(f"QMC error {error:.3g} (relative {rel_err:.3g}) after {count} points per randomization"),
                stacklevel=3,
            )
            return Estimate(value, error, False, log_value)
        n = count  # doubling keeps Sobol' balance


def _logsumexp(x):
    top = np.max(x)
    if not np.isfinite(top):
        return -math.inf
    return float(top + np.log(np.sum(np.exp(x - top))))


def upper_probability(
    cov,
    lower,
    *,
    abs_tol: float = 1e-6,
    rel_tol: float | None = 1e-3,
    seed: int = 0,
    randomizations: int = 8,
    start_points: int = 1024,
    max_points: int = 2**18,
    method: str = "auto",
) -> Estimate:
    """``P(X > lower)`` componentwise for ``X ~ N(0, cov)``.

    ``lower`` entries equal to :data:`UNBOUNDED` (or ``-inf``) leave the
    coordinate unconstrained; it is marginalised out exactly.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    lower = [(-math.inf if b is UNBOUNDED else float(b)) for b in np.atleast_1d(np.asarray(lower, dtype=object))]
    keep = [i for i, b in enumerate(lower) if b != -math.inf]
    if any(b == math.inf for b in lower):
        return Estimate(0.0, 0.0, True, -math.inf)
    if not keep:
        return Estimate(1.0, 0.0, True, 0.0)
    cov = cov[np.ix_(keep, keep)]
    lo = np.array([lower[i] for i in keep])
    k = lo.size
    if np.any(np.diag(cov) <= 0):
        raise NotPositiveDefinite("non-positive variance")
    sd = np.sqrt(np.diag(cov))
    if k == 1:
        lv = float(_log_ndtr_upper(lo[0] / sd[0]))
        return Estimate(math.exp(lv), 1e-16 * math.exp(lv), True, lv)
    if k == 2 and method in ("auto", "exact"):
        rho = float(cov[0, 1] / (sd[0] * sd[1]))
        if not -1.0 < rho < 1.0:
            raise NotPositiveDefinite("correlation outside (-1, 1)")
        return _bivariate_upper(float(lo[0] / sd[0]), float(lo[1] / sd[1]), rho)
    corr = cov / np.outer(sd, sd)
    try:
        np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc
    return _qmc_upper(corr, lo / sd, abs_tol, rel_tol, seed, randomizations, start_points, max_points)


def orthant_upper(spec: MvnSpec, **kw) -> Estimate:
    """``P(N(mean, cov) > 0)``."""
    return upper_probability(spec.cov, -spec.mean, **kw)


def tail_upper(spec: MvnSpec, threshold, **kw) -> Estimate:
    """``P(N(mean, cov) > threshold)`` componentwise."""
    thr = np.atleast_1d(np.asarray(threshold, dtype=object))
    if thr.size != spec.k:
        raise ValueError("threshold length does not match the dimension")
    shifted = [UNBOUNDED if (b is UNBOUNDED or float(b) == -math.inf) else float(b) - m for b, m in zip(thr, spec.mean)]
    return upper_probability(spec.cov, shifted, **kw)
