"""Quadratic programme ``minimise x^T Sigma^{-1} x subject to x >= a``.

The optimiser ``a_tilde`` and the multiplier vector ``lambda = Sigma^{-1} a_tilde``
are characterised by a unique non-empty index set ``I``::

    a_tilde_I = a_I,   a_tilde_J = Sigma_JI Sigma_II^{-1} a_I >= a_J,
    lambda_I = Sigma_II^{-1} a_I > 0,   lambda_J = 0.

``solve_pi`` finds ``I`` with a primal active-set method; ``solve_pi_enumerate``
scans every candidate subset and is kept as an independent oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionTooLarge, InvalidDirection, NoFeasibleIndexSet, NotPositiveDefinite

TOL_KKT = 1e-9
TOL_U = 1e-9
ENUMERATION_LIMIT = 20
FALLBACK_LIMIT = 12


@dataclass(frozen=True, eq=False)
class QpSolution:
    a_tilde: np.ndarray
    lam: np.ndarray
    I: tuple
    J: tuple
    U: tuple
    D: float

    @property
    def lambda_(self):
        return self.lam

    def to_dict(self) -> dict:
        """JSON form; index sets are 0-based."""
        return {
            "a_tilde": self.a_tilde.tolist(),
            "lambda": self.lam.tolist(),
            "I": list(self.I),
            "J": list(self.J),
            "U": list(self.U),
            "D": self.D,
        }

    def describe(self) -> str:
        """Text form; index sets are 1-based."""
        fmt = lambda s: "{" + ", ".join(str(i + 1) for i in s) + "}"
        return f"I={fmt(self.I)} J={fmt(self.J)} U={fmt(self.U)} D={self.D:.6g}"


def _check_inputs(Sigma, a):
    S = np.asarray(Sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or a.shape != (S.shape[0],):
        raise ValueError("Sigma must be d x d and a a d-vector")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-14 * np.max(np.abs(S))):
        raise NotPositiveDefinite("Sigma is not symmetric")
    S = 0.5 * (S + S.T)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Sigma is not positive definite") from exc
    if not np.any(a > 0):
        raise InvalidDirection("a must have at least one positive coordinate")
    return S, a


def _solve_spd(M, b):
    return linalg.solve(M, b, assume_a="pos")


def _candidate(S, a, I):
    """Point, multipliers and optimal value implied by index set ``I``."""
    d = a.size
    I = np.asarray(I, dtype=int)
    J = np.setdiff1d(np.arange(d), I)
    lam_I = _solve_spd(S[np.ix_(I, I)], a[I])
    x = np.empty(d)
    x[I] = a[I]
    x[J] = S[np.ix_(J, I)] @ lam_I
    lam = np.zeros(d)
    lam[I] = lam_I
    return x, lam, float(a[I] @ lam_I)


def _finish(S, a, I):
    I = tuple(sorted(int(i) for i in I))
    x, lam, D = _candidate(S, a, I)
    J = tuple(i for i in range(a.size) if i not in I)
    U = tuple(j for j in J if abs(x[j] - a[j]) <= TOL_U * max(1.0, abs(a[j])))
    x.setflags(write=False)
    lam.setflags(write=False)
    return QpSolution(a_tilde=x, lam=lam, I=I, J=J, U=U, D=D)


def _kkt_ok(x, lam, a, I):
    J = [j for j in range(a.size) if j not in I]
    scale = max(1.0, float(np.max(np.abs(lam))))
    if np.any(lam[list(I)] <= TOL_KKT * scale):
        return False
    return bool(np.all(x[J] >= a[J] - TOL_U * np.maximum(1.0, np.abs(a[J]))))


def solve_pi_enumerate(Sigma, a) -> QpSolution:
    """Brute-force search over all non-empty index sets."""
    S, a = _check_inputs(Sigma, a)
    d = a.size
    if d > ENUMERATION_LIMIT:
        raise DimensionTooLarge(f"enumeration over 2^{d} subsets refused (limit d <= {ENUMERATION_LIMIT})")
    return _enumerate(S, a)


def _enumerate(S, a):
    d = a.size
    passing = []
    for k in range(1, d + 1):
        for I in itertools.combinations(range(d), k):
            x, lam, _ = _candidate(S, a, I)
            if _kkt_ok(x, lam, a, I):
                passing.append(I)
        if passing:
            # smallest valid set; larger ones only pass through tolerance ties
            break
    if not passing:
        raise NoFeasibleIndexSet("no index set satisfies the KKT conditions")
    return _finish(S, a, passing[0])


def solve_pi(Sigma, a, initial_active=None, max_iter=None) -> QpSolution:
    """Solve the quadratic programme by a primal active-set method.

    Parameters
    ----------
    Sigma : (d, d) array
        Symmetric positive definite covariance matrix.
    a : (d,) array
        Lower bound, with at least one positive coordinate.
    initial_active : iterable of int, optional
        Starting working set.  The result does not depend on it.
    max_iter : int, optional
        Iteration cap before falling back to enumeration (``d <= 12``).
    """
    S, a = _check_inputs(Sigma, a)
    d = a.size
    W = set(int(i) for i in (initial_active or ()))
    x = a + 1.0
    x[list(W)] = a[list(W)]
    max_iter = max_iter or 20 * d + 20
    seen = set()
    scale = max(1.0, float(np.max(np.abs(a))))
    for _ in range(max_iter):
        Wl = sorted(W)
        if Wl:
            target, _, _ = _candidate(S, a, Wl)
        else:
            target = np.zeros(d)
        step = target - x
        if np.max(np.abs(step)) <= 1e-13 * scale:
            x = target
            if not Wl:
                # the unconstrained minimiser 0 is infeasible for valid a
                raise NoFeasibleIndexSet("empty working set at a stationary point")
            lam_W = _solve_spd(S[np.ix_(Wl, Wl)], a[Wl])
            lam_scale = max(1.0, float(np.max(np.abs(lam_W))))
            negative = [i for i, l in zip(Wl, lam_W) if l < -TOL_KKT * lam_scale]
            if not negative:
                keep = [i for i, l in zip(Wl, lam_W) if l > TOL_KKT * lam_scale]
                sol = _finish(S, a, keep)
                if _kkt_ok(sol.a_tilde, sol.lam, a, sol.I):
                    return sol
                break
            key = tuple(Wl)
            if key in seen:
                break
            seen.add(key)
            # Bland's rule: drop the lowest-index constraint with a negative multiplier
            W.discard(negative[0])
            continue
        free = [i for i in range(d) if i not in W and step[i] < 0]
        alpha, block = 1.0, None
        for i in free:
            r = (a[i] - x[i]) / step[i]
            if r < alpha:
                alpha, block = r, i
        x = x + max(alpha, 0.0) * step
        if block is not None:
            x[block] = a[block]
            W.add(block)
    if d <= FALLBACK_LIMIT:
        return _enumerate(S, a)
    raise NoFeasibleIndexSet("active-set iteration did not converge")


@dataclass(frozen=True)
class QpTrajectory:
    times: np.ndarray
    solutions: tuple
    D: np.ndarray

    def __iter__(self):
        return iter(zip(self.times, self.solutions))

    def __len__(self):
        return len(self.solutions)


def qp_along_time(spec, grid) -> QpTrajectory:
    """Solve the programme for ``Sigma(t)`` at each grid point."""
    from .model import covariance_at

    times = np.asarray(grid, dtype=float)
    sols = []
    for t in times:
        try:
            sols.append(solve_pi(covariance_at(spec, float(t)), spec.a))
        except Exception as exc:
            raise type(exc)(f"at t={t:g}: {exc}") from exc
    return QpTrajectory(times=times, solutions=tuple(sols), D=np.array([s.D for s in sols]))
