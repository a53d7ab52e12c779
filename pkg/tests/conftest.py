import contextlib
import math

import numpy as np
import pytest

from gaussruin.model import ModelSpec, VarianceFunction, covariance_at
from gaussruin.qp import solve_pi

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def two_dim(rho, a, v=None, c=(0.0, 0.0), T=1.0):
    """Model with unit-variance coordinates correlated by ``rho`` through ``A``."""
    A = np.array([[1.0, 0.0], [rho, math.sqrt(1.0 - rho * rho)]])
    v = v or VarianceFunction.fbm(1.5)
    return ModelSpec(A=A, v=(v, v), c=np.array(c, dtype=float), a=np.array(a, dtype=float), T=T)


@pytest.fixture
def spec_c1():
    """Identical variances and a >= 0, for which the constant equals one."""
    return two_dim(0.5, [1.0, 0.8])


@pytest.fixture
def spec_c43():
    """rho = -0.8, a = (1, -0.5): the constant is 4/3."""
    return two_dim(-0.8, [1.0, -0.5])


def random_spec(rng, d, common=False, drift_scale=0.2, margin=0.05, T=1.0, max_tries=200):
    """Random model satisfying B0-BII with the index sets away from ties.

    Rejects draws where some ``lambda_I`` is below ``margin * max(lambda)`` or
    some ``a_tilde_J`` lies within ``margin * max|a|`` of ``a_J``: near those
    boundaries the index set is ambiguous to rounding and pre-asymptotic terms
    blow up.
    """
    for _ in range(max_tries):
        A = rng.normal(size=(d, d))
        if np.linalg.cond(A) > 20:
            continue
        if common:
            v = (VarianceFunction.fbm(rng.uniform(1.1, 1.9)),) * d
        else:
            v = tuple(VarianceFunction.fbm(x) for x in rng.uniform(1.1, 1.9, size=d))
        a = rng.uniform(-1.0, 1.0, size=d)
        a[rng.integers(d)] = rng.uniform(0.5, 1.0)
        c = rng.uniform(0.0, drift_scale, size=d)
        spec = ModelSpec(A=A, v=v, c=c, a=a, T=T)
        sol = solve_pi(covariance_at(spec, T), a)
        I, J = list(sol.I), list(sol.J)
        if np.min(sol.lam[I]) < margin * np.max(sol.lam):
            continue
        if J and np.min(sol.a_tilde[J] - a[J]) < margin * np.max(np.abs(a)):
            continue
        return spec
    raise RuntimeError("could not draw a well-separated spec")


def random_spd(rng, d, cond_max=1e4):
    while True:
        B = rng.normal(size=(d, d))
        S = B @ B.T + 0.1 * np.eye(d)
        if np.linalg.cond(S) < cond_max:
            return S


class _Outcome:
    detail = ""


@pytest.fixture
def acceptance(request):
    """Record a criterion's PASS/FAIL line for the terminal summary."""
    store = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    @contextlib.contextmanager
    def record(number, title):
        out = _Outcome()
        try:
            yield out
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            store[number] = f"criterion {number:2d} FAIL  {title} :: {out.detail} {msg}".rstrip()
            print(store[number])
            raise
        store[number] = f"criterion {number:2d} PASS  {title} :: {out.detail}".rstrip()
        print(store[number])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(store):
        terminalreporter.write_line(store[k])
