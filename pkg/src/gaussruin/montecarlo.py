"""Monte Carlo estimation of the simultaneous ruin probability on a time grid.

Paths are exact draws of the Gaussian vector ``X`` restricted to a finite
grid.  Estimation is split into independent batches, each with its own
random stream keyed by ``(seed, batch)``; results are folded in batch order,
so the number of worker threads never changes the output.

When every coordinate shares one variance function the estimator samples
``X`` through ``G W`` with ``G G^T = A A^T`` and ``W`` a vector of iid paths.
This has the same law as ``A Z`` and lets coordinates be generated one at a
time, dropping paths that already missed the threshold in an earlier one.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import special

from .errors import WeightDegeneracy
from .model import ModelSpec, check_grid, cholesky_with_jitter, covariance_at, grid_kernel, path_covariance

BIAS_FACTOR = 1.0 / (math.sqrt(2.0) - 1.0)
BATCH_ELEMENTS = 1 << 22
ESS_FRACTION = 0.01


@dataclass(frozen=True)
class McConfig:
    """Sampling parameters.

    ``batches`` fixes how ``n_samples`` is split into independent random
    streams; leave it ``None`` for a size chosen from ``grid_points``.
    ``refine`` adds the endpoint points ``T - k L / u^2`` (``k = 0..K``);
    ``refine_L = None`` picks ``L`` so the window spans ``16 / |D'(T)|``.
    """

    n_samples: int = 100_000
    grid_points: int = 256
    seed: int = 0
    batches: int | None = None
    importance_sampling: bool = False
    confidence_level: float = 0.99
    refine: bool = False
    refine_K: int = 64
    refine_L: float | None = None
    threads: int | None = None
    stream: tuple = ()

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 100:
            raise ValueError("n_samples must be an integer >= 100")
        if int(self.grid_points) != self.grid_points or self.grid_points < 2:
            raise ValueError("grid_points must be an integer >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0.0 < self.confidence_level < 1.0:
            raise ValueError("confidence_level must lie in (0, 1)")
        if self.batches is not None and not 1 <= self.batches <= self.n_samples:
            raise ValueError("batches must lie in [1, n_samples]")
        if self.refine_K < 1:
            raise ValueError("refine_K must be positive")
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "grid_points", int(self.grid_points))
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))

    def replace(self, **changes) -> "McConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["stream"] = list(self.stream)
        return out


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    std_err: float
    ci: tuple
    n: int
    m: int
    method: str
    u: float = math.nan
    p_hat_coarse: float = math.nan
    ess: float = math.nan
    flags: tuple = ()

    @property
    def bias_delta(self) -> float:
        """``p_hat`` minus the estimate on the nested half grid (same draws)."""
        return self.p_hat - self.p_hat_coarse

    @property
    def bias_margin(self) -> float:
        """Grid-bias indicator assuming error ``~ m^{-1/2}``: ``delta / (sqrt 2 - 1)``."""
        return abs(self.bias_delta) * BIAS_FACTOR

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "p_hat": self.p_hat,
            "std_err": self.std_err,
            "ci": list(self.ci),
            "n": self.n,
            "m": self.m,
            "method": self.method,
            "p_hat_coarse": self.p_hat_coarse,
            "bias_delta": self.bias_delta,
            "bias_margin": self.bias_margin,
            "ess": self.ess,
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# Grids and raw sampling
# ---------------------------------------------------------------------------


def uniform_grid(T: float, m: int) -> np.ndarray:
    return T * np.arange(1, m + 1) / m


def refined_grid(T: float, m: int, u: float, L: float, K: int) -> np.ndarray:
    """Uniform grid plus ``T - k L / u^2`` for ``k = 0..K`` (points in ``(0, T]``)."""
    extra = T - np.arange(K + 1) * L / (u * u)
    g = np.union1d(uniform_grid(T, m), extra[extra > 0])
    # merge points closer than rounding noise
    keep = np.concatenate([np.diff(g) > 1e-12 * T, [True]])
    return g[keep]


def default_refine_L(spec: ModelSpec, K: int) -> float:
    from .asymptotics import dD_at_T

    try:
        rate = abs(dD_at_T(spec))
    except Exception:
        rate = 1.0 / spec.T
    return 16.0 / rate / K


def make_grid(spec: ModelSpec, u: float, cfg: McConfig) -> np.ndarray:
    if not cfg.refine:
        return uniform_grid(spec.T, cfg.grid_points)
    L = cfg.refine_L if cfg.refine_L is not None else default_refine_L(spec, cfg.refine_K)
    return refined_grid(spec.T, cfg.grid_points, u, L, cfg.refine_K)


def coarse_index(m: int) -> np.ndarray:
    """Every other grid index counted back from the last point."""
    return np.arange(m - 1, -1, -2)[::-1]


def _rng(seed: int, key: tuple) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=key)))


def sample_paths(spec: ModelSpec, grid, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` paths of ``X`` on ``grid``.

    Returns an ``n x (d m)`` array, coordinate-major: column ``j m + k``
    holds ``X_j(t_k)``.
    """
    g = check_grid(grid, spec.T)
    m, d = g.size, spec.d
    L, _ = cholesky_with_jitter(path_covariance(spec, g))
    eps = _rng(seed, ()).standard_normal((n, d * m))
    Z = (eps @ L.T).reshape(n, d, m)
    X = np.einsum("ji,nim->njm", spec.A, Z)
    return X.reshape(n, d * m)


# ---------------------------------------------------------------------------
# Estimation kernels
# ---------------------------------------------------------------------------


class _BaseSampler:
    """Draws iid copies of one scalar path on the grid."""

    def __init__(self, vf, grid):
        self.m = grid.size
        if vf.kind == "brownian":
            self.scale = np.sqrt(np.diff(grid, prepend=0.0))
            self.L = None
        else:
            self.L, _ = cholesky_with_jitter(grid_kernel(vf, grid))
            self.scale = None

    def __call__(self, rng, k):
        eps = rng.standard_normal((k, self.m))
        if self.L is None:
            eps *= self.scale
            return np.cumsum(eps, axis=1, out=eps)
        return eps @ self.L.T


@dataclass
class _Plan:
    grid: np.ndarray
    thr: np.ndarray          # (d, m) thresholds u a_j + c_j t, in sampling order
    coarse: np.ndarray
    order: np.ndarray        # sampling order of coordinates (common case)
    G: np.ndarray | None     # mixing factor in sampling order (common case)
    samplers: list
    shift: np.ndarray | None  # (d, m) shift of the sampled base paths
    lam_star: np.ndarray | None  # in the coordinate order of the sampled X
    log_w0: float = 0.0


def _build_plan(spec: ModelSpec, u: float, grid: np.ndarray, shift_scale: float | None) -> _Plan:
    d = spec.d
    thr = u * spec.a[:, None] + spec.c[:, None] * grid[None, :]
    coarse = coarse_index(grid.size)
    if spec.common_variance:
        vf = spec.v[0]
        gram = spec.A @ spec.A.T
        # most restrictive coordinate first: largest standardised endpoint threshold
        z = thr[:, -1] / np.sqrt(np.diag(gram))
        order = np.argsort(-z, kind="stable")
        G = np.linalg.cholesky(gram[np.ix_(order, order)])
        samplers = [_BaseSampler(vf, grid)] * d
        plan = _Plan(grid, thr[order], coarse, order, G, samplers, None, None)
    else:
        samplers = [_BaseSampler(vf, grid) for vf in spec.v]
        plan = _Plan(grid, thr, coarse, np.arange(d), None, samplers, None, None)
    if shift_scale is not None and shift_scale != 0.0:
        _attach_shift(spec, u, plan, shift_scale)
    return plan


def _attach_shift(spec, u, plan, scale):
    """Mean shift equal to the conditional mean of the grid given ``X(T) = x*``."""
    from .asymptotics import qp_at

    T = spec.T
    grid = plan.grid
    if abs(grid[-1] - T) > 1e-12 * T:
        raise ValueError("importance sampling needs T on the grid")
    x_star = scale * (u * qp_at(spec).a_tilde + spec.c * T)
    lam = np.linalg.solve(covariance_at(spec, T), x_star)
    if plan.G is not None:
        vf = spec.v[0]
        rho = 0.5 * (vf.value(grid) + vf.value(T) - vf.value(T - grid))
        b = np.linalg.solve(plan.G, x_star[plan.order])
        plan.shift = b[:, None] * (rho / vf.value(T))[None, :]
        plan.lam_star = lam[plan.order]
    else:
        beta = spec.A.T @ lam
        rho = np.array([0.5 * (vf.value(grid) + vf.value(T) - vf.value(T - grid)) for vf in spec.v])
        plan.shift = beta[:, None] * rho
        plan.lam_star = lam
    plan.log_w0 = 0.5 * float(lam @ x_star)


def _batch_common(plan: _Plan, rng, k):
    d = len(plan.samplers)
    W = []
    cond = None
    for s in range(d):
        base = plan.samplers[s](rng, k if cond is None else cond.shape[0])
        if plan.shift is not None:
            base += plan.shift[s]
        W.append(base)
        X = plan.G[s, 0] * W[0]
        for r in range(1, s + 1):
            X += plan.G[s, r] * W[r]
        c = X > plan.thr[s]
        cond = c if cond is None else cond & c
        keep = cond.any(axis=1)
        if not keep.all():
            cond = cond[keep]
            W = [w[keep] for w in W]
    endpoint = np.stack([w[:, -1] for w in W], axis=1) @ plan.G.T if W[0].shape[0] else np.zeros((0, d))
    return cond, endpoint


def _batch_general(plan: _Plan, rng, k, A):
    Z = np.stack([smp(rng, k) for smp in plan.samplers], axis=0)
    if plan.shift is not None:
        Z += plan.shift[:, None, :]
    X = np.einsum("ji,ink->jnk", A, Z)
    cond = np.all(X > plan.thr[:, None, :], axis=0)
    keep = cond.any(axis=1)
    return cond[keep], X[:, keep, -1].T


@dataclass(frozen=True)
class _BatchResult:
    k: int
    hits: int
    hits_coarse: int
    sw: float
    sw2: float
    sw_coarse: float


def _run_batch(spec, plan, seed, key, k) -> _BatchResult:
    rng = _rng(seed, key)
    if plan.G is not None:
        cond, endpoint = _batch_common(plan, rng, k)
    else:
        cond, endpoint = _batch_general(plan, rng, k, spec.A)
    coarse_hit = cond[:, plan.coarse].any(axis=1)
    hits = cond.shape[0]
    if plan.lam_star is None:
        w = np.ones(hits)
    else:
        w = np.exp(plan.log_w0 - endpoint @ plan.lam_star)
    return _BatchResult(k, hits, int(coarse_hit.sum()), float(w.sum()), float((w * w).sum()), float(w[coarse_hit].sum()))


def worker_count(cfg: McConfig) -> int:
    if cfg.threads is not None:
        return max(1, int(cfg.threads))
    env = os.environ.get("GAUSSRUIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def batch_sizes(n: int, m: int, batches: int | None) -> list:
    if batches is None:
        per = max(256, BATCH_ELEMENTS // max(m, 1))
        batches = -(-n // per)
    base, extra = divmod(n, batches)
    return [base + (1 if b < extra else 0) for b in range(batches)]


def _execute(spec, plan, cfg) -> list:
    sizes = batch_sizes(cfg.n_samples, plan.grid.size, cfg.batches)
    jobs = [(cfg.stream + (b,), k) for b, k in enumerate(sizes)]
    run = lambda job: _run_batch(spec, plan, cfg.seed, job[0], job[1])
    workers = worker_count(cfg)
    if workers == 1 or len(jobs) == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


# ---------------------------------------------------------------------------
# Public estimators
# ---------------------------------------------------------------------------


def _z(level):
    return float(special.ndtri(0.5 + 0.5 * level))


def wilson_interval(hits: int, n: int, level: float) -> tuple:
    z = _z(level)
    p = hits / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def estimate_ruin(spec: ModelSpec, u: float, cfg: McConfig, grid=None) -> McEstimate:
    """Crude estimator: fraction of paths that ruin on the grid."""
    grid = make_grid(spec, u, cfg) if grid is None else check_grid(grid, spec.T)
    plan = _build_plan(spec, u, grid, None)
    results = _execute(spec, plan, cfg)
    n = cfg.n_samples
    hits = sum(r.hits for r in results)
    hits_c = sum(r.hits_coarse for r in results)
    p = hits / n
    se = math.sqrt(p * (1 - p) / n)
    if p * n < 10:
        ci = wilson_interval(hits, n, cfg.confidence_level)
    else:
        z = _z(cfg.confidence_level)
        ci = (max(0.0, p - z * se), min(1.0, p + z * se))
    flags = ()
    if hits == 0:
        flags = ("no_hits",)
    elif hits == n:
        flags = ("all_hits",)
    return McEstimate(p, se, ci, n, grid.size, "crude", float(u), hits_c / n, float(hits), flags)


def estimate_ruin_is(spec: ModelSpec, u: float, cfg: McConfig, grid=None, shift_scale: float = 1.0) -> McEstimate:
    """Mean-shift importance sampling toward the most likely ruin configuration.

    With ``shift_scale = 0`` the draws, and hence ``p_hat``, coincide with
    :func:`estimate_ruin`.
    """
    grid = make_grid(spec, u, cfg) if grid is None else check_grid(grid, spec.T)
    if abs(grid[-1] - spec.T) > 1e-12 * spec.T:
        raise ValueError("importance sampling needs T on the grid")
    plan = _build_plan(spec, u, grid, shift_scale)
    results = _execute(spec, plan, cfg)
    n = cfg.n_samples
    sw = math.fsum(r.sw for r in results)
    sw2 = math.fsum(r.sw2 for r in results)
    swc = math.fsum(r.sw_coarse for r in results)
    p = sw / n
    var = max(sw2 / n - p * p, 0.0)
    se = math.sqrt(var / n)
    z = _z(cfg.confidence_level)
    ci = (max(0.0, p - z * se), min(1.0, p + z * se)) if p <= 1.0 else (p - z * se, p + z * se)
    ess = sw * sw / sw2 if sw2 > 0 else 0.0
    flags = []
    if sw == 0:
        flags.append("no_hits")
    if ess < ESS_FRACTION * n:
        flags.append("weight_degeneracy")
        warnings.warn(f"effective sample size {ess:.1f} is below {ESS_FRACTION:.0%} of n", WeightDegeneracy, stacklevel=2)
    return McEstimate(p, se, ci, n, grid.size, "importance", float(u), swc / n, ess, tuple(flags))


def estimate(spec: ModelSpec, u: float, cfg: McConfig) -> McEstimate:
    if cfg.importance_sampling:
        return estimate_ruin_is(spec, u, cfg)
    return estimate_ruin(spec, u, cfg)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

STUDY_COLUMNS = ("u", "m", "n", "p_hat", "se", "ci_lo", "ci_hi", "tail_exact", "ratio", "C_pred")


@dataclass
class StudyTable:
    rows: list = field(default_factory=list)
    estimates: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in STUDY_COLUMNS])
        return buf.getvalue()

    def to_json(self, **kw) -> str:
        return json.dumps({"columns": list(STUDY_COLUMNS), "rows": self.rows}, **kw)


def convergence_study(spec: ModelSpec, u_list, cfg: McConfig) -> StudyTable:
    """Empirical ratio ``p_hat / P(X(T) - c T > u a)`` against the predicted constant.

    Each level gets its own random stream, derived from ``cfg.seed`` and the
    position of ``u`` in the list.
    """
    from .asymptotics import constant_C, endpoint_tail_exact
    from .model import validate

    u_arr = np.asarray(u_list, dtype=float)
    if u_arr.ndim != 1 or u_arr.size == 0:
        raise ValueError("u_list must be a non-empty sequence")
    if np.any(np.diff(u_arr) <= 0):
        raise ValueError("u_list must be strictly increasing")
    C = constant_C(spec, check=False) if validate(spec).exact_ok else math.nan
    table = StudyTable()
    for k, u in enumerate(u_arr):
        est = estimate(spec, float(u), cfg.replace(stream=cfg.stream + (k,)))
        tail = endpoint_tail_exact(spec, float(u)).value
        ratio = est.p_hat / tail if tail > 0 else math.nan
        table.estimates.append(est)
        table.rows.append({
            "u": float(u),
            "m": est.m,
            "n": est.n,
            "p_hat": est.p_hat,
            "se": est.std_err,
            "ci_lo": est.ci[0],
            "ci_hi": est.ci[1],
            "tail_exact": tail,
            "ratio": ratio,
            "C_pred": C,
        })
    return table
