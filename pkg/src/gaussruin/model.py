"""Risk-model definition and covariance structure.

The model is ``X(t) = A Z(t)`` where the coordinates of ``Z`` are mutually
independent centred Gaussian processes with stationary increments.  Each
coordinate is described by its variance function ``v_i(t) = Var Z_i(t)``,
which determines the whole covariance through

    rho_i(s, t) = (v_i(s) + v_i(t) - v_i(|s - t|)) / 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

from .errors import (
    DegenerateGrid,
    FactorizationFailed,
    GridNotSorted,
    InvalidDirection,
    MalformedSpec,
    NonPositiveTime,
    SingularModel,
)

MAX_CONDITION = 1e12
JITTER_LEVELS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


# ---------------------------------------------------------------------------
# Variance functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryCovariance:
    """Covariance ``R(w)`` of a stationary rate process.

    ``exponential``: ``R(w) = variance * exp(-rate |w|)``;
    ``gaussian``: ``R(w) = variance * exp(-rate w^2)``.
    """

    family: str
    variance: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.family not in ("exponential", "gaussian"):
            raise ValueError(f"unknown covariance family {self.family!r}")
        if not (self.variance > 0 and self.rate > 0):
            raise ValueError("variance and rate must be positive")

    def __call__(self, w):
        w = np.abs(np.asarray(w, dtype=float))
        if self.family == "exponential":
            return self.variance * np.exp(-self.rate * w)
        return self.variance * np.exp(-self.rate * w * w)

    def integral(self, t):
        """``int_0^t R(w) dw``."""
        t = np.asarray(t, dtype=float)
        s2, th = self.variance, self.rate
        if self.family == "exponential":
            return s2 * -np.expm1(-th * t) / th
        return s2 * 0.5 * math.sqrt(math.pi / th) * special.erf(math.sqrt(th) * t)

    def double_integral(self, t):
        """``int_0^t ds int_0^s R(w) dw``."""
        t = np.asarray(t, dtype=float)
        s2, th = self.variance, self.rate
        if self.family == "exponential":
            return s2 * (t / th + np.expm1(-th * t) / th**2)
        # t * int_0^t R - int_0^t w R(w) dw
        return t * self.integral(t) - s2 * -np.expm1(-th * t * t) / (2 * th)

    def to_dict(self):
        return {"family": self.family, "variance": self.variance, "rate": self.rate}


@dataclass(frozen=True)
class VarianceFunction:
    """Variance function ``v(t)`` of one coordinate of ``Z``.

    Build instances through the class methods :meth:`fbm`, :meth:`brownian`,
    :meth:`integrated_stationary` and :meth:`table`.  Equality is by kind and
    parameters, which is what the identical-variance check relies on.
    """

    kind: str
    alpha: float | None = None
    R: StationaryCovariance | Callable | None = None
    times: tuple | None = None
    values: tuple | None = None

    # -- constructors -----------------------------------------------------

    @classmethod
    def fbm(cls, alpha: float) -> "VarianceFunction":
        alpha = float(alpha)
        if not 1.0 < alpha < 2.0:
            raise ValueError(f"fbm exponent alpha must lie in (1, 2), got {alpha}")
        return cls("fbm", alpha=alpha)

    @classmethod
    def brownian(cls) -> "VarianceFunction":
        return cls("brownian")

    @classmethod
    def integrated_stationary(cls, R) -> "VarianceFunction":
        if not callable(R):
            raise TypeError("R must be callable")
        return cls("integrated_stationary", R=R)

    @classmethod
    def table(cls, times: Sequence[float], values: Sequence[float]) -> "VarianceFunction":
        t = np.asarray(times, dtype=float)
        y = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != y.shape or t.size < 3:
            raise ValueError("table needs matching 1-d time/value arrays of length >= 3")
        if t[0] != 0.0 or y[0] != 0.0:
            raise ValueError("table must start at (0, 0)")
        if np.any(np.diff(t) <= 0):
            raise GridNotSorted("table times must be strictly increasing")
        if np.any(np.diff(y) <= 0):
            raise ValueError("table values must be strictly increasing")
        return cls("table", times=tuple(t.tolist()), values=tuple(y.tolist()))

    # -- evaluation -------------------------------------------------------

    @cached_property
    def _interp(self):
        return PchipInterpolator(np.array(self.times), np.array(self.values), extrapolate=False)

    def __call__(self, t):
        return self.value(t)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "fbm":
            return np.power(np.abs(t), self.alpha)
        if self.kind == "brownian":
            return np.abs(t)
        if self.kind == "integrated_stationary":
            if isinstance(self.R, StationaryCovariance):
                return 2.0 * self.R.double_integral(np.abs(t))
            return _vectorize(lambda s: 2.0 * integrate.quad(lambda w: (s - w) * self.R(w), 0.0, s)[0], np.abs(t))
        tt = np.clip(np.abs(t), 0.0, self.times[-1])
        return self._interp(tt)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "fbm":
            return self.alpha * np.power(t, self.alpha - 1.0)
        if self.kind == "brownian":
            return np.ones_like(t)
        if self.kind == "integrated_stationary":
            if isinstance(self.R, StationaryCovariance):
                return 2.0 * self.R.integral(t)
            return _vectorize(lambda s: 2.0 * integrate.quad(self.R, 0.0, s)[0], t)
        tt = np.clip(t, 0.0, self.times[-1])
        return self._interp.derivative()(tt)

    # -- analytic properties ---------------------------------------------

    @property
    def berman(self) -> bool | None:
        """``v(t) = o(t)`` as ``t -> 0`` when decidable analytically, else None."""
        if self.kind == "fbm":
            return True
        if self.kind == "brownian":
            return False
        if self.kind == "integrated_stationary":
            # v(t) ~ R(0) t^2 for continuous R
            return True
        return None

    @property
    def convex(self) -> bool | None:
        """Convexity when decidable analytically, else None."""
        if self.kind in ("fbm", "brownian"):
            return True
        if self.kind == "integrated_stationary":
            # v'' = 2R > 0
            return True
        return None

    def to_dict(self) -> dict:
        if self.kind == "fbm":
            return {"kind": "fbm", "alpha": self.alpha}
        if self.kind == "brownian":
            return {"kind": "brownian"}
        if self.kind == "integrated_stationary":
            if not isinstance(self.R, StationaryCovariance):
                raise TypeError("only parametric covariance families serialize to JSON")
            return {"kind": "integrated_stationary", "R": self.R.to_dict()}
        return {"kind": "table", "t": list(self.times), "v": list(self.values)}

    def describe(self) -> str:
        if self.kind == "fbm":
            return f"fbm(alpha={self.alpha:g})"
        if self.kind == "integrated_stationary" and isinstance(self.R, StationaryCovariance):
            return f"integrated_stationary({self.R.family}, variance={self.R.variance:g}, rate={self.R.rate:g})"
        return self.kind


def _vectorize(fn, t):
    t = np.asarray(t, dtype=float)
    out = np.array([fn(float(s)) for s in t.ravel()])
    return out.reshape(t.shape) if t.ndim else float(out[0])


# ---------------------------------------------------------------------------
# Model definition
# ---------------------------------------------------------------------------


def _frozen_array(x, ndim):
    arr = np.array(x, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full risk model ``X(t) = A Z(t)`` with drift ``c``, direction ``a`` and horizon ``T``."""

    A: np.ndarray
    v: tuple
    c: np.ndarray
    a: np.ndarray
    T: float
    max_condition: float = field(default=MAX_CONDITION, repr=False)

    def __post_init__(self):
        A = _frozen_array(self.A, 2)
        c = _frozen_array(self.c, 1)
        a = _frozen_array(self.a, 1)
        v = tuple(self.v)
        d = A.shape[0]
        if A.shape != (d, d) or d < 1:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if len(v) != d or c.shape != (d,) or a.shape != (d,):
            raise ValueError("A, v, c and a must agree in dimension")
        if not all(isinstance(vi, VarianceFunction) for vi in v):
            raise TypeError("v must hold VarianceFunction instances")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(c)) or not np.all(np.isfinite(a)):
            raise ValueError("non-finite entries in A, c or a")
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > self.max_condition:
            raise SingularModel(f"mixing matrix is numerically singular (cond={cond:.3g})")
        if not np.any(a > 0):
            raise InvalidDirection("direction a must have at least one positive coordinate")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise NonPositiveTime(f"horizon T must be positive, got {self.T}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "T", float(self.T))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @cached_property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    @property
    def common_variance(self) -> bool:
        return all(vi == self.v[0] for vi in self.v)

    def v_at(self, t) -> np.ndarray:
        return np.array([float(vi.value(t)) for vi in self.v])

    def vdot_at(self, t) -> np.ndarray:
        return np.array([float(vi.derivative(t)) for vi in self.v])

    def replace(self, **changes) -> "ModelSpec":
        fields = dict(A=self.A, v=self.v, c=self.c, a=self.a, T=self.T, max_condition=self.max_condition)
        fields.update(changes)
        return ModelSpec(**fields)

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.v == other.v
            and self.T == other.T
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.c, other.c)
            and np.array_equal(self.a, other.a)
        )

    __hash__ = None

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "A": self.A.tolist(),
            "v": [vi.to_dict() for vi in self.v],
            "c": self.c.tolist(),
            "a": self.a.tolist(),
            "T": self.T,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return spec_from_dict(doc)


# ---------------------------------------------------------------------------
# JSON wire format
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
MODEL_SCHEMA = {
    "type": "object",
    "required": ["d", "A", "v", "c", "a", "T"],
    "properties": {
        "d": {"type": "integer", "minimum": 1},
        "A": {"type": "array", "items": _VEC, "minItems": 1},
        "v": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["fbm", "brownian", "integrated_stationary", "table"]},
                    "alpha": _NUM,
                    "R": {
                        "type": "object",
                        "required": ["family"],
                        "properties": {
                            "family": {"enum": ["exponential", "gaussian"]},
                            "variance": {"type": "number", "exclusiveMinimum": 0},
                            "rate": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                    "t": _VEC,
                    "v": _VEC,
                },
                "allOf": [
                    {"if": {"properties": {"kind": {"const": "fbm"}}}, "then": {"required": ["alpha"]}},
                    {
                        "if": {"properties": {"kind": {"const": "integrated_stationary"}}},
                        "then": {"required": ["R"]},
                    },
                    {"if": {"properties": {"kind": {"const": "table"}}}, "then": {"required": ["t", "v"]}},
                ],
            },
        },
        "c": _VEC,
        "a": _VEC,
        "T": {"type": "number", "exclusiveMinimum": 0},
    },
}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _variance_from_dict(doc: dict) -> VarianceFunction:
    kind = doc["kind"]
    if kind == "fbm":
        return VarianceFunction.fbm(doc["alpha"])
    if kind == "brownian":
        return VarianceFunction.brownian()
    if kind == "integrated_stationary":
        R = doc["R"]
        return VarianceFunction.integrated_stationary(
            StationaryCovariance(R["family"], R.get("variance", 1.0), R.get("rate", 1.0))
        )
    return VarianceFunction.table(doc["t"], doc["v"])


def spec_from_dict(doc: dict) -> ModelSpec:
    """Parse the JSON document form of a model, raising :class:`MalformedSpec` with a JSON pointer."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise MalformedSpec(_pointer(err.absolute_path), err.message)
    d = doc["d"]
    for key in ("A", "v", "c", "a"):
        if len(doc[key]) != d:
            raise MalformedSpec(f"/{key}", f"expected {d} entries, got {len(doc[key])}")
    for i, row in enumerate(doc["A"]):
        if len(row) != d:
            raise MalformedSpec(f"/A/{i}", f"expected {d} entries, got {len(row)}")
    v = []
    for i, vd in enumerate(doc["v"]):
        try:
            v.append(_variance_from_dict(vd))
        except ValueError as exc:
            raise MalformedSpec(f"/v/{i}", str(exc)) from exc
    try:
        return ModelSpec(A=doc["A"], v=v, c=doc["c"], a=doc["a"], T=doc["T"])
    except InvalidDirection as exc:
        raise MalformedSpec("/a", str(exc)) from exc
    except SingularModel as exc:
        raise MalformedSpec("/A", str(exc)) from exc


def load_spec(path) -> ModelSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedSpec("", f"invalid JSON: {exc}") from exc
    return spec_from_dict(doc)


def save_spec(spec: ModelSpec, path) -> None:
    Path(path).write_text(spec.to_json(indent=2) + "\n")


# ---------------------------------------------------------------------------
# Covariance structure
# ---------------------------------------------------------------------------


def covariance_at(spec: ModelSpec, t: float) -> np.ndarray:
    """``Sigma(t) = A diag(v(t)) A^T``."""
    if not t > 0:
        raise NonPositiveTime(f"time must be positive, got {t}")
    if t > spec.T * (1 + 1e-12):
        raise ValueError(f"time {t} lies beyond the horizon T={spec.T}")
    vt = spec.v_at(t)
    if np.any(vt <= 0):
        raise SingularModel(f"variance vanishes at t={t}")
    S = (spec.A * vt) @ spec.A.T
    return 0.5 * (S + S.T)


def cross_covariance(spec: ModelSpec, i: int, s, t):
    """``rho_i(s, t) = Cov(Z_i(s), Z_i(t))``."""
    vi = spec.v[i]
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0) or np.any(s > spec.T * (1 + 1e-12)) or np.any(t > spec.T * (1 + 1e-12)):
        raise ValueError("times must lie in [0, T]")
    out = 0.5 * (vi.value(s) + vi.value(t) - vi.value(np.abs(s - t)))
    return float(out) if out.ndim == 0 else out


def check_grid(grid, T: float | None = None) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("grid must be a non-empty 1-d sequence")
    steps = np.diff(g)
    if np.any(steps == 0):
        raise DegenerateGrid("grid contains duplicate points")
    if np.any(steps < 0):
        raise GridNotSorted("grid must be strictly increasing")
    if g[0] <= 0:
        raise NonPositiveTime("grid points must be positive")
    if T is not None and g[-1] > T * (1 + 1e-12):
        raise ValueError("grid extends beyond the horizon")
    return g


def grid_kernel(vf: VarianceFunction, grid: np.ndarray) -> np.ndarray:
    """Covariance matrix of one coordinate of ``Z`` on ``grid``."""
    vt = vf.value(grid)
    lag = vf.value(np.abs(grid[:, None] - grid[None, :]))
    K = 0.5 * (vt[:, None] + vt[None, :] - lag)
    return 0.5 * (K + K.T)


def path_covariance(spec: ModelSpec, grid) -> np.ndarray:
    """Covariance of ``(Z_1(grid), ..., Z_d(grid))``, coordinate-major.

    Coordinates of ``Z`` are independent, so off-diagonal blocks are zero.
    """
    g = check_grid(grid, spec.T)
    m = g.size
    out = np.zeros((spec.d * m, spec.d * m))
    for i, vf in enumerate(spec.v):
        out[i * m:(i + 1) * m, i * m:(i + 1) * m] = grid_kernel(vf, g)
    return out


def cholesky_with_jitter(M: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter if needed.

    Returns the factor and the relative jitter used (0 when none).
    """
    try:
        return np.linalg.cholesky(M), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(M)))
    if not scale > 0:
        raise FactorizationFailed("matrix has non-positive mean diagonal")
    eye = np.eye(M.shape[0])
    for eps in JITTER_LEVELS:
        try:
            return np.linalg.cholesky(M + eps * scale * eye), eps
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailed(f"Cholesky failed with jitter up to {JITTER_LEVELS[-1]:g} x mean diagonal")


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    exact_ok: bool
    bounds_ok: bool
    coordinates: list
    exact_violation: str | None = None
    bounds_violation: str | None = None
    identical_variance: bool = False
    convex: bool = False
    gram_nonnegative: bool = False
    drift_nonnegative: bool = False

    def to_dict(self) -> dict:
        return {
            "exact_ok": self.exact_ok,
            "exact_violation": self.exact_violation,
            "bounds_ok": self.bounds_ok,
            "bounds_violation": self.bounds_violation,
            "identical_variance": self.identical_variance,
            "convex": self.convex,
            "gram_nonnegative": self.gram_nonnegative,
            "drift_nonnegative": self.drift_nonnegative,
            "coordinates": self.coordinates,
        }


def berman_numeric(vf: VarianceFunction, T: float) -> bool:
    """Numerical proxy for ``v(t) = o(t)`` on ``t_k = T 2^-k``, ``k = 10..20``."""
    tk = T * 2.0 ** -np.arange(10, 21)
    ratio = vf.value(tk) / tk
    ref = float(vf.value(T)) / T
    return bool(np.all(np.diff(ratio) < 0) and np.all(ratio < 0.1 * ref))


def convex_numeric(vf: VarianceFunction, T: float, points: int = 256) -> bool:
    t = np.linspace(0.0, T, points)
    y = vf.value(t)
    second = y[2:] - 2 * y[1:-1] + y[:-2]
    return bool(np.all(second >= -1e-12 * max(1.0, float(np.max(np.abs(y))))))


def _check_coordinate(vf: VarianceFunction, T: float, points: int) -> dict:
    out = {"kind": vf.describe()}
    t = np.linspace(0.0, T, points)
    y = vf.value(t)
    if vf.kind == "integrated_stationary":
        R0 = np.asarray(vf.R(t))
        r_pos = bool(np.all(R0 > 0))
    else:
        r_pos = True
    b0 = bool(float(vf.value(0.0)) == 0.0 and np.all(np.diff(y) > 0) and r_pos)
    out["B0"] = b0
    if not b0:
        out["B0_detail"] = "v(0) != 0, v not strictly increasing, or R not positive on the sample grid"
    vdot_T = float(vf.derivative(T))
    out["BI"] = bool(vdot_T > 0)
    out["vdot_T"] = vdot_T
    berman = vf.berman
    out["BII"] = berman if berman is not None else berman_numeric(vf, T)
    out["BII_method"] = "analytic" if berman is not None else "numeric"
    convex = vf.convex
    out["convex"] = convex if convex is not None else convex_numeric(vf, T, points)
    return out


def validate(spec: ModelSpec, grid_points: int = 256) -> AssumptionReport:
    """Check the hypotheses of the exact-asymptotics and the bounds results."""
    coords = [_check_coordinate(vf, spec.T, grid_points) for vf in spec.v]
    exact_violation = None
    for i, cd in enumerate(coords):
        for flag in ("B0", "BI", "BII"):
            if not cd[flag] and exact_violation is None:
                exact_violation = f"coordinate {i + 1}: {flag} fails for {cd['kind']}"
    identical = spec.common_variance
    convex = all(cd["convex"] for cd in coords)
    gram = (spec.A @ spec.A.T)
    gram_ok = bool(np.all(gram >= 0))
    drift_ok = bool(np.all(spec.c >= 0))
    bounds_violation = None
    if not all(cd["B0"] for cd in coords):
        bounds_violation = "B0 fails"
    elif not identical:
        bounds_violation = "variance functions differ across coordinates"
    elif not convex:
        bounds_violation = "variance function is not convex on [0, T]"
    elif not gram_ok:
        i, j = np.argwhere(gram < 0)[0]
        bounds_violation = f"(A A^T)[{i + 1},{j + 1}] = {gram[i, j]:.6g} < 0"
    elif not drift_ok:
        bounds_violation = "drift c has a negative coordinate"
    return AssumptionReport(
        exact_ok=exact_violation is None,
        bounds_ok=bounds_violation is None,
        coordinates=coords,
        exact_violation=exact_violation,
        bounds_violation=bounds_violation,
        identical_variance=identical,
        convex=convex,
        gram_nonnegative=gram_ok,
        drift_nonnegative=drift_ok,
    )
