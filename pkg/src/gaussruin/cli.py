"""Command-line front end.

Usage::

    gaussruin validate    --model M.json
    gaussruin qp          --model M.json [--t 0.5]
    gaussruin asymptotics --model M.json --u 10 [--L 1,5,25]
    gaussruin bounds      --model M.json --u 2
    gaussruin simulate    --model M.json --u 2 --n 1e6 --grid 512 [--is]
    gaussruin study       --model M.json --u 4,6,8 --n 1e5 --is --refine

Exit status: 0 on success, 2 when the model violates the hypotheses a
command needs (the assumption report goes to stderr), 1 on malformed input,
I/O or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import montecarlo as mc
from .errors import AssumptionViolated, GaussRuinError, WriteFailure
from .model import covariance_at, load_spec, validate
from .qp import solve_pi

log = logging.getLogger("gaussruin")

COMMANDS = ("validate", "qp", "asymptotics", "bounds", "simulate", "study")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _count(text: str) -> int:
    """Integer that may be written in float notation, e.g. ``1e6``."""
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not math.isfinite(val) or val != int(val) or val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(val)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussruin", description="Simultaneous ruin probabilities for Gaussian risk models.")
    p.add_argument("--version", action="version", version=f"gaussruin {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model file (JSON)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv", "text"), default="json")
    common.add_argument("--log-level", default="WARNING")

    level = argparse.ArgumentParser(add_help=False)
    level.add_argument("--u", type=_float_list, help="level u, or a comma-separated list")
    level.add_argument("--u-list", type=_float_list, help="comma-separated list of levels")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--n", type=_count, default=100_000, help="number of paths (accepts 1e6)")
    sim.add_argument("--grid", type=_count, default=256, help="uniform grid points on (0, T]")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--is", dest="importance", action="store_true", help="importance sampling")
    sim.add_argument("--refine", action="store_true", help="add endpoint-refined grid points")
    sim.add_argument("--batches", type=_count, default=None)
    sim.add_argument("--confidence", type=float, default=0.99)
    sim.add_argument("--threads", type=_count, default=None, help="worker threads (default: $GAUSSRUIN_THREADS or 1)")

    sub.add_parser("validate", parents=[common], help="check model hypotheses")
    q = sub.add_parser("qp", parents=[common], help="solve the quadratic programme at time t")
    q.add_argument("--t", type=float, default=None, help="time (default: T)")
    a = sub.add_parser("asymptotics", parents=[common, level], help="closed-form asymptotics")
    a.add_argument("--L", type=_float_list, default=[], help="window lengths for C(L), comma-separated")
    sub.add_parser("bounds", parents=[common, level], help="two-sided bounds")
    sub.add_parser("simulate", parents=[common, level, sim], help="Monte Carlo estimate")
    sub.add_parser("study", parents=[common, level, sim], help="convergence study over increasing u")
    return p


def _levels(args) -> list:
    us = (args.u or []) + (args.u_list or [])
    if not us:
        raise ValueError("--u or --u-list is required for this command")
    if any(not u > 0 for u in us):
        raise ValueError("levels must be positive")
    return us


def _mc_config(args) -> mc.McConfig:
    return mc.McConfig(
        n_samples=args.n,
        grid_points=args.grid,
        seed=args.seed,
        batches=args.batches,
        importance_sampling=args.importance,
        confidence_level=args.confidence,
        refine=args.refine,
        threads=args.threads,
    )


def resolved_config(args) -> dict:
    """Every option that can influence the numbers.  The worker count is excluded."""
    cfg = {k: v for k, v in vars(args).items() if k not in ("threads", "log_level", "out", "format")}
    cfg["model"] = str(Path(args.model).resolve())
    return cfg


# ---------------------------------------------------------------------------
# Commands: each returns (payload dict, csv rows, text lines)
# ---------------------------------------------------------------------------


def _g(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


def cmd_validate(spec, args):
    rep = validate(spec)
    payload = rep.to_dict()
    rows = [{"coordinate": i + 1, **{k: cd[k] for k in ("kind", "B0", "BI", "BII", "convex")}} for i, cd in enumerate(rep.coordinates)]
    text = [
        f"exact_ok={rep.exact_ok}" + (f" ({rep.exact_violation})" if rep.exact_violation else ""),
        f"bounds_ok={rep.bounds_ok}" + (f" ({rep.bounds_violation})" if rep.bounds_violation else ""),
    ] + [f"coordinate {r['coordinate']}: {r['kind']} B0={r['B0']} BI={r['BI']} BII={r['BII']} convex={r['convex']}" for r in rows]
    if not (rep.exact_ok or rep.bounds_ok):
        raise AssumptionViolated("neither the exact nor the bound hypotheses hold", rep)
    return payload, rows, text


def cmd_qp(spec, args):
    t = spec.T if args.t is None else args.t
    sol = solve_pi(covariance_at(spec, t), spec.a)
    payload = {"t": t, **sol.to_dict()}
    row = {"t": t, "I": " ".join(str(i + 1) for i in sol.I), "U": " ".join(str(i + 1) for i in sol.U), "D": sol.D}
    row.update({f"a_tilde_{i + 1}": x for i, x in enumerate(sol.a_tilde)})
    row.update({f"lambda_{i + 1}": x for i, x in enumerate(sol.lam)})
    text = [f"t={_g(t)} " + sol.describe(),
            "a_tilde = " + " ".join(_g(x) for x in sol.a_tilde),
            "lambda  = " + " ".join(_g(x) for x in sol.lam)]
    return payload, [row], text


def cmd_asymptotics(spec, args):
    reports = [asy.asymptotic_report(spec, u, L_values=args.L) for u in _levels(args)]
    payload = {"reports": [r.to_dict() for r in reports]}
    rows = [r.csv_row() for r in reports]
    r0 = reports[0]
    text = [r0.qp_at_T.describe(), f"D'(T)={_g(r0.dD_T)} C={_g(r0.C)}"]
    text += [f"C(L={_g(L)})={_g(v)}" for L, v in r0.C_of_L]
    for r in reports:
        line = (f"u={_g(r.u)} tail_exact={_g(r.tail_exact.value)} tail_asym={_g(r.tail_T.value)}"
                f" p_asym={_g(r.p_ruin_asym)} p_refined={_g(r.p_ruin_refined.value)}")
        if r.bounds:
            line += f" lower={_g(r.bounds.lower.value)} upper={_g(r.bounds.upper.value)}"
        text.append(line)
    return payload, rows, text


def cmd_bounds(spec, args):
    out, rows, text = [], [], []
    for u in _levels(args):
        b = asy.bounds(spec, u * spec.a)
        out.append({"u": u, **b.to_dict()})
        rows.append({"u": u, "lower": b.lower.value, "upper": b.upper.value, "clamped": b.clamped, "converged": b.converged})
        text.append(f"u={_g(u)} lower={_g(b.lower.value)} upper={_g(b.upper.value)}" + (" (clamped)" if b.clamped else ""))
    return {"bounds": out}, rows, text


SIM_COLUMNS = ("u", "m", "n", "method", "p_hat", "se", "ci_lo", "ci_hi", "p_hat_coarse", "bias_margin", "ess", "flags")


def cmd_simulate(spec, args):
    cfg = _mc_config(args)
    ests = []
    for k, u in enumerate(_levels(args)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ests.append(mc.estimate(spec, u, cfg.replace(stream=(k,))))
    rows = [{"u": e.u, "m": e.m, "n": e.n, "method": e.method, "p_hat": e.p_hat, "se": e.std_err,
             "ci_lo": e.ci[0], "ci_hi": e.ci[1], "p_hat_coarse": e.p_hat_coarse,
             "bias_margin": e.bias_margin, "ess": e.ess, "flags": " ".join(e.flags)} for e in ests]
    text = [f"u={_g(e.u)} p_hat={_g(e.p_hat)} se={_g(e.std_err)} ci=[{_g(e.ci[0])}, {_g(e.ci[1])}]"
            f" m={e.m} bias_margin={_g(e.bias_margin)}" + (f" flags={','.join(e.flags)}" if e.flags else "") for e in ests]
    return {"mc_config": cfg.to_dict() | {"threads": None}, "estimates": [e.to_dict() for e in ests]}, rows, text


def cmd_study(spec, args):
    cfg = _mc_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        table = mc.convergence_study(spec, _levels(args), cfg)
    text = [" ".join(f"{c}={_g(r[c])}" for c in mc.STUDY_COLUMNS) for r in table.rows]
    payload = {"mc_config": cfg.to_dict() | {"threads": None}, "columns": list(mc.STUDY_COLUMNS), "rows": table.rows,
               "flags": [list(e.flags) for e in table.estimates]}
    return payload, table.rows, text


HANDLERS = {
    "validate": cmd_validate,
    "qp": cmd_qp,
    "asymptotics": cmd_asymptotics,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "study": cmd_study,
}


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def render(fmt, command, config, spec, payload, rows, text) -> str:
    if fmt == "json":
        doc = {"gaussruin_version": __version__, "command": command, "config": config,
               "model": spec.to_dict(), "result": payload}
        return json.dumps(doc, indent=2, default=_json_default) + "\n"
    prov = [f"gaussruin {__version__} {command}", "config " + json.dumps(config, sort_keys=True, default=_json_default)]
    if fmt == "text":
        return "\n".join([f"# {line}" for line in prov] + text) + "\n"
    buf = io.StringIO()
    for line in prov:
        buf.write(f"# {line}\n")
    cols = list(rows[0].keys()) if rows else []
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in cols])
    return buf.getvalue()


def _emit(content: str, out) -> None:
    if out is None:
        sys.stdout.write(content)
        return
    try:
        Path(out).write_text(content)
    except OSError as exc:
        raise WriteFailure(f"cannot write {out}: {exc}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load_spec(args.model)
        payload, rows, text = HANDLERS[args.command](spec, args)
        _emit(render(args.format, args.command, resolved_config(args), spec, payload, rows, text), args.out)
    except AssumptionViolated as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(json.dumps(exc.report.to_dict(), indent=2, default=_json_default), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GaussRuinError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
