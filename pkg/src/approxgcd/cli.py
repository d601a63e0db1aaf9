"""Command-line front end: ``approxgcd {solve,init,cond,bench,verify}``.

Exit codes: 0 success (Converged or MaxIter), 1 solver did not converge,
2 input error, 3 ill-conditioned or singular Gamma without override.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np

from . import analysis
from .image import IMAGE_G, IMAGE_H, auto_mode, egcd_degree_scan, g_ini, image_spec, lsdivmult, solve_image
from .io import ProblemParseError, ResultRecord, read_problem
from .kernel import SingularGamma, kernel_solve, sylv_mosaic_embed, verify_common_divisor
from .optim import CONVERGED, MAX_ITER, SolverOptions
from .poly import PolyTuple
from .wls import IllConditionedGamma, KernelParam

EXIT_OK, EXIT_NOCONV, EXIT_INPUT, EXIT_ILLCOND = 0, 1, 2, 3

log = logging.getLogger("approxgcd")


def _options(args, file_opts=None) -> SolverOptions:
    opts = SolverOptions(**(file_opts or {}))
    return opts.with_(
        max_iter=getattr(args, "maxiter", None),
        grad_tol=getattr(args, "grad_tol", None),
        gamma_reg=getattr(args, "reg_gamma", None),
        seed=getattr(args, "seed", None),
        allow_regularization=True if getattr(args, "allow_regularization", False) else None,
    )


def _emit(text: str, out_path: str | None):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _resolve(args):
    pf = read_problem(args.file)
    d = args.d if getattr(args, "d", None) is not None else pf.d
    method = getattr(args, "method", None) or pf.method
    return pf, d, method


def _run_solve(pf, d, method, opts):
    p = pf.tuple()
    w = pf.weight_scheme()
    if method == "auto":
        method = auto_mode(p.degrees, d)
    if method == "kernel":
        return kernel_solve(p, w, d, None, opts)
    return solve_image(p, w, d, method, opts)


def cmd_solve(args) -> int:
    pf, d, method = _resolve(args)
    opts = _options(args, pf.options)
    if args.eps is not None:
        d_star, res = egcd_degree_scan(pf.tuple(), pf.weight_scheme(), args.eps, opts)
    else:
        if d is None:
            raise ProblemParseError("no degree given (use --d or a 'd' directive)")
        res = _run_solve(pf, d, method, opts)
    rec = ResultRecord.from_result(res)
    print(rec.summary(), file=sys.stderr)
    _emit(rec.to_json(), args.out)
    return EXIT_OK if rec.status in (CONVERGED, MAX_ITER) else EXIT_NOCONV


def cmd_init(args) -> int:
    pf, d, _ = _resolve(args)
    if d is None:
        raise ProblemParseError("no degree given (use --d or a 'd' directive)")
    p = pf.tuple()
    if d == 0:
        rec = {"d": 0, "g0": [pk.coeffs.tolist() for pk in p], "h0": [1.0], "lra_dist": 0.0}
    else:
        g0 = g_ini(p, d)
        h0 = lsdivmult(p, d, g0, pf.weight_scheme()).coeffs
        approx = np.concatenate([np.convolve(g.coeffs, h0) for g in g0])
        rec = {
            "d": d, "g0": [g.coeffs.tolist() for g in g0], "h0": h0.tolist(),
            "lra_dist": float(np.linalg.norm(p.stacked() - approx)),
        }
    print(f"init d={d} lra_dist={rec['lra_dist']:.6e}", file=sys.stderr)
    _emit(json.dumps(rec), args.out)
    return EXIT_OK


def cmd_cond(args) -> int:
    pf, d, method = _resolve(args)
    if d is None or d < 1:
        raise ProblemParseError("cond needs a degree d >= 1")
    p = pf.tuple()
    if method == "auto":
        method = auto_mode(p.degrees, d)
    g0 = g_ini(p, d)
    if method == IMAGE_H:
        P = KernelParam(lsdivmult(p, d, g0).coeffs, image_spec(p.degrees, d, IMAGE_H))
    elif method == IMAGE_G:
        P = KernelParam(g0.stacked(), image_spec(p.degrees, d, IMAGE_G))
    else:
        emb = sylv_mosaic_embed(p, None, d)
        P = KernelParam(emb.phi.T @ g0.stacked(), emb.spec)
    sym = analysis.symbol_bounds(P, args.samples)
    rec = {"method": method, "d": d, "a_F": sym.a_F, "b_F": sym.b_F, "kappa": sym.kappa,
           "n_samples": sym.n_samples, "kappa_infinite": bool(np.isinf(sym.kappa))}
    print(f"cond {method} d={d} kappa={sym.kappa:.6e}", file=sys.stderr)
    _emit(json.dumps(rec, allow_nan=True), args.out)
    return EXIT_OK


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


SPEED_COLUMNS = ("k", "degree", "median_time", "min_time", "max_time", "iterations", "euclid_dist")


def cmd_bench(args) -> int:
    opts = _options(args)
    if args.which == "accuracy":
        rows = analysis.accuracy_table(opts, jobs=args.jobs)
        text = _csv(rows, analysis.ACCURACY_COLUMNS)
    else:
        # timing runs are always sequential
        rows = analysis.time_per_iteration(IMAGE_H, range(1, args.kmax + 1), args.reps, args.floor)
        text = _csv(rows, SPEED_COLUMNS)
    _emit(text, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read()
    d = args.d
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and "p_hat" in doc:
        p = PolyTuple(doc["p_hat"])
        d = d if d is not None else doc.get("d")
    else:
        from .io import parse_problem_text

        pf = parse_problem_text(text)
        p = pf.tuple()
        d = d if d is not None else pf.d
    if d is None:
        raise ProblemParseError("no degree given (use --d)")
    ok, gap = verify_common_divisor(p, int(d), args.tol)
    print(f"verify d={d} {'pass' if ok else 'fail'} gap={gap:.3e}", file=sys.stderr)
    _emit(json.dumps({"d": int(d), "tol": args.tol, "pass": bool(ok), "gap": gap}), args.out)
    return EXIT_OK if ok else EXIT_NOCONV


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="approxgcd", description="Approximate polynomial GCD by variable projection.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--maxiter", type=int)
        sp.add_argument("--grad-tol", type=float)
        sp.add_argument("--reg-gamma", type=float)
        sp.add_argument("--allow-regularization", action="store_true")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("solve", help="compute an approximate common divisor")
    sp.add_argument("file")
    sp.add_argument("--method", choices=("image-h", "image-g", "kernel", "auto"))
    sp.add_argument("--d", type=int)
    sp.add_argument("--eps", type=float, help="scan for the largest d with distance <= eps")
    solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("init", help="initial approximation and its distance")
    sp.add_argument("file")
    sp.add_argument("--d", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("cond", help="symbol-based conditioning at the initial parameter")
    sp.add_argument("file")
    sp.add_argument("--d", type=int)
    sp.add_argument("--method", choices=("image-h", "image-g", "kernel", "auto"))
    sp.add_argument("--samples", type=int, default=1024)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_cond)

    sp = sub.add_parser("bench", help="regenerate the benchmark tables as CSV")
    sp.add_argument("which", choices=("accuracy", "speed"))
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--kmax", type=int, default=8)
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--floor", type=float, default=1.0, help="seconds per timing rep")
    solver_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("verify", help="check that a tuple has a common divisor of degree d")
    sp.add_argument("file")
    sp.add_argument("--d", type=int)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (SingularGamma, IllConditionedGamma) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ILLCOND
    except ProblemParseError as exc:
        print(f"{getattr(args, 'file', '')}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
