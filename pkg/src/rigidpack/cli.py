"""Command-line interface.

Subcommands: ``metrics``, ``assign``, ``fit``, ``interp``, ``selftest``.
Numeric output is printed with 6 significant digits. Exit codes: 0 on
success, 1 on a domain error (bad file contents, incompatible
assemblies), 2 on usage errors.

``RIGIDPACK_THREADS`` caps the worker threads of parallelizable stages
(cost-matrix construction for large assemblies); results are identical
for any thread count. The default uses all cores.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .assignment import default_reg, lsa_solve, plan_round, sinkhorn
from .fitter import FitConfig, fit_assembly, flow_trajectory
from .io import parse_assembly_xyz, write_assembly_xyz, write_transforms
from .losses import loss_star, loss_under_plan
from .metrics import COST_KINDS, METRIC_KINDS, cost_matrix, metric_star


def fmt(value: float) -> str:
    """Format a number with 6 significant digits (positional; zero as 0.000000)."""
    v = float(value)
    if v == 0.0:
        return "0.000000"
    return np.format_float_positional(v, precision=6, unique=False, fractional=False)


def _append_csv(path, metric, value, assignment, alpha, reg, seed):
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["metric", "value", "assignment", "alpha", "reg", "seed"])
        writer.writerow([metric, fmt(value), assignment,
                         "" if alpha is None else fmt(alpha),
                         "" if reg is None else fmt(reg),
                         "" if seed is None else str(seed)])


def _load_pair(pred_path, gt_path):
    pred = parse_assembly_xyz(pred_path).assembly
    gt = parse_assembly_xyz(gt_path).assembly
    return pred, gt


def _cmd_metrics(args) -> int:
    pred, gt = _load_pair(args.pred, args.gt)
    reg = args.reg
    report = metric_star(args.metric, pred, gt, assignment=args.assign,
                         cost_kind=args.cost, reg=reg)
    print(fmt(report.value))
    if args.csv:
        used_reg = reg
        if args.assign == "sinkhorn" and reg is None:
            used_reg = default_reg(cost_matrix(pred, gt, args.cost))
        _append_csv(args.csv, args.metric, report.value, args.assign, None, used_reg, None)
    return 0


def _cmd_assign(args) -> int:
    pred, gt = _load_pair(args.pred, args.gt)
    C = cost_matrix(pred, gt, args.cost)
    if args.method == "exact":
        sigma, total = lsa_solve(C)
    else:
        reg = default_reg(C) if args.reg is None else args.reg
        plan = sinkhorn(C, reg)
        sigma = plan_round(plan)
        total = float(C[np.arange(len(sigma)), sigma].sum())
    print(" ".join(str(int(j)) for j in sigma))
    print(f"cost {fmt(total)}")
    return 0


def _cmd_fit(args) -> int:
    initial, target = _load_pair(args.initial, args.target)
    config = FitConfig(loss_kind=args.loss, assignment=args.assign, reg=args.reg,
                       alpha=args.alpha, step_size=args.step_size,
                       max_iters=args.max_iters, rel_tol=args.rel_tol, seed=args.seed)
    result = fit_assembly(initial, target, config)
    print(f"final_loss {fmt(result.final_loss)}")
    print(f"iterations {result.iterations}")
    print(f"converged {'yes' if result.converged else 'no'}")
    fitted = initial.replace_transforms(result.transforms)
    if args.out:
        write_assembly_xyz(fitted, args.out)
    if args.transforms_out:
        write_transforms(result.transforms, args.transforms_out)
    if args.csv:
        used_reg = args.reg
        if args.assign == "sinkhorn" and used_reg is None:
            used_reg = default_reg(cost_matrix(fitted, target, "rmsd"))
        _append_csv(args.csv, f"fit_{args.loss}", result.final_loss, args.assign,
                    args.alpha if args.loss == "ml" else None, used_reg, args.seed)
    return 0


def _cmd_interp(args) -> int:
    initial, target = _load_pair(args.initial, args.target)
    frames = flow_trajectory(initial, target, steps=args.steps)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(frames) - 1)))
    for k, frame in enumerate(frames):
        write_assembly_xyz(frame, out_dir / f"frame_{k:0{width}d}.xyz")
    print(f"wrote {len(frames)} frames to {out_dir}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    _, failed = run_selftest(verbose=True)
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rigidpack",
        description="Rigid-body molecular assembly metrics, losses, and fitting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="evaluate a packing metric between two assemblies")
    p.add_argument("--pred", required=True, help="predicted assembly (.xyz)")
    p.add_argument("--gt", required=True, help="ground-truth assembly (.xyz)")
    p.add_argument("--metric", choices=METRIC_KINDS, default="pm_atom")
    p.add_argument("--assign", choices=("none", "exact", "sinkhorn"), default="none",
                   help="molecule pairing before evaluating the metric")
    p.add_argument("--cost", choices=COST_KINDS, default="rmsd",
                   help="per-pair cost driving the assignment")
    p.add_argument("--reg", type=float, default=None,
                   help="Sinkhorn regularization (default: 0.05 x median cost)")
    p.add_argument("--csv", default=None, help="append a result row to this CSV file")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("assign", help="print the optimal molecule pairing")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--cost", choices=COST_KINDS, default="rmsd")
    p.add_argument("--method", choices=("exact", "sinkhorn"), default="exact")
    p.add_argument("--reg", type=float, default=None)
    p.set_defaults(func=_cmd_assign)

    p = sub.add_parser("fit", help="optimize per-molecule transforms toward a target packing")
    p.add_argument("--initial", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--loss", choices=("ml", "rmsd", "geom"), default="rmsd")
    p.add_argument("--assign", choices=("none", "exact", "sinkhorn"), default="exact")
    p.add_argument("--alpha", type=float, default=10.0,
                   help="rotation weight of the ml loss")
    p.add_argument("--reg", type=float, default=None)
    p.add_argument("--step-size", type=float, default=1e-2, dest="step_size")
    p.add_argument("--max-iters", type=int, default=10000, dest="max_iters")
    p.add_argument("--rel-tol", type=float, default=1e-8, dest="rel_tol")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the fitted assembly here (.xyz)")
    p.add_argument("--transforms-out", default=None, dest="transforms_out",
                   help="write the fitted transforms here")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("interp", help="write straight-line SE(3) interpolation frames")
    p.add_argument("--initial", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=_cmd_interp)

    p = sub.add_parser("selftest", help="run the built-in invariant suites")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
