"""Command-line entry point: ``hoft <subcommand> [flags]``.

Each subcommand writes one CSV (prefixed by ``# key=value`` metadata lines)
and exits 0 only when every threshold it asserts holds.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import thresholds as th
from .checkpoint import save_checkpoint
from .cwy import Mode
from .densemat import Rng
from .experiments import (bench_rows, energy_rows, figure1_rows, fit_exponent, gradcheck_rows,
                          procrustes_rows)
from .quant import dequantize, quantize
from .train import TaskKind, TrainingDivergedError, make_task, smoothed, train

__all__ = ["main", "build_parser"]


def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("list entries must be positive integers")
    return values


def _metadata(args, **extra) -> dict:
    meta = {"tool": f"hoft {__version__}", "thresholds_version": th.THRESHOLDS_VERSION,
            "command": args.command, "seed": args.seed, "mode": args.mode}
    meta.update(extra)
    return meta


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_rows(path, rows: list[dict], header: list[str], meta: dict) -> None:
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")
    extra = [k for k in (rows[0] if rows else {}) if k not in header]
    columns = header + extra
    with path.open("w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def _finish(name: str, failures: list[str]) -> int:
    if failures:
        print(f"{name}: {len(failures)} threshold failure(s)", file=sys.stderr)
        for msg in failures:
            print(f"  FAIL {msg}", file=sys.stderr)
        return 1
    print(f"{name}: all thresholds passed")
    return 0


def cmd_figure1(args) -> int:
    rows, failures = figure1_rows(args.dims, args.ranks, args.trials, args.seed)
    write_rows(args.out, rows, ["dim", "rank", "mean_error", "max_error"],
               _metadata(args, trials=args.trials))
    for row in rows:
        print(f"dim={row['dim']:5d} rank={row['rank']:3d} mean_error={row['mean_error']:.3e}")
    return _finish("figure1", failures)


def cmd_energy(args) -> int:
    rows, failures = energy_rows(args.dims, args.ranks, args.trials, args.seed, args.mode)
    write_rows(args.out, rows, ["dim", "rank", "mean_abs_diff", "max_abs_diff"],
               _metadata(args, trials=args.trials))
    for row in rows:
        print(f"dim={row['dim']} rank={row['rank']} rel_diff={row['mean_rel_diff']:.3e}")
    return _finish("energy", failures)


def cmd_procrustes(args) -> int:
    rows, failures = procrustes_rows(args.m, args.n, args.rank, args.instances, args.seed)
    write_rows(args.out, rows, ["instance", "gap", "bound", "holds"],
               _metadata(args, m=args.m, n=args.n, rank=args.rank))
    ratios = [r["gap"] / r["bound"] for r in rows if np.isfinite(r["gap"])]
    if ratios:
        print(f"procrustes: {sum(r['holds'] for r in rows)}/{len(rows)} hold, "
              f"max gap/bound {max(ratios):.3f}")
    return _finish("procrustes", failures)


def cmd_gradcheck(args) -> int:
    rows, failures = gradcheck_rows(args.seed)
    write_rows(args.out, rows, ["case", "kind", "m", "n", "rank", "mode", "max_rel_err"],
               _metadata(args))
    worst = {}
    for row in rows:
        if not row["zero_residual"]:
            worst[row["kind"]] = max(worst.get(row["kind"], 0.0), row["max_rel_err"])
    for kind, err in worst.items():
        print(f"gradcheck {kind}: worst relative error {err:.2e}")
    return _finish("gradcheck", failures)


def _checkpoint_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".ckpt.json")


def cmd_train(args) -> int:
    failures = []
    rng = Rng(args.seed)
    task = make_task(args.task, args.m, args.n, args.rank, 0.0, rng.child(0))
    qbase = None
    extra = {}
    if args.quantize:
        qbase = quantize(task.w0, args.block_size, args.double_quant)
        codes_before = qbase.codes.tobytes()
        scales_before = np.asarray(qbase.absmax).tobytes()
        # The teacher acts on the base the adapter actually sees.
        task = task.rebase(dequantize(qbase))
        extra["base_nf4"] = qbase
    else:
        base_before = task.w0.tobytes()
    try:
        trace = train(args.method, task, args.rank, args.steps, args.lr, args.batch,
                      rng.child(1), args.mode, qbase=qbase)
    except TrainingDivergedError as exc:
        return _finish("train", [f"diverged at step {exc.step}"])
    if args.quantize:
        if qbase.codes.tobytes() != codes_before or \
                np.asarray(qbase.absmax).tobytes() != scales_before:
            failures.append("quantized base codes changed during training")
    elif task.w0.tobytes() != base_before:
        failures.append("frozen base changed during training")

    meta = _metadata(args, method=args.method, task=args.task, m=args.m, n=args.n,
                     rank=args.rank, steps=args.steps, lr=args.lr, batch=args.batch,
                     quantize=args.quantize)
    trace.write_csv(args.out, meta)
    save_checkpoint(trace.adapter, _checkpoint_path(args.out), extra)

    smooth = smoothed(trace.losses)
    print(f"train {args.method}/{args.task}: final loss {trace.final_loss:.3e} "
          f"in {trace.wall_time:.2f}s")
    representable = (args.method, args.task) in {("hoft", "rotation"),
                                                 ("shoft", "scaled-rotation"),
                                                 ("shoft", "rotation")}
    if representable:
        if not trace.final_loss < th.TRAIN_LOSS_TOL:
            failures.append(f"final loss {trace.final_loss:.3e} >= {th.TRAIN_LOSS_TOL}")
        if args.steps > 100 and not smooth[-1] < smooth[99]:
            failures.append("smoothed loss did not decrease")
    return _finish("train", failures)


def cmd_bench(args) -> int:
    rows, failures = bench_rows(args.m, args.n, args.ranks, args.repeats, args.seed)
    write_rows(args.out, rows, ["method", "m", "n", "rank", "mean_ns"],
               _metadata(args, m=args.m, n=args.n, repeats=args.repeats))
    by_method = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row["mean_ns"])
    for method, times in by_method.items():
        line = " ".join(f"{t / 1e6:.3f}" for t in times)
        print(f"{method:>20s} ms: {line}")
    if len(args.ranks) > 1:
        r = np.asarray(args.ranks, float)
        print(f"cwy_factored exponent vs r^2+2r: "
              f"{fit_exponent(r ** 2 + 2 * r, by_method['cwy_factored']):.2f}")
        print(f"sequential_chain exponent vs r: "
              f"{fit_exponent(r, by_method['sequential_chain']):.2f}")
    return _finish("bench", failures)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoft", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hoft {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out)
        p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.NEUMANN2.value)

    p = sub.add_parser("figure1", help="orthogonality error of the two-term approximation")
    p.add_argument("--dims", type=_int_list, default=[256, 1024, 4096])
    p.add_argument("--ranks", type=_int_list, default=[1, 2, 4, 8, 16, 32])
    p.add_argument("--trials", type=int, default=20)
    common(p, "figure1.csv")
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("energy", help="hyperspherical energy change under Q_U M Q_V")
    p.add_argument("--dims", type=_int_list, default=[256])
    p.add_argument("--ranks", type=_int_list, default=[1, 2, 4, 8, 16, 32])
    p.add_argument("--trials", type=int, default=10)
    common(p, "energy.csv")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("procrustes", help="one-sided fit of two-sided transforms")
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--instances", type=int, default=50)
    common(p, "procrustes.csv")
    p.set_defaults(func=cmd_procrustes)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    common(p, "gradcheck.csv")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="fit an adapter to a teacher task")
    p.add_argument("--method", choices=["hoft", "shoft", "lora", "oft"], default="hoft")
    p.add_argument("--task", choices=[k.value for k in TaskKind], default="rotation")
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--double-quant", action="store_true")
    common(p, "train.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="time factored, sequential and materialized paths")
    p.add_argument("--m", type=int, default=2048)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--ranks", type=_int_list, default=[1, 2, 4, 8, 16, 32])
    p.add_argument("--repeats", type=int, default=5)
    common(p, "bench.csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError) as exc:
        print(f"hoft {args.command}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"hoft {args.command}: {exc}", file=sys.stderr)
        return 2
