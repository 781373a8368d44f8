"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (files, shapes, flags), 3 numerical
failure (non-finite initial loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, parallel
from .errors import InputError, NumericalError
from .experiments import iteration_sweep, noisy_init
from .losses import LossWeights
from .metaimage import read_field, read_labels, read_volume, write_field, write_labels, write_volume
from .metrics import evaluate
from .refine import PRESET_LR, TtrConfig, refine
from .synth import KINDS, make_task
from .volume import DisplacementField, check_same_dims, normalize_intensity
from .warp import warp, warp_labels

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _clean(obj):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(payload, path):
    text = json.dumps(_clean(payload), indent=2) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise InputError(f"{path}: cannot write ({exc.strerror})") from None


def _odd(value):
    n = int(value)
    if n < 3 or n % 2 == 0:
        raise argparse.ArgumentTypeError(f"window must be an odd integer >= 3, got {value}")
    return n


def _positive_int(value):
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def _dims(value):
    parts = [int(p) for p in str(value).replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be N or NX,NY,NZ, got {value}")
    return tuple(parts)


def _add_threads(p):
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default: ${parallel.ENV_VAR} or 1); results do not depend on it")


def _add_ttr_flags(p):
    p.add_argument("--preset", choices=sorted(PRESET_LR) + ["custom"], default="abdomen",
                   help="learning-rate preset: abdomen=0.1, cardiac=0.025, custom requires --lr")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--patience", type=int, default=3, help="0 disables early stopping")
    p.add_argument("--lambda-ncc", type=float, default=1.0)
    p.add_argument("--lambda-ssim", type=float, default=2.0)
    p.add_argument("--lambda-smooth", type=float, default=1.0)
    p.add_argument("--ncc-window", type=_odd, default=9)
    p.add_argument("--ssim-window", type=_odd, default=7)


def config_from_args(args) -> TtrConfig:
    """Preset first, explicit flags win."""
    if args.preset == "custom":
        if args.lr is None:
            raise InputError("--preset custom requires --lr")
        lr = args.lr
    else:
        lr = PRESET_LR[args.preset] if args.lr is None else args.lr
    if args.patience < 0:
        raise InputError("--patience must be >= 0")
    return TtrConfig(
        max_iters=args.max_iters,
        lr=lr,
        patience=args.patience or None,
        weights=LossWeights(args.lambda_ncc, args.lambda_ssim, args.lambda_smooth),
        ncc_window=args.ncc_window,
        ssim_window=args.ssim_window,
    )


def cmd_refine(args) -> int:
    cfg = config_from_args(args)
    fixed_raw = read_volume(args.fixed)
    moving_raw = read_volume(args.moving)
    fixed = normalize_intensity(fixed_raw)
    moving = normalize_intensity(moving_raw)
    if args.init_field:
        init = read_field(args.init_field)
    else:
        init = DisplacementField.zeros(fixed.dims, fixed.spacing)
    check_same_dims(fixed, moving, init)

    labels = None
    if bool(args.fixed_labels) != bool(args.moving_labels):
        raise InputError("--fixed-labels and --moving-labels must be given together")
    if args.fixed_labels:
        labels = read_labels(args.fixed_labels), read_labels(args.moving_labels)
        check_same_dims(fixed, *labels)

    result = refine(fixed, moving, init, cfg)

    if args.out_field:
        write_field(DisplacementField(result.field.data, fixed_raw.spacing), args.out_field)
    if args.out_warped:
        write_volume(warp(moving_raw, result.field), args.out_warped)

    trace = [bd.as_dict() for bd in result.loss_trace]
    report = {
        "config": {
            "preset": args.preset,
            **cfg.as_dict(),
            "fixed": str(args.fixed),
            "moving": str(args.moving),
            "init_field": str(args.init_field) if args.init_field else None,
        },
        "loss_trace": trace,
        "stop_reason": result.stop_reason,
        "iters_run": result.iters_run,
        "best_iter": result.best_iter,
        "wall_time_s": result.wall_time_s,
    }
    if labels:
        report["metrics_initial"] = evaluate(labels[0], labels[1], init, fixed_raw.spacing).as_dict()
        report["metrics"] = evaluate(labels[0], labels[1], result.field, fixed_raw.spacing).as_dict()
    _write_json(report, args.report)
    if args.figure:
        from .plotting import plot_loss_trace

        plot_loss_trace(trace, args.figure, best_iter=result.best_iter, title="refinement loss")
    return EXIT_OK


def cmd_warp(args) -> int:
    field = read_field(args.field)
    if args.labels:
        labels = read_labels(args.moving)
        write_labels(warp_labels(labels, field), args.out)
    else:
        write_volume(warp(read_volume(args.moving), field), args.out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    fixed_labels = read_labels(args.fixed_labels)
    moving_labels = read_labels(args.moving_labels)
    if args.field:
        field = read_field(args.field)
    else:
        field = DisplacementField.zeros(fixed_labels.dims, fixed_labels.spacing)
    report = evaluate(fixed_labels, moving_labels, field, fixed_labels.spacing)
    _write_json(report.as_dict(), args.report)
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = make_task(args.dims, args.seed, args.amplitude, args.sigma, args.kind, args.num_objects)
    write_volume(task.fixed, out / "fixed.mha")
    write_volume(task.moving, out / "moving.mha")
    write_labels(task.fixed_labels, out / "fixed_labels.mha")
    write_labels(task.moving_labels, out / "moving_labels.mha")
    write_field(task.gt_field, out / "gt_field.mha")
    if args.init_noise is not None:
        write_field(noisy_init(task, args.init_noise, args.seed), out / "init_field.mha")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    res = gradcheck.run(args.seed, args.dims)
    _write_json({"seed": args.seed, "dims": args.dims, **res.as_dict()}, "-")
    return EXIT_OK if res.passed else EXIT_NUMERIC


def cmd_sweep(args) -> int:
    """Per-iteration accuracy of warm- and cold-started refinement on a synthetic task."""
    task = make_task(args.dims, args.seed, args.amplitude, args.sigma, args.kind, args.num_objects)
    cfg = TtrConfig(max_iters=args.max_iters, lr=args.lr, patience=None)
    runs = {
        "warm": iteration_sweep(task, noisy_init(task, args.init_noise, args.seed), cfg),
        "cold": iteration_sweep(task, DisplacementField.zeros(task.fixed.dims), cfg),
    }
    curves = {name: r.as_dict() for name, r in runs.items()}
    _write_json({"config": {**cfg.as_dict(), "seed": args.seed, "dims": args.dims,
                            "amplitude": args.amplitude, "sigma": args.sigma,
                            "init_noise": args.init_noise}, "runs": curves}, args.report)
    if args.figure:
        from .plotting import plot_sweep

        plot_sweep(curves, args.figure)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldrefine", description="Test-time refinement of displacement fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="refine a displacement field for one image pair")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--init-field", help="initial field (default: zero field)")
    p.add_argument("--fixed-labels")
    p.add_argument("--moving-labels")
    p.add_argument("--out-field")
    p.add_argument("--out-warped")
    p.add_argument("--report", help="JSON report path (default: stdout)")
    p.add_argument("--figure", help="loss-trace figure path (.png, .pdf, .svg)")
    _add_ttr_flags(p)
    _add_threads(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("warp", help="warp an image (trilinear) or label map (nearest) with a field")
    p.add_argument("--moving", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", action="store_true", help="treat --moving as a label map")
    _add_threads(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("metrics", help="Dice, HD95 and SDlogJ for a field")
    p.add_argument("--fixed-labels", required=True)
    p.add_argument("--moving-labels", required=True)
    p.add_argument("--field", help="displacement field (default: zero field)")
    p.add_argument("--report", help="JSON output path (default: stdout)")
    _add_threads(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="write a synthetic phantom pair with a ground-truth field")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_dims, default=(16, 16, 16))
    p.add_argument("--kind", choices=KINDS, default="spheres")
    p.add_argument("--num-objects", type=_positive_int, default=3)
    p.add_argument("--amplitude", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--init-noise", type=float, default=None,
                   help="also write init_field.mha = ground truth + uniform noise of this half-width")
    p.add_argument("--out-dir", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--dims", type=int, default=8)
    _add_threads(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="accuracy against iteration count on a synthetic task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_dims, default=(16, 16, 16))
    p.add_argument("--kind", choices=KINDS, default="spheres")
    p.add_argument("--num-objects", type=_positive_int, default=3)
    p.add_argument("--amplitude", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--init-noise", type=float, default=0.25)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--report", help="JSON output path (default: stdout)")
    p.add_argument("--figure", help="Dice-vs-iteration figure path")
    _add_threads(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        parallel.set_threads(args.threads)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        parallel.set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
