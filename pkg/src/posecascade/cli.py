"""Command-line pipeline: synth, train, finetune, eval, gradcheck.

Exit codes are a stable scripting contract:
    0  success
    2  input or configuration error (bad flags, files, formats, dimensions)
    3  numerical failure in the ridge solver
    4  divergence during fine-tuning
    5  gradient check failed

Every subcommand accepts ``--config FILE`` (flat ``key = value`` lines,
``#`` comments); built-in defaults are overridden by the file, which is
overridden by flags.  Flags mirror config keys in kebab-case.  All
commands are deterministic under a fixed config and seed; the only
non-reproducible stdout lines are prefixed ``# time:`` so they can be
filtered when comparing runs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cascade import (
    TrainConfig,
    evaluate_errors,
    finetune_bp,
    gradient_check,
    train_greedy,
)
from .config import Opt, merge_config
from .data import SynthConfig, gen_synthetic, load_dataset, load_model, save_dataset, save_model
from .errors import ConfigError, DimensionError, DivergenceError, FormatError, NumericalError
from .features import default_spec
from .report import (
    figure_path,
    save_error_histogram,
    save_loss_curve,
    write_errors_csv,
    write_history_csv,
)

__all__ = ["build_parser", "main", "entry"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

_WORKERS = os.cpu_count() or 1

_SYNTH_OPTS = [
    Opt("out", str, None, "output dataset directory", required=True),
    Opt("n", int, 100, "sample count"),
    Opt("kind", str, "similarity", "pose model: similarity or landmark"),
    Opt("width", int, 64, "image width in pixels"),
    Opt("height", int, 64, "image height in pixels"),
    Opt("landmarks", int, 5, "template landmark count"),
    Opt("blob_sigma", float, 1.5, "Gaussian blob radius in pixels"),
    Opt("noise_sigma", float, 0.02, "pixel noise standard deviation"),
    Opt("trans_range", float, 12.0, "translation range around center, pixels"),
    Opt("scale_lo", float, 0.8, "minimum pose scale"),
    Opt("scale_hi", float, 1.25, "maximum pose scale"),
    Opt("angle_range", float, 0.4, "rotation range in radians"),
    Opt("ref_scale", float, 10.0, "reference-square half-extent in pixels"),
    Opt("seed", int, 0, "RNG seed"),
]

_TRAIN_OPTS = [
    Opt("data", str, None, "training dataset directory", required=True),
    Opt("out", str, None, "output model file", required=True),
    Opt("stages", int, 10, "cascade stage count"),
    Opt("lambda", float, 1.0, "ridge penalty for stage fitting"),
    Opt("n_aug", int, 5, "initializations per training sample"),
    Opt("points", int, 64, "number of feature reference points"),
    Opt("mode", str, "raw", "feature mode: raw or diff"),
    Opt("blur_sigma", float, 2.0, "image smoothing before sampling"),
    Opt("aug_trans", float, 0.15, "init translation spread, fraction of norm_const"),
    Opt("aug_scale", float, 0.15, "init scale spread"),
    Opt("aug_angle", float, 0.2, "init angle spread, radians"),
    Opt("seed", int, 0, "RNG seed (also seeds the feature points)"),
    Opt("workers", int, _WORKERS, "parallel workers for batch evaluation"),
]

_FINETUNE_OPTS = [
    Opt("data", str, None, "training dataset directory", required=True),
    Opt("model", str, None, "input model file", required=True),
    Opt("out", str, None, "output (tuned) model file", required=True),
    Opt("history_out", str, None, "loss history CSV (default: <out>.history.csv)"),
    Opt("epochs", int, 30, "fine-tuning epochs"),
    Opt("batch_size", int, 32, "samples per SGD step"),
    Opt("lr", float, 1e-3, "learning rate"),
    Opt("momentum", float, 0.9, "SGD momentum in [0, 1)"),
    Opt("lr_decay", float, 0.97, "per-epoch learning-rate factor"),
    Opt("grad_clip", float, 10.0, "max gradient L2 norm per parameter block"),
    Opt("n_aug", int, 5, "initializations per training sample"),
    Opt("aug_trans", float, 0.15, "init translation spread, fraction of norm_const"),
    Opt("aug_scale", float, 0.15, "init scale spread"),
    Opt("aug_angle", float, 0.2, "init angle spread, radians"),
    Opt("seed", int, 0, "RNG seed"),
    Opt("workers", int, _WORKERS, "parallel workers for batch evaluation"),
    Opt("plot", bool, True, "render the loss-curve figure next to the CSV"),
]

_EVAL_OPTS = [
    Opt("data", str, None, "evaluation dataset directory", required=True),
    Opt("model", str, None, "model file", required=True),
    Opt("out", str, None, "per-sample error CSV", required=True),
    Opt("workers", int, _WORKERS, "parallel workers for batch evaluation"),
    Opt("plot", bool, True, "render the error-histogram figure next to the CSV"),
]

_GRADCHECK_OPTS = [
    Opt("seed", int, 0, "RNG seed for the random instances"),
    Opt("draws", int, 20, "number of random instances"),
]


def _add_opts(sp: argparse.ArgumentParser, opts) -> None:
    for o in opts:
        flag = "--" + o.key.replace("_", "-")
        if o.typ is bool:
            sp.add_argument(flag, action=argparse.BooleanOptionalAction,
                            default=None, help=o.help)
        else:
            sp.add_argument(flag, type=o.typ, default=None, help=o.help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posecascade",
        description="Cascaded pose regression with greedy training and "
                    "end-to-end fine-tuning by backpropagation.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    specs = [
        ("synth", "generate a synthetic dataset", _SYNTH_OPTS, _cmd_synth),
        ("train", "greedy stage-wise training", _TRAIN_OPTS, _cmd_train),
        ("finetune", "global end-to-end SGD fine-tuning", _FINETUNE_OPTS, _cmd_finetune),
        ("eval", "evaluate a model on a dataset", _EVAL_OPTS, _cmd_eval),
        ("gradcheck", "verify analytic gradients against finite differences",
         _GRADCHECK_OPTS, _cmd_gradcheck),
    ]
    for name, help_text, opts, func in specs:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="key = value config file")
        _add_opts(sp, opts)
        if name == "gradcheck":
            sp.add_argument("--negate-db", action="store_true", help=argparse.SUPPRESS)
        sp.set_defaults(func=func, opts=opts, subparser=sp)
    return parser


def _cmd_synth(args) -> int:
    vals = merge_config(args.opts, args, args.config)
    cfg = SynthConfig(
        n=vals["n"], width=vals["width"], height=vals["height"],
        n_landmarks=vals["landmarks"], blob_sigma=vals["blob_sigma"],
        noise_sigma=vals["noise_sigma"], trans_range=vals["trans_range"],
        scale_lo=vals["scale_lo"], scale_hi=vals["scale_hi"],
        angle_range=vals["angle_range"], ref_scale=vals["ref_scale"],
        seed=vals["seed"],
    )
    ds = gen_synthetic(cfg, vals["kind"])
    save_dataset(ds, vals["out"])
    print(f"wrote {len(ds.samples)} samples (seed {vals['seed']}) to {vals['out']}")
    return EXIT_OK


def _train_config(vals, n_stages) -> TrainConfig:
    return TrainConfig(
        n_stages=n_stages,
        ridge_lambda=vals.get("lambda", 1.0),
        n_aug=vals["n_aug"],
        epochs=vals.get("epochs", 30),
        batch_size=vals.get("batch_size", 32),
        lr=vals.get("lr", 1e-3),
        momentum=vals.get("momentum", 0.9),
        lr_decay=vals.get("lr_decay", 0.97),
        grad_clip=vals.get("grad_clip", 10.0),
        seed=vals["seed"],
        aug_trans=vals["aug_trans"],
        aug_scale=vals["aug_scale"],
        aug_angle=vals["aug_angle"],
    )


def _cmd_train(args) -> int:
    vals = merge_config(args.opts, args, args.config)
    ds = load_dataset(vals["data"])
    cfg = _train_config(vals, vals["stages"])
    spec = default_spec(
        n_points=vals["points"], seed=vals["seed"], mode=vals["mode"],
        blur_sigma=vals["blur_sigma"], n_landmarks=ds.kind.n_landmarks,
    )
    model, report = train_greedy(ds, cfg, spec=spec, workers=vals["workers"])
    save_model(model, vals["out"])
    for t, (mse, err) in enumerate(zip(report.stage_mse, report.stage_norm_err)):
        print(f"stage {t}: mean squared pose error {mse:.17g} | "
              f"mean normalized error {err:.17g}")
    print(f"wrote model to {vals['out']}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    vals = merge_config(args.opts, args, args.config)
    ds = load_dataset(vals["data"])
    model = load_model(vals["model"])
    cfg = _train_config(vals, len(model.stages))
    tuned, history = finetune_bp(model, ds, cfg, workers=vals["workers"])
    save_model(tuned, vals["out"])
    hist_path = vals["history_out"]
    if hist_path is None:
        hist_path = str(Path(vals["out"]).with_suffix(".history.csv"))
    write_history_csv(history, hist_path)
    if vals["plot"]:
        save_loss_curve(history, figure_path(hist_path))
    for i, loss in enumerate(history, start=1):
        print(f"epoch {i}: mean training loss {loss:.17g}")
    print(f"final loss {history[-1]:.17g} (first epoch {history[0]:.17g})")
    print(f"wrote tuned model to {vals['out']} and history to {hist_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    vals = merge_config(args.opts, args, args.config)
    ds = load_dataset(vals["data"])
    model = load_model(vals["model"])
    errors = evaluate_errors(model, ds, workers=vals["workers"])
    write_errors_csv(errors, vals["out"])
    if vals["plot"]:
        save_error_histogram(errors, figure_path(vals["out"]))
    below = float(np.count_nonzero(errors < 0.1) / errors.shape[0])
    print(f"mean normalized error {float(errors.mean()):.17g}")
    print(f"median normalized error {float(np.median(errors)):.17g}")
    print(f"fraction below 0.1: {below:.17g}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    vals = merge_config(args.opts, args, args.config)
    result = gradient_check(seed=vals["seed"], draws=vals["draws"],
                            negate_db=args.negate_db)
    for name in sorted(result.worst):
        print(f"block {name}: worst rel err {result.worst[name]:.3e}")
    if result.passed:
        print(f"gradient check passed ({result.draws} draws)")
        return EXIT_OK
    for msg in result.failures[:20]:
        print(f"FAIL {msg}")
    print(f"gradient check failed: {len(result.failures)} entries out of tolerance")
    return EXIT_GRADCHECK


def main(argv=None) -> int:
    """Run one subcommand; returns the exit code instead of raising."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (None, 0) else int(exc.code)

    start = time.perf_counter()
    try:
        rc = args.func(args)
    except ConfigError as exc:
        print(args.subparser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FormatError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"# time: {args.command} {time.perf_counter() - start:.3f} s")
    return rc


def entry() -> None:
    sys.exit(main())
