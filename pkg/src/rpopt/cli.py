"""Command-line interface.

Exit codes: 0 success, 1 invalid arguments or config, 2 runtime failure,
3 verification found violations.  The environment variable RPOPT_SEED, when
set, overrides the seed from flags and config files (for experiments with a
seed list, the list is rebased to start at that value).
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys

from . import bounds as bounds_mod
from ._version import __version__
from .curvature import clipping_smoothness_curve, privacy_smoothness_curve
from .data import (
    generate_equal_margin,
    generate_separable,
    load_csv,
    load_idx,
    save_csv,
    split,
)
from .errors import DataFormatError, InvalidRegimeError, RpoptError
from .experiments import (
    ExperimentConfig,
    load_experiment_config,
    parse_grid,
    parse_seeds,
    run_experiment,
)
from .losses import LossSpec
from .optimizer import OptimizerConfig, train, validate_config
from .plotting import PlotSpec, render_plot
from .report import verify_report

_GAP_SETTINGS = {"gap-nonprivate": "nonprivate", "gap-private": "private"}


def _env_seed() -> int | None:
    raw = os.environ.get("RPOPT_SEED")
    if raw is None or raw == "":
        return None
    return int(raw)


def _parse_p(text: str) -> float:
    return math.inf if str(text).strip() in ("inf", "oo") else float(text)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    seed = _env_seed()
    seed = args.seed if seed is None else seed
    if args.kind == "separable":
        dataset = generate_separable(d=args.d, n=args.n, gamma=args.gamma, seed=seed)
    else:
        dataset = generate_equal_margin(
            d=args.d, n=args.n, margin=args.margin, jitter=args.jitter, seed=seed
        )
    save_csv(dataset, args.out)
    print(
        f"wrote {args.out}: {dataset.n} examples, d={dataset.dim}, "
        f"margin={dataset.margin:.6g}"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def load_train_config(path) -> OptimizerConfig:
    """OptimizerConfig from an INI file with a [train] section."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise ValueError(f"cannot read config file {path}")
    if "train" not in parser:
        raise ValueError("config needs a [train] section")
    section = parser["train"]
    c = section.getfloat("c", 0.0)
    p = _parse_p(section.get("p", "2"))
    spec = LossSpec.adversarial(c, p) if c > 0 else LossSpec.nominal()
    clip_raw = section.get("clip_k", "inf")
    first_raw = section.get("first_step_eta", "")
    batch_raw = section.get("batch", "")
    return OptimizerConfig(
        eta=section.getfloat("eta", 0.1),
        steps=section.getint("steps", 100),
        spec=spec,
        clip_k=math.inf if clip_raw.strip() == "inf" else float(clip_raw),
        sigma=section.getfloat("sigma", 0.0),
        noise_mode=section.get("noise_mode", "theory"),
        first_step_eta=float(first_raw) if first_raw.strip() else None,
        batch=int(batch_raw) if batch_raw.strip() else None,
        seed=section.getint("seed", 0),
        attack_steps=section.getint("attack_steps", 10),
    )


def _load_dataset(args):
    if getattr(args, "images", None):
        return load_idx(args.images, args.labels, limit=getattr(args, "limit", None))
    if getattr(args, "data", None):
        return load_csv(args.data)
    raise ValueError("provide --data CSV or --images/--labels IDX files")


def _cmd_train(args) -> int:
    config = load_train_config(args.config)
    seed = _env_seed()
    if seed is not None:
        from dataclasses import replace

        config = replace(config, seed=seed)
    dataset = _load_dataset(args)
    gamma = dataset.margin if dataset.is_binary else None
    for warning in validate_config(config, gamma=gamma):
        print(f"warning: {warning}", file=sys.stderr)
    trace = train(dataset, config)
    trace.to_csv(args.out)
    print(
        f"wrote {args.out}: {config.steps} steps, final nominal loss "
        f"{trace.nominal_loss[-1]:.6g}, final ||theta|| {trace.theta_norm[-1]:.6g}"
    )
    return 0


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _cmd_bounds(args) -> int:
    inputs = bounds_mod.BoundInputs(
        t=args.t if args.t is not None else 1,
        eta=args.eta,
        gamma=args.gamma,
        c=args.c,
        d=args.d,
        sigma=args.sigma,
        form=args.form,
    )
    gap_setting = _GAP_SETTINGS.get(args.setting)
    if args.t is not None:
        if gap_setting is not None:
            value = bounds_mod.gap_curve(inputs, gap_setting)[0, 1]
        else:
            value = bounds_mod.BOUND_FUNCTIONS[args.setting](inputs)
        print(f"{value:.17g}")
        return 0
    if not args.out:
        raise ValueError("provide --t for a single value or --out for a series CSV")
    ts = bounds_mod.log_spaced_steps(args.t_max, args.points)
    if gap_setting is not None:
        rows = bounds_mod.gap_curve(inputs, gap_setting, ts)
        header = ["t", f"gap_{gap_setting}"]
    else:
        rows = bounds_mod.evaluate_series(args.setting, inputs, ts)
        header = ["t", f"bound_{args.setting.replace('-', '_')}"]
    import csv as csv_mod

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(header)
        for t, value in rows:
            writer.writerow([int(t), f"{value:.17g}"])
    print(f"wrote {args.out}: {len(rows)} rows")
    return 0


# ---------------------------------------------------------------------------
# attack-eval / experiment
# ---------------------------------------------------------------------------


def _parse_param_overrides(pairs) -> dict:
    params = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def _rebase_seeds(seeds, base) -> tuple:
    return tuple(base + i for i in range(len(seeds)))


def _cmd_attack_eval(args) -> int:
    seeds = parse_seeds(args.seeds)
    env = _env_seed()
    if env is not None:
        seeds = _rebase_seeds(seeds, env)
    config = ExperimentConfig(
        kind="attack-eval",
        output_dir=args.out_dir,
        seeds=seeds,
        params=_parse_param_overrides(args.param),
    )
    for path in run_experiment(config):
        print(f"wrote {path}")
    return 0


def _cmd_experiment(args) -> int:
    config = load_experiment_config(args.config)
    env = _env_seed()
    if env is not None:
        config = ExperimentConfig(
            kind=config.kind,
            output_dir=config.output_dir,
            seeds=_rebase_seeds(config.seeds, env),
            params=config.params,
        )
    for path in run_experiment(config):
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _cmd_sweep(args) -> int:
    dataset = _load_dataset(args)
    seed = _env_seed()
    seed = args.seed if seed is None else seed
    train_ds, test_ds = split(dataset, args.test_fraction, seed=seed)
    batch = args.batch if args.batch and args.batch > 0 else None
    if batch is not None and batch > train_ds.n:
        batch = None  # grids are often tried on small datasets; fall back to full batch
    base = OptimizerConfig(
        eta=args.eta,
        steps=args.steps,
        clip_k=args.clip_k,
        batch=batch,
        attack_steps=args.attack_steps,
        seed=seed,
    )
    common = dict(
        test_dataset=test_ds,
        p=_parse_p(args.p),
        workers=args.workers,
        curvature_examples=args.curvature_examples,
        eval_attack_steps=args.eval_attack_steps,
    )
    if args.mode == "clip":
        if not args.k_grid:
            raise ValueError("--mode clip requires --k-grid")
        table = clipping_smoothness_curve(
            train_ds, parse_grid(args.c_grid), parse_grid(args.k_grid), base, **common
        )
    else:
        if not args.eps_grid:
            raise ValueError("--mode dp requires --eps-grid")
        if not math.isfinite(args.clip_k):
            raise ValueError("--mode dp requires a finite --clip-k")
        table = privacy_smoothness_curve(
            train_ds,
            parse_grid(args.c_grid),
            parse_grid(args.eps_grid),
            base,
            delta=args.delta,
            **common,
        )
    table.to_csv(args.out)
    print(f"wrote {args.out}: {len(table.cells)} cells ({args.mode} mode)")
    return 0


# ---------------------------------------------------------------------------
# plot / verify / dp
# ---------------------------------------------------------------------------


def _cmd_plot(args) -> int:
    spec = PlotSpec(
        x_column=args.x,
        y_columns=tuple(args.y.split(",")) if args.y else None,
        title=args.title,
        x_label=args.x_label,
        y_label=args.y_label,
        log_x=args.log_x,
        log_y=not args.linear_y,
    )
    render_plot(args.csv, spec, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_verify(args) -> int:
    report = verify_report(args.run)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 3


def _cmd_dp(args) -> int:
    if args.solve == "epsilon":
        if args.sigma is None:
            raise ValueError("--solve epsilon requires --sigma")
        result = bounds_mod.accountant_epsilon(
            sigma=args.sigma,
            steps=args.steps,
            lipschitz=args.lipschitz,
            delta=args.delta,
            radius=args.radius,
            dimension=args.dimension,
            lambda_max=args.lambda_max,
        )
        print(f"epsilon = {result.epsilon:.12g}")
        print(f"order = {result.order}")
        print(f"sensitivity = {result.sensitivity:.12g}")
    else:
        if args.epsilon is None:
            raise ValueError("--solve sigma requires --epsilon")
        result = bounds_mod.accountant_sigma(
            epsilon=args.epsilon,
            delta=args.delta,
            steps=args.steps,
            lipschitz=args.lipschitz,
            radius=args.radius,
            dimension=args.dimension,
            lambda_max=args.lambda_max,
        )
        print(f"sigma = {result.sigma:.12g}")
        print(f"epsilon_achieved = {result.epsilon:.12g}")
        print(f"order = {result.order}")
        print(f"implied_constant = {result.implied_constant:.12g}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rpopt",
        description="Worst-case and private training for linear models: "
        "data, optimization, rate bounds, attacks, curvature, experiments.",
    )
    parser.add_argument("--version", action="version", version=f"rpopt {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    gen.add_argument("--kind", choices=("separable", "equal-margin"), default="separable")
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--gamma", type=float, default=0.3, help="margin (separable kind)")
    gen.add_argument("--margin", type=float, default=0.3, help="margin (equal-margin kind)")
    gen.add_argument("--jitter", type=float, default=0.01)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train a model and write its trace CSV")
    tr.add_argument("--config", required=True, help="INI file with a [train] section")
    tr.add_argument("--data", help="dataset CSV")
    tr.add_argument("--images", help="IDX image file (with --labels)")
    tr.add_argument("--labels", help="IDX label file")
    tr.add_argument("--limit", type=int, default=None)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_train)

    bo = sub.add_parser("bounds", help="evaluate a rate bound or gap curve")
    bo.add_argument(
        "--setting",
        required=True,
        choices=tuple(bounds_mod.BOUND_FUNCTIONS) + tuple(_GAP_SETTINGS),
    )
    bo.add_argument("--eta", type=float, required=True)
    bo.add_argument("--gamma", type=float, required=True)
    bo.add_argument("--c", type=float, default=0.0)
    bo.add_argument("--d", type=int, default=0)
    bo.add_argument("--sigma", type=float, default=0.0)
    bo.add_argument("--form", choices=bounds_mod.FORMS, default="appendix")
    bo.add_argument("--t", type=int, default=None, help="single step (prints the value)")
    bo.add_argument("--t-max", type=int, default=10000)
    bo.add_argument("--points", type=int, default=200)
    bo.add_argument("--out", help="series CSV output path")
    bo.set_defaults(func=_cmd_bounds)

    ae = sub.add_parser("attack-eval", help="accuracy-under-attack experiment")
    ae.add_argument("--out-dir", required=True)
    ae.add_argument("--seeds", default="0")
    ae.add_argument(
        "--param",
        action="append",
        metavar="KEY=VALUE",
        help="override an attack-eval parameter (repeatable)",
    )
    ae.set_defaults(func=_cmd_attack_eval)

    sw = sub.add_parser("sweep", help="curvature sweep over (c, k) or (c, epsilon)")
    sw.add_argument("--mode", choices=("clip", "dp"), required=True)
    sw.add_argument("--c-grid", required=True)
    sw.add_argument("--k-grid", help="clip thresholds (clip mode)")
    sw.add_argument("--eps-grid", help="privacy levels (dp mode)")
    sw.add_argument("--data", help="dataset CSV")
    sw.add_argument("--images", help="IDX image file (with --labels)")
    sw.add_argument("--labels", help="IDX label file")
    sw.add_argument("--limit", type=int, default=None)
    sw.add_argument("--out", required=True)
    sw.add_argument("--eta", type=float, default=0.5)
    sw.add_argument("--steps", type=int, default=120)
    sw.add_argument("--batch", type=int, default=256)
    sw.add_argument("--clip-k", type=float, default=math.inf)
    sw.add_argument("--delta", type=float, default=1e-5)
    sw.add_argument("--attack-steps", type=int, default=4)
    sw.add_argument("--eval-attack-steps", type=int, default=10)
    sw.add_argument("--curvature-examples", type=int, default=512)
    sw.add_argument("--p", default="inf")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--test-fraction", type=float, default=1.0 / 6.0)
    sw.add_argument("--seed", type=int, default=0)
    sw.set_defaults(func=_cmd_sweep)

    ex = sub.add_parser("experiment", help="run an experiment config end to end")
    ex.add_argument("--config", required=True)
    ex.set_defaults(func=_cmd_experiment)

    pl = sub.add_parser("plot", help="render a CSV as a deterministic SVG")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--x", required=True, help="x column name")
    pl.add_argument("--y", help="comma-separated series columns (default: all)")
    pl.add_argument("--title", default="")
    pl.add_argument("--x-label", default="")
    pl.add_argument("--y-label", default="")
    pl.add_argument("--log-x", action="store_true")
    pl.add_argument("--linear-y", action="store_true", help="disable the default log y axis")
    pl.set_defaults(func=_cmd_plot)

    ve = sub.add_parser("verify", help="check experiment artifacts; exit 3 on violations")
    ve.add_argument("--run", required=True, help="experiment output directory")
    ve.set_defaults(func=_cmd_verify)

    dp = sub.add_parser("dp", help="privacy accountant: epsilon from sigma or vice versa")
    dp.add_argument("--solve", choices=("epsilon", "sigma"), required=True)
    dp.add_argument("--sigma", type=float, default=None)
    dp.add_argument("--epsilon", type=float, default=None)
    dp.add_argument("--delta", type=float, default=1e-5)
    dp.add_argument("--steps", type=int, required=True)
    dp.add_argument("--lipschitz", type=float, default=1.0)
    dp.add_argument("--radius", type=float, default=0.0)
    dp.add_argument("--dimension", type=int, default=1)
    dp.add_argument("--lambda-max", type=int, default=512)
    dp.set_defaults(func=_cmd_dp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ValueError, KeyError, configparser.Error, FileNotFoundError) as exc:
        # includes DataFormatError / InvalidRegimeError (ValueError subclasses)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RpoptError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
