"""Experiment orchestration: parameterized runs that emit CSV artifacts plus
a JSON manifest echoing every parameter (defaults included) so a run can be
reproduced exactly from its output directory.

Config files are INI ("key = value" sections)::

    [experiment]
    kind = fig1-convergence
    output_dir = out/fig1
    seeds = 0:20          ; "start:count", or a comma list "0,1,2", or one int

    [params]
    d = 10
    sigma = 0.25

Unknown [params] keys are rejected so typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import bounds as bounds_mod
from ._version import __version__
from .attacks import AttackConfig, exact_linear_robust_accuracy, robust_accuracy
from .bounds import BoundInputs, log_spaced_steps
from .curvature import clipping_smoothness_curve, privacy_smoothness_curve
from .data import Dataset, generate_separable, load_csv, load_idx, split
from .errors import ExperimentError
from .losses import LossSpec, adversarial_logistic_loss, gradient
from .optimizer import OptimizerConfig, train, validate_config

KINDS = (
    "fig1-convergence",
    "fig2-gap",
    "fig3-robust-compare",
    "fig8-sweep",
    "fig9-sweep",
    "bounds-only",
    "attack-eval",
)

MANIFEST_NAME = "manifest.json"

# every knob each kind accepts, with the default used when the config omits it
_COMMON_DATA = {
    "d": 10,
    "n": 100,
    "gamma": 1.0,
    "data_seed": 0,
}
_DEFAULTS = {
    "fig1-convergence": {
        **_COMMON_DATA,
        "eta": 0.1,
        "c": 0.1,
        "sigma": 0.25,
        "steps": 1000,
        "first_step_eta": None,
    },
    "fig2-gap": {
        "eta": 0.1,
        "gamma": 1.0,
        "c": 0.1,
        "sigma": 0.25,
        "d_list": "10,100,1000",
        "t_max": 100000,
        "points": 200,
    },
    "fig3-robust-compare": {
        **_COMMON_DATA,
        "eta": 0.1,
        "c": 0.1,
        "steps": 1000,
        "first_step_eta": None,
    },
    "fig8-sweep": {
        "images": "",
        "labels": "",
        "data_csv": "",
        "limit": 2000,
        "d": 20,
        "n": 600,
        "gamma": 0.3,
        "data_seed": 0,
        "test_fraction": 1.0 / 6.0,
        "eta": 2.0,
        "steps": 300,
        "batch": 0,
        "attack_steps": 4,
        "p": "inf",
        "c_grid": "0,0.005:0.05:9",
        "k_grid": "0.1:3:10",
        "workers": 1,
        "curvature_examples": 512,
        "curvature_tol": 1e-6,
        "curvature_iters": 300,
        "eval_attack_steps": 10,
    },
    "fig9-sweep": {
        "images": "",
        "labels": "",
        "data_csv": "",
        "limit": 2000,
        "d": 20,
        "n": 600,
        "gamma": 0.3,
        "data_seed": 0,
        "test_fraction": 1.0 / 6.0,
        "eta": 0.5,
        "steps": 150,
        "batch": 0,
        "attack_steps": 4,
        "p": "inf",
        "c_grid": "0,0.005:0.05:9",
        "eps_grid": "0.5:50:10",
        "clip_k": 1.0,
        "delta": 1e-5,
        "workers": 1,
        "curvature_examples": 512,
        "curvature_tol": 1e-6,
        "curvature_iters": 300,
        "eval_attack_steps": 10,
    },
    "bounds-only": {
        "eta": 0.1,
        "gamma": 1.0,
        "c": 0.1,
        "d": 10,
        "sigma": 0.25,
        "form": "appendix",
        "t_max": 10000,
        "points": 200,
    },
    "attack-eval": {
        "d": 20,
        "n": 600,
        "gamma": 0.3,
        "data_seed": 0,
        "test_fraction": 0.25,
        "eta": 0.5,
        "steps": 400,
        "c_train": 0.2,
        "p": "2",
        "budgets": "0,0.05,0.1,0.15,0.2,0.3",
        "attack_steps": 50,
        "restarts": 1,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    output_dir: str
    seeds: tuple
    params: dict

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if not self.seeds:
            raise ValueError("seeds list must be nonempty")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ValueError(
                f"unknown parameters for {self.kind}: {sorted(unknown)}"
            )


def parse_seeds(text: str) -> tuple:
    """Seeds in one of three forms: "7", "0,1,2", or "start:count"."""
    text = text.strip()
    if ":" in text:
        start_s, count_s = text.split(":", 1)
        start, count = int(start_s), int(count_s)
        if count < 1:
            raise ValueError("seed count must be >= 1")
        return tuple(range(start, start + count))
    return tuple(int(part) for part in text.split(",") if part.strip())


def parse_grid(text: str) -> list:
    """Comma-separated values; an element "a:b:n" expands to n log-spaced
    points from a to b inclusive."""
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo_s, hi_s, n_s = part.split(":")
            lo, hi, n = float(lo_s), float(hi_s), int(n_s)
            if lo <= 0 or hi <= 0:
                raise ValueError("log-spaced grid endpoints must be positive")
            values.extend(float(v) for v in np.geomspace(lo, hi, n))
        else:
            values.append(float("inf") if part == "inf" else float(part))
    if not values:
        raise ValueError(f"empty grid: {text!r}")
    return values


def load_experiment_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ValueError(f"cannot read config file {path}")
    if "experiment" not in parser:
        raise ValueError("config needs an [experiment] section")
    section = parser["experiment"]
    kind = section.get("kind", "").strip()
    output_dir = section.get("output_dir", "").strip()
    if not output_dir:
        raise ValueError("[experiment] output_dir is required")
    seeds = parse_seeds(section.get("seeds", "0"))
    params = dict(parser["params"]) if "params" in parser else {}
    return ExperimentConfig(kind=kind, output_dir=output_dir, seeds=seeds, params=params)


def resolve_params(config: ExperimentConfig) -> dict:
    """Defaults overlaid with the config's [params]; values stay typed."""
    resolved = dict(_DEFAULTS[config.kind])
    for key, raw in config.params.items():
        default = resolved[key]
        if isinstance(default, bool):
            resolved[key] = str(raw).lower() in ("1", "true", "yes")
        elif isinstance(default, int) and not isinstance(default, bool):
            resolved[key] = int(raw)
        elif isinstance(default, float):
            resolved[key] = float(raw)
        elif default is None:
            resolved[key] = None if str(raw).lower() == "none" else float(raw)
        else:
            resolved[key] = str(raw)
    return resolved


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    (
                        str(v)
                        if isinstance(v, (int, np.integer))
                        else f"{float(v):.17g}"
                    )
                    for v in row
                ]
            )


class _ArtifactSet:
    """Collects artifact paths; on failure removes everything written."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.paths = []
        self.stage = "setup"  # advanced by the runner so failures name it

    def path_for(self, name):
        path = os.path.join(self.out_dir, name)
        self.paths.append(path)
        return path

    def discard_all(self):
        for path in self.paths:
            try:
                os.unlink(path)
            except FileNotFoundError:
                pass


def run_experiment(config: ExperimentConfig) -> list:
    """Run one experiment; returns the list of artifact paths written."""
    params = resolve_params(config)
    os.makedirs(config.output_dir, exist_ok=True)
    artifacts = _ArtifactSet(config.output_dir)
    runner = _RUNNERS[config.kind]
    try:
        notes = runner(config, params, artifacts)
    except Exception as exc:
        artifacts.discard_all()
        raise ExperimentError(f"stage {artifacts.stage!r} failed: {exc}") from exc
    manifest = {
        "kind": config.kind,
        "version": __version__,
        "seeds": list(config.seeds),
        "params": {k: (None if v is None else v) for k, v in params.items()},
        "artifacts": [os.path.basename(p) for p in artifacts.paths],
        "notes": notes,
    }
    manifest_path = os.path.join(config.output_dir, MANIFEST_NAME)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return artifacts.paths + [manifest_path]


# ---------------------------------------------------------------------------
# fig1: four training curves against their four rate bounds
# ---------------------------------------------------------------------------


def _mean_and_se(stack: np.ndarray) -> tuple:
    mean = stack.mean(axis=0)
    if stack.shape[0] < 2:
        return mean, np.zeros_like(mean)
    se = stack.std(axis=0, ddof=1) / math.sqrt(stack.shape[0])
    return mean, se


def _averaged_losses(dataset, base: OptimizerConfig, seeds, column: str):
    traces = [train(dataset, replace(base, seed=seed)) for seed in seeds]
    stack = np.stack([getattr(trace, column) for trace in traces])
    return _mean_and_se(stack)


def _run_fig1(config, params, artifacts):
    artifacts.stage = "generate-data"
    dataset = generate_separable(
        d=params["d"], n=params["n"], gamma=params["gamma"], seed=params["data_seed"]
    )
    eta, c, sigma, steps = params["eta"], params["c"], params["sigma"], params["steps"]
    gamma = params["gamma"]
    first = params["first_step_eta"]

    def cfg(spec_c, noise):
        spec = LossSpec.adversarial(spec_c) if spec_c > 0 else LossSpec.nominal()
        return OptimizerConfig(
            eta=eta,
            steps=steps,
            spec=spec,
            sigma=noise,
            noise_mode="theory",
            first_step_eta=first,
            seed=config.seeds[0],
        )

    notes = {"warnings": validate_config(cfg(c, sigma), gamma=gamma)}

    artifacts.stage = "train-nominal"
    nominal, _ = _averaged_losses(dataset, cfg(0.0, 0.0), config.seeds[:1], "nominal_loss")
    artifacts.stage = "train-private"
    private, private_se = _averaged_losses(dataset, cfg(0.0, sigma), config.seeds, "nominal_loss")
    artifacts.stage = "train-robust"
    robust, _ = _averaged_losses(dataset, cfg(c, 0.0), config.seeds[:1], "adversarial_loss")
    artifacts.stage = "train-robust-private"
    robust_private, robust_private_se = _averaged_losses(
        dataset, cfg(c, sigma), config.seeds, "adversarial_loss"
    )

    artifacts.stage = "evaluate-bounds"
    ts = np.arange(1, steps + 1)
    base = BoundInputs(t=1, eta=eta, gamma=gamma, c=c, d=params["d"], sigma=sigma)
    series = {
        name: bounds_mod.evaluate_series(name, base, ts)[:, 1]
        for name in ("nominal", "private", "robust", "robust-private")
    }

    artifacts.stage = "write-csv"
    header = [
        "t",
        "loss_nominal",
        "loss_private",
        "se_private",
        "loss_robust",
        "loss_robust_private",
        "se_robust_private",
        "bound_nominal",
        "bound_private",
        "bound_robust",
        "bound_robust_private",
    ]
    rows = [
        (
            int(t),
            nominal[t],
            private[t],
            private_se[t],
            robust[t],
            robust_private[t],
            robust_private_se[t],
            series["nominal"][t - 1],
            series["private"][t - 1],
            series["robust"][t - 1],
            series["robust-private"][t - 1],
        )
        for t in ts
    ]
    _write_csv(artifacts.path_for("fig1-convergence.csv"), header, rows)
    return notes


# ---------------------------------------------------------------------------
# fig2: worst-case-vs-plain bound gaps over time, several dimensions
# ---------------------------------------------------------------------------


def _run_fig2(config, params, artifacts):
    artifacts.stage = "evaluate-gaps"
    d_list = [int(v) for v in parse_grid(params["d_list"])]
    ts = log_spaced_steps(int(params["t_max"]), int(params["points"]))
    decades = [10**k for k in range(0, int(math.log10(params["t_max"])) + 1)]
    ts = np.unique(np.concatenate([ts, decades]))
    base = BoundInputs(
        t=1, eta=params["eta"], gamma=params["gamma"], c=params["c"], sigma=params["sigma"]
    )
    columns = {"gap_nonprivate": bounds_mod.gap_curve(base, "nonprivate", ts)[:, 1]}
    for d in d_list:
        curve = bounds_mod.gap_curve(replace(base, d=d), "private", ts)
        columns[f"gap_private_d{d}"] = curve[:, 1]

    artifacts.stage = "write-csv"
    header = ["t"] + list(columns)
    rows = [
        tuple([int(t)] + [columns[name][i] for name in columns])
        for i, t in enumerate(ts)
    ]
    _write_csv(artifacts.path_for("fig2-gap.csv"), header, rows)
    return {}


# ---------------------------------------------------------------------------
# fig3: worst-case loss under plain vs worst-case training, with bounds
# ---------------------------------------------------------------------------


def _run_fig3(config, params, artifacts):
    artifacts.stage = "generate-data"
    dataset = generate_separable(
        d=params["d"], n=params["n"], gamma=params["gamma"], seed=params["data_seed"]
    )
    eta, c, steps = params["eta"], params["c"], params["steps"]
    spec = LossSpec.adversarial(c)

    artifacts.stage = "train-adversarial"
    robust_cfg = OptimizerConfig(
        eta=eta,
        steps=steps,
        spec=spec,
        first_step_eta=params["first_step_eta"],
        seed=config.seeds[0],
    )
    robust = train(dataset, robust_cfg)

    artifacts.stage = "evaluate-adversarial-loss-of-standard"
    # plain GD is deterministic; walk the iterates directly and score each
    # one with the worst-case loss the trace would not otherwise record
    x, y = dataset.features, dataset.labels.astype(np.float64)
    theta = np.zeros(dataset.dim)
    plain_adv = np.zeros(steps + 1)
    plain_adv[0] = adversarial_logistic_loss(theta, x, y, spec)
    for t in range(steps):
        theta = theta - eta * gradient(theta, x, y, LossSpec.nominal())
        plain_adv[t + 1] = adversarial_logistic_loss(theta, x, y, spec)

    artifacts.stage = "evaluate-bounds"
    ts = np.arange(1, steps + 1)
    base = BoundInputs(t=1, eta=eta, gamma=params["gamma"], c=c)
    bound_robust = bounds_mod.evaluate_series("robust", base, ts)[:, 1]
    bound_rus = bounds_mod.evaluate_series("robust-under-standard", base, ts)[:, 1]

    artifacts.stage = "write-csv"
    header = [
        "t",
        "adv_loss_adversarial_training",
        "adv_loss_standard_training",
        "bound_robust",
        "bound_robust_under_standard",
    ]
    rows = [
        (int(t), robust.adversarial_loss[t], plain_adv[t], bound_robust[t - 1], bound_rus[t - 1])
        for t in ts
    ]
    _write_csv(artifacts.path_for("fig3-robust-compare.csv"), header, rows)
    return {}


# ---------------------------------------------------------------------------
# fig8 / fig9: curvature sweeps
# ---------------------------------------------------------------------------


def _sweep_dataset(params) -> Dataset:
    if params["images"]:
        limit = int(params["limit"]) if params["limit"] else None
        return load_idx(params["images"], params["labels"], limit=limit)
    if params["data_csv"]:
        return load_csv(params["data_csv"])
    return generate_separable(
        d=params["d"], n=params["n"], gamma=params["gamma"], seed=params["data_seed"]
    )


def _sweep_base_config(config, params) -> OptimizerConfig:
    batch = int(params["batch"]) if params["batch"] else None
    return OptimizerConfig(
        eta=params["eta"],
        steps=int(params["steps"]),
        batch=batch,
        attack_steps=int(params["attack_steps"]),
        seed=config.seeds[0],
    )


def _parse_p(value) -> float:
    return math.inf if str(value).strip() in ("inf", "oo") else float(value)


def _run_fig8(config, params, artifacts):
    artifacts.stage = "load-data"
    dataset = _sweep_dataset(params)
    train_ds, test_ds = split(dataset, params["test_fraction"], seed=config.seeds[0])
    artifacts.stage = "sweep"
    table = clipping_smoothness_curve(
        train_ds,
        parse_grid(params["c_grid"]),
        parse_grid(params["k_grid"]),
        _sweep_base_config(config, params),
        test_dataset=test_ds,
        p=_parse_p(params["p"]),
        workers=int(params["workers"]),
        curvature_examples=int(params["curvature_examples"]),
        curvature_tol=params["curvature_tol"],
        curvature_iters=int(params["curvature_iters"]),
        eval_attack_steps=int(params["eval_attack_steps"]),
    )
    artifacts.stage = "write-csv"
    table.to_csv(artifacts.path_for("fig8-sweep.csv"))
    return {"mode": "clip"}


def _run_fig9(config, params, artifacts):
    artifacts.stage = "load-data"
    dataset = _sweep_dataset(params)
    train_ds, test_ds = split(dataset, params["test_fraction"], seed=config.seeds[0])
    artifacts.stage = "sweep"
    base = replace(_sweep_base_config(config, params), clip_k=params["clip_k"])
    table = privacy_smoothness_curve(
        train_ds,
        parse_grid(params["c_grid"]),
        parse_grid(params["eps_grid"]),
        base,
        delta=params["delta"],
        test_dataset=test_ds,
        p=_parse_p(params["p"]),
        workers=int(params["workers"]),
        curvature_examples=int(params["curvature_examples"]),
        curvature_tol=params["curvature_tol"],
        curvature_iters=int(params["curvature_iters"]),
        eval_attack_steps=int(params["eval_attack_steps"]),
    )
    artifacts.stage = "write-csv"
    table.to_csv(artifacts.path_for("fig9-sweep.csv"))
    return {"mode": "dp", "delta": params["delta"]}


# ---------------------------------------------------------------------------
# bounds-only: tabulate the rate bounds on a log grid of steps
# ---------------------------------------------------------------------------


def _run_bounds_only(config, params, artifacts):
    artifacts.stage = "evaluate-bounds"
    ts = log_spaced_steps(int(params["t_max"]), int(params["points"]))
    base = BoundInputs(
        t=1,
        eta=params["eta"],
        gamma=params["gamma"],
        c=params["c"],
        d=int(params["d"]),
        sigma=params["sigma"],
        form=params["form"],
    )
    names = ["nominal", "private", "robust", "robust-private", "robust-under-standard"]
    columns = {name: bounds_mod.evaluate_series(name, base, ts)[:, 1] for name in names}
    artifacts.stage = "write-csv"
    header = ["t"] + [f"bound_{name.replace('-', '_')}" for name in names]
    rows = [
        tuple([int(t)] + [columns[name][i] for name in names]) for i, t in enumerate(ts)
    ]
    _write_csv(artifacts.path_for("bounds-only.csv"), header, rows)
    return {}


# ---------------------------------------------------------------------------
# attack-eval: accuracy under attack, plain vs worst-case training
# ---------------------------------------------------------------------------


def _run_attack_eval(config, params, artifacts):
    artifacts.stage = "generate-data"
    dataset = generate_separable(
        d=params["d"], n=params["n"], gamma=params["gamma"], seed=params["data_seed"]
    )
    train_ds, test_ds = split(dataset, params["test_fraction"], seed=config.seeds[0])
    p = _parse_p(params["p"])
    eta, steps, c_train = params["eta"], int(params["steps"]), params["c_train"]

    artifacts.stage = "train-standard"
    plain = train(
        train_ds,
        OptimizerConfig(eta=eta, steps=steps, spec=LossSpec.nominal(), seed=config.seeds[0]),
    ).final_params
    artifacts.stage = "train-adversarial"
    robust = train(
        train_ds,
        OptimizerConfig(
            eta=eta, steps=steps, spec=LossSpec.adversarial(c_train, p), seed=config.seeds[0]
        ),
    ).final_params

    artifacts.stage = "attack-eval"
    budgets = parse_grid(params["budgets"])
    rows = []
    for index, budget in enumerate(budgets):
        attack = AttackConfig(
            budget=budget,
            p=p,
            steps=int(params["attack_steps"]) if budget > 0 else 0,
            restarts=int(params["restarts"]),
            seed=config.seeds[0] + index,
        )
        acc_plain = robust_accuracy(plain, test_ds, attack)
        acc_robust = robust_accuracy(robust, test_ds, attack)
        rows.append(
            (
                budget,
                acc_plain,
                acc_robust,
                acc_robust - acc_plain,
                exact_linear_robust_accuracy(plain, test_ds, budget, p),
                exact_linear_robust_accuracy(robust, test_ds, budget, p),
            )
        )
    artifacts.stage = "write-csv"
    header = [
        "budget",
        "acc_standard",
        "acc_adversarial",
        "improvement",
        "exact_acc_standard",
        "exact_acc_adversarial",
    ]
    _write_csv(artifacts.path_for("attack-eval.csv"), header, rows)
    return {}


_RUNNERS = {
    "fig1-convergence": _run_fig1,
    "fig2-gap": _run_fig2,
    "fig3-robust-compare": _run_fig3,
    "fig8-sweep": _run_fig8,
    "fig9-sweep": _run_fig9,
    "bounds-only": _run_bounds_only,
    "attack-eval": _run_attack_eval,
}
