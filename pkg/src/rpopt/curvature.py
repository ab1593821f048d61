"""Hessian spectral analysis for trained models.

Dominant-eigenvalue estimation by power iteration on Hessian-vector
products, the closed-form curvature c/(2 ||theta*||) at a worst-case-trained
optimum, and hyperparameter sweeps relating the clipping threshold and the
privacy level to the curvature of the solution.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import losses as losses_mod
from .attacks import AttackConfig, pgd_batch
from .bounds import accountant_sigma
from .data import Dataset, split
from .errors import DivergenceError, SingularityError
from .losses import LossSpec, ModelParams
from .optimizer import OptimizerConfig, train

SWEEP_COLUMNS = (
    "c",
    "k_or_epsilon",
    "lambda_max",
    "test_accuracy",
    "theta_norm",
    "converged",
    "diverged",
)


@dataclass(frozen=True)
class SpectrumReport:
    """Dominant eigenpair estimate with its convergence evidence."""

    lambda_max: float
    iterations: int
    residual: float  # ||H v - lambda v|| at the reported eigenpair
    converged: bool
    theta_norm: float | None = None
    predicted: float | None = None  # c/(2 ||theta||) when applicable
    eigenvector: np.ndarray | None = None


def power_iteration(matvec, dim, tol=1e-8, max_iters=1000, seed=0) -> SpectrumReport:
    """Dominant eigenpair of a symmetric operator given as v -> H v.

    Convergence requires both a relative eigenvalue change below tol and a
    residual ||H v - lambda v|| <= tol * max(1, |lambda|); hitting max_iters
    first is reported with converged=False.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    residual = math.inf
    converged = False
    probes_left = 2
    iterations = 0
    while iterations < max_iters:
        iterations += 1
        w = np.asarray(matvec(v), dtype=np.float64)
        lam_new = float(v @ w)
        residual = float(np.linalg.norm(w - lam_new * v))
        scale = max(1.0, abs(lam_new))
        norm_w = float(np.linalg.norm(w))
        certified = norm_w == 0.0 or (
            abs(lam_new - lam) < tol * scale and residual <= tol * scale
        )
        lam = lam_new
        if certified:
            # (lam, v) is an eigenpair to within tol (annihilation is the
            # exact pair (0, v)).  A start vector aligned with a minor
            # eigendirection still certifies, so check fresh orthogonal
            # directions for a larger Rayleigh quotient before accepting
            # the pair as dominant.
            restart = None
            while probes_left > 0 and restart is None:
                probes_left -= 1
                probe = rng.standard_normal(dim)
                probe -= float(probe @ v) * v
                norm_p = float(np.linalg.norm(probe))
                if norm_p == 0.0:
                    continue
                probe /= norm_p
                rho = float(probe @ np.asarray(matvec(probe), dtype=np.float64))
                if rho > lam + tol * max(1.0, abs(lam), abs(rho)):
                    restart = probe
            if restart is None:
                converged = True
                break
            v = restart
            lam = math.inf  # forces a fresh convergence test after the restart
            continue
        v = w / norm_w
    return SpectrumReport(
        lambda_max=lam,
        iterations=iterations,
        residual=residual,
        converged=converged,
        eigenvector=v,
    )


def _model_weights(model) -> np.ndarray:
    if isinstance(model, ModelParams):
        return model.weights
    return np.asarray(model, dtype=np.float64)


def _hvp_operator(theta, x, y, spec: LossSpec):
    """Flattened Hessian-vector product closure for power iteration."""
    shape = theta.shape

    def matvec(v):
        hv = losses_mod.hessian_vector_product(theta, v.reshape(shape), x, y, spec)
        return hv.ravel()

    return matvec


def max_eigenvalue(
    model,
    dataset: Dataset,
    spec: LossSpec,
    tol: float = 1e-8,
    max_iters: int = 1000,
    seed: int = 0,
) -> SpectrumReport:
    """Top Hessian eigenvalue of the given loss at the model's parameters."""
    theta = _model_weights(model)
    if not np.all(np.isfinite(theta)):
        raise ValueError("model parameters must be finite")
    x = dataset.features
    y = dataset.labels if theta.ndim == 2 else dataset.labels.astype(np.float64)
    report = power_iteration(
        _hvp_operator(theta, x, y, spec), theta.size, tol=tol, max_iters=max_iters, seed=seed
    )
    norm = float(np.linalg.norm(theta))
    predicted = None
    if spec.c > 0.0 and theta.ndim == 1 and norm > 0.0:
        predicted = optimum_curvature(spec.c, norm)
    return replace(report, theta_norm=norm, predicted=predicted)


def attacked_max_eigenvalue(
    model,
    x: np.ndarray,
    y: np.ndarray,
    attack: AttackConfig,
    box=None,
    tol: float = 1e-8,
    max_iters: int = 1000,
    seed: int = 0,
) -> SpectrumReport:
    """Top eigenvalue of the multi-class loss at inputs attacked once, then
    frozen.  This is the tractable stand-in for the worst-case curvature:
    the perturbations are recomputed at the given parameters and held fixed
    while the Hessian is probed."""
    theta = _model_weights(model)
    x_adv = x + pgd_batch(theta, x, y, attack, box=box)
    report = power_iteration(
        _hvp_operator(theta, x_adv, y, LossSpec.nominal()),
        theta.size,
        tol=tol,
        max_iters=max_iters,
        seed=seed,
    )
    return replace(report, theta_norm=float(np.linalg.norm(theta)))


def optimum_curvature(c: float, theta_norm: float) -> float:
    """Curvature c/(2 ||theta*||) of the worst-case binary loss at a
    finite optimum; the rank-one gradient term vanishes there."""
    if not (math.isfinite(c) and c >= 0):
        raise ValueError("c must be finite and non-negative")
    if not theta_norm > 0:
        raise SingularityError("optimum curvature is undefined at theta = 0")
    return c / (2.0 * theta_norm)


def optimum_spectrum(c: float, theta: np.ndarray) -> tuple[float, np.ndarray]:
    """Full eigenstructure at the optimum: eigenvalue 0 along theta and
    optimum_curvature(c, ||theta||) on the orthogonal complement.  Returns
    (top eigenvalue, unit zero-eigenvalue direction)."""
    theta = np.asarray(theta, dtype=np.float64)
    norm = float(np.linalg.norm(theta))
    return optimum_curvature(c, norm), theta / norm


# ---------------------------------------------------------------------------
# Hyperparameter sweeps: one trained model per grid cell, each scored by its
# top Hessian eigenvalue and test accuracy.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    row: int  # index into the c grid
    col: int  # index into the k or epsilon grid
    c: float
    knob: float  # the clip threshold k, or the privacy level epsilon
    lambda_max: float
    test_accuracy: float
    theta_norm: float
    converged: bool
    diverged: bool


@dataclass(frozen=True)
class SweepTable:
    mode: str  # "clip" or "dp"
    c_grid: tuple
    knob_grid: tuple
    cells: tuple

    def matrix(self, field: str = "lambda_max") -> np.ndarray:
        out = np.full((len(self.c_grid), len(self.knob_grid)), np.nan)
        for cell in self.cells:
            out[cell.row, cell.col] = getattr(cell, field)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_COLUMNS)
            for cell in sorted(self.cells, key=lambda cc: (cc.row, cc.col)):
                writer.writerow(
                    [
                        f"{cell.c:.17g}",
                        f"{cell.knob:.17g}",
                        f"{cell.lambda_max:.17g}",
                        f"{cell.test_accuracy:.17g}",
                        f"{cell.theta_norm:.17g}",
                        int(cell.converged),
                        int(cell.diverged),
                    ]
                )


def read_sweep_csv(path) -> list[SweepCell]:
    """Rows of a sweep CSV as SweepCell records (grid indices unknown: -1)."""
    cells = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SWEEP_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"sweep CSV lacks columns: {sorted(missing)}")
        for row in reader:
            cells.append(
                SweepCell(
                    row=-1,
                    col=-1,
                    c=float(row["c"]),
                    knob=float(row["k_or_epsilon"]),
                    lambda_max=float(row["lambda_max"]),
                    test_accuracy=float(row["test_accuracy"]),
                    theta_norm=float(row["theta_norm"]),
                    converged=bool(int(row["converged"])),
                    diverged=bool(int(row["diverged"])),
                )
            )
    return cells


def cell_seed(seed: int, row: int, col: int) -> int:
    """Stable per-cell RNG seed derived from the base seed and grid indices."""
    return int(np.random.SeedSequence([seed, row, col]).generate_state(1)[0])


def accuracy(model, dataset: Dataset) -> float:
    theta = _model_weights(model)
    scores = dataset.features @ (theta.T if theta.ndim == 2 else theta)
    if theta.ndim == 2:
        return float(np.mean(np.argmax(scores, axis=1) == dataset.labels))
    return float(np.mean(scores * dataset.labels > 0))


@dataclass(frozen=True)
class _SweepContext:
    train_dataset: Dataset
    test_dataset: Dataset
    base_config: OptimizerConfig
    p: float
    curvature_examples: int
    curvature_tol: float
    curvature_iters: int
    eval_attack_steps: int


def _evaluate_cell(ctx: _SweepContext, job) -> SweepCell:
    """Train one grid cell and score it; divergence is recorded, not raised."""
    row, col, c, knob, clip_k, sigma = job
    seed = cell_seed(ctx.base_config.seed, row, col)
    spec = LossSpec.adversarial(c, ctx.p) if c > 0 else LossSpec.nominal()
    config = replace(
        ctx.base_config,
        spec=spec,
        clip_k=clip_k,
        sigma=sigma,
        noise_mode="dpsgd",
        seed=seed,
    )
    try:
        trace = train(ctx.train_dataset, config)
    except DivergenceError:
        return SweepCell(row, col, c, knob, math.nan, math.nan, math.nan, False, True)
    theta = trace.final_params.weights
    test_acc = accuracy(theta, ctx.test_dataset)
    limit = min(ctx.curvature_examples, ctx.train_dataset.n)
    xs = ctx.train_dataset.features[:limit]
    ys = ctx.train_dataset.labels[:limit]
    if theta.ndim == 2 and c > 0:
        report = attacked_max_eigenvalue(
            theta,
            xs,
            ys,
            AttackConfig(budget=c, p=ctx.p, steps=ctx.eval_attack_steps, seed=seed + 1),
            box=ctx.train_dataset.box,
            tol=ctx.curvature_tol,
            max_iters=ctx.curvature_iters,
            seed=seed + 2,
        )
    else:
        ys_typed = ys if theta.ndim == 2 else ys.astype(np.float64)
        report = power_iteration(
            _hvp_operator(theta, xs, ys_typed, spec),
            theta.size,
            tol=ctx.curvature_tol,
            max_iters=ctx.curvature_iters,
            seed=seed + 2,
        )
    return SweepCell(
        row=row,
        col=col,
        c=c,
        knob=knob,
        lambda_max=report.lambda_max,
        test_accuracy=test_acc,
        theta_norm=float(np.linalg.norm(theta)),
        converged=report.converged,
        diverged=False,
    )


_WORKER_CONTEXT: _SweepContext | None = None


def _init_sweep_worker(ctx: _SweepContext) -> None:
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = ctx


def _run_sweep_job(job) -> SweepCell:
    assert _WORKER_CONTEXT is not None
    return _evaluate_cell(_WORKER_CONTEXT, job)


def _run_sweep(ctx: _SweepContext, jobs, workers: int) -> list[SweepCell]:
    if workers <= 1:
        return [_evaluate_cell(ctx, job) for job in jobs]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_sweep_worker, initargs=(ctx,)
    ) as pool:
        return list(pool.map(_run_sweep_job, jobs))


def _resolve_split(dataset, test_dataset, seed):
    if test_dataset is not None:
        return dataset, test_dataset
    return split(dataset, test_fraction=1.0 / 6.0, seed=seed)


def _make_context(train_ds, test_ds, base_config, p, curvature_examples,
                  curvature_tol, curvature_iters, eval_attack_steps):
    return _SweepContext(
        train_dataset=train_ds,
        test_dataset=test_ds,
        base_config=base_config,
        p=p,
        curvature_examples=curvature_examples,
        curvature_tol=curvature_tol,
        curvature_iters=curvature_iters,
        eval_attack_steps=eval_attack_steps,
    )


def clipping_smoothness_curve(
    dataset: Dataset,
    c_grid,
    k_grid,
    base_config: OptimizerConfig,
    test_dataset: Dataset | None = None,
    p: float = math.inf,
    workers: int = 1,
    curvature_examples: int = 512,
    curvature_tol: float = 1e-6,
    curvature_iters: int = 300,
    eval_attack_steps: int = 10,
) -> SweepTable:
    """One model per (c, k) cell, trained with per-example clipping and no
    noise, scored by top Hessian eigenvalue and test accuracy."""
    c_grid = [float(c) for c in c_grid]
    k_grid = [float(k) for k in k_grid]
    if not c_grid or not k_grid:
        raise ValueError("grids must be nonempty")
    train_ds, test_ds = _resolve_split(dataset, test_dataset, base_config.seed)
    ctx = _make_context(train_ds, test_ds, base_config, p, curvature_examples,
                        curvature_tol, curvature_iters, eval_attack_steps)
    jobs = [
        (i, j, c, k, k, 0.0)
        for i, c in enumerate(c_grid)
        for j, k in enumerate(k_grid)
    ]
    cells = _run_sweep(ctx, jobs, workers)
    return SweepTable("clip", tuple(c_grid), tuple(k_grid), tuple(cells))


def privacy_smoothness_curve(
    dataset: Dataset,
    c_grid,
    epsilon_grid,
    base_config: OptimizerConfig,
    delta: float = 1e-5,
    test_dataset: Dataset | None = None,
    p: float = math.inf,
    workers: int = 1,
    curvature_examples: int = 512,
    curvature_tol: float = 1e-6,
    curvature_iters: int = 300,
    eval_attack_steps: int = 10,
) -> SweepTable:
    """One model per (c, epsilon) cell, trained privately: per-example clip
    to the base config's k, Gaussian noise calibrated so the whole run is
    (epsilon, delta) private."""
    c_grid = [float(c) for c in c_grid]
    epsilon_grid = [float(e) for e in epsilon_grid]
    if not c_grid or not epsilon_grid:
        raise ValueError("grids must be nonempty")
    if not math.isfinite(base_config.clip_k):
        raise ValueError("privacy sweep requires a finite clip_k in base_config")
    train_ds, test_ds = _resolve_split(dataset, test_dataset, base_config.seed)
    ctx = _make_context(train_ds, test_ds, base_config, p, curvature_examples,
                        curvature_tol, curvature_iters, eval_attack_steps)
    k = base_config.clip_k
    # one calibration per epsilon: noise on the gradient sum has std sigma*k,
    # so the config sigma is the calibrated absolute std divided by k
    sigma_by_eps = {
        eps: accountant_sigma(eps, delta, base_config.steps, lipschitz=k).sigma / k
        for eps in epsilon_grid
    }
    jobs = [
        (i, j, c, eps, k, sigma_by_eps[eps])
        for i, c in enumerate(c_grid)
        for j, eps in enumerate(epsilon_grid)
    ]
    cells = _run_sweep(ctx, jobs, workers)
    return SweepTable("dp", tuple(c_grid), tuple(epsilon_grid), tuple(cells))
