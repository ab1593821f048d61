"""Gradient descent with optional worst-case losses, clipping, and noise.

Two noise regimes are supported.  In ``theory`` mode Gaussian noise with
per-coordinate std sigma is added to the mean batch gradient and clipping is
not applied (the analysed setting: the logistic losses here are already
1-Lipschitz).  In ``dpsgd`` mode every per-example gradient is clipped to
norm k, the clipped gradients are summed, noise with std sigma * k is added
to the sum, and the result is divided by the batch size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import losses as losses_mod
from .attacks import AttackConfig, pgd_batch
from .data import Dataset
from .errors import DivergenceError
from .losses import LossSpec, ModelParams

NOISE_MODES = ("theory", "dpsgd")


@dataclass(frozen=True)
class OptimizerConfig:
    """Training hyperparameters.

    ``first_step_eta`` is the optional larger first-step rate; when left as
    None it defaults to eta for nominal training and 4 * eta for worst-case
    training (the two-phase rule, which keeps the iterate norm away from the
    origin where the worst-case loss is non-smooth).  ``attack_steps`` only
    matters for multi-class worst-case training, whose loss is defined
    through the projected-gradient attack.
    """

    eta: float
    steps: int
    spec: LossSpec = LossSpec.nominal()
    clip_k: float = math.inf
    sigma: float = 0.0
    noise_mode: str = "theory"
    first_step_eta: float | None = None
    batch: int | None = None  # None -> full batch
    seed: int = 0
    attack_steps: int = 10

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError("eta must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.clip_k > 0:
            raise ValueError("clip_k must be positive (inf disables clipping)")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and non-negative")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.first_step_eta is not None and not self.first_step_eta / 2 > self.eta:
            raise ValueError("first_step_eta must exceed 2 * eta")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.attack_steps < 1:
            raise ValueError("attack_steps must be >= 1")

    @property
    def resolved_first_step_eta(self) -> float:
        if self.first_step_eta is not None:
            return self.first_step_eta
        return 4.0 * self.eta if self.spec.c > 0 else self.eta


@dataclass
class TrainTrace:
    """Per-iterate record of a training run.

    Row t describes iterate t (t = 0 is the zero initializer), so there are
    steps + 1 rows.  Losses and the gradient norm in row t < steps are
    evaluated on the batch used for the update out of iterate t (the full
    training set under full-batch training); the final row is always
    evaluated on the full training set.  ``grad_norm`` is the norm of the
    clipped, pre-noise mean gradient.
    """

    t: np.ndarray
    nominal_loss: np.ndarray
    adversarial_loss: np.ndarray
    theta_norm: np.ndarray
    grad_norm: np.ndarray
    final_params: ModelParams
    config: OptimizerConfig

    COLUMNS = ("t", "nominal_loss", "adversarial_loss", "theta_norm", "grad_norm")

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(self.COLUMNS)
            for i in range(self.t.shape[0]):
                writer.writerow(
                    [int(self.t[i])]
                    + [
                        f"{getattr(self, name)[i]:.17g}"
                        for name in self.COLUMNS[1:]
                    ]
                )


def read_trace_csv(path: str) -> dict[str, np.ndarray]:
    """Read a trace CSV back into column arrays."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != TrainTrace.COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows)
    return {name: data[:, i] for i, name in enumerate(TrainTrace.COLUMNS)}


def validate_config(config: OptimizerConfig, gamma: float | None = None) -> list[str]:
    """Advisory warnings about regimes where the convergence rates fail."""
    warnings = []
    if config.eta >= 4.0:
        warnings.append("eta >= 4 breaks the plain-descent rate (requires eta < 4)")
    c = config.spec.c
    if c > 0 and gamma is not None:
        if c >= gamma / 2:
            warnings.append(
                f"budget c={c:g} >= gamma/2={gamma / 2:g}: outside the analysed robust regime"
            )
        else:
            threshold = 4.0 * (gamma - 2.0 * c) / (gamma * (1.0 + c) ** 2)
            if config.eta >= threshold:
                warnings.append(
                    f"eta={config.eta:g} >= {threshold:g} breaks the worst-case rate "
                    "(requires eta < 4(gamma - 2c)/(gamma (1+c)^2))"
                )
    if config.noise_mode == "dpsgd" and math.isinf(config.clip_k):
        warnings.append("dpsgd mode needs a finite clip_k to calibrate noise")
    if config.noise_mode == "theory" and math.isfinite(config.clip_k):
        warnings.append("clip_k is ignored in theory mode")
    return warnings


def noise_calibration(config: OptimizerConfig, n: int) -> float:
    """Effective per-coordinate noise std on the mean gradient for n examples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if config.noise_mode == "theory":
        return config.sigma
    if math.isinf(config.clip_k):
        raise ValueError("dpsgd mode requires a finite clip_k")
    return config.sigma * config.clip_k / n


def clip_rows(grads: np.ndarray, k: float) -> np.ndarray:
    """Scale each per-example gradient to norm at most k."""
    if math.isinf(k):
        return grads
    flat = grads.reshape(grads.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    factors = np.minimum(1.0, k / np.maximum(norms, 1e-300))
    return grads * factors.reshape((-1,) + (1,) * (grads.ndim - 1))


def expected_norm_bound(theta, grad, eta: float, d: int | None, sigma: float) -> float:
    """Upper bound on E||theta - eta (grad + noise)|| for Gaussian noise.

    Exact second moment plus Jensen: the expected norm is at most
    sqrt(||theta - eta grad||^2 + d eta^2 sigma^2).  d = None means the
    full parameter dimension.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if d is None:
        d = theta.size
    drift = float(np.linalg.norm(theta - eta * grad))
    return math.sqrt(drift**2 + d * eta**2 * sigma**2)


def train(dataset: Dataset, config: OptimizerConfig) -> TrainTrace:
    """Run (noisy, clipped) gradient descent from the zero initializer.

    Raises DivergenceError (with the offending step) if an iterate or a
    recorded loss stops being finite.  Identical dataset, config, and seed
    give bit-identical traces.
    """
    multiclass = not dataset.is_binary
    spec = config.spec
    if config.noise_mode == "dpsgd" and config.sigma > 0 and math.isinf(config.clip_k):
        raise ValueError("dpsgd mode with sigma > 0 requires a finite clip_k")
    x_all = dataset.features
    if multiclass:
        y_all = dataset.labels
        theta = np.zeros((dataset.num_classes, dataset.dim))
    else:
        y_all = dataset.labels.astype(np.float64)
        theta = np.zeros(dataset.dim)
    n_all = dataset.n
    if config.batch is not None and config.batch > n_all:
        raise ValueError("batch size exceeds dataset size")

    rng = np.random.default_rng(config.seed)
    rows = np.zeros((config.steps + 1, 5))
    dpsgd = config.noise_mode == "dpsgd"

    def eval_at(xb, yb, t):
        """Losses and mean clipped gradient at the current iterate."""
        if multiclass:
            nominal = losses_mod.multiclass_loss(theta, xb, yb)
            if spec.c > 0:
                attack = AttackConfig(
                    budget=spec.c,
                    p=spec.p,
                    steps=config.attack_steps,
                    seed=config.seed + 7919 * (t + 1),
                )
                x_adv = xb + pgd_batch(theta, xb, yb, attack, box=dataset.box)
                adversarial = losses_mod.multiclass_loss(theta, x_adv, yb)
                grad_input = (x_adv, yb)
            else:
                adversarial = nominal
                grad_input = (xb, yb)
            grad_spec = LossSpec.nominal()
        else:
            nominal = losses_mod.logistic_loss(theta, xb, yb)
            if spec.c > 0:
                adversarial = losses_mod.adversarial_logistic_loss(theta, xb, yb, spec)
            else:
                adversarial = nominal
            grad_input = (xb, yb)
            grad_spec = spec
        if dpsgd:
            per = losses_mod.per_example_gradients(theta, *grad_input, grad_spec)
            mean_grad = clip_rows(per, config.clip_k).sum(axis=0) / xb.shape[0]
        else:
            mean_grad = losses_mod.gradient(theta, *grad_input, grad_spec)
        return nominal, adversarial, mean_grad

    for t in range(config.steps):
        if config.batch is None:
            xb, yb = x_all, y_all
        else:
            idx = rng.choice(n_all, size=config.batch, replace=False)
            xb, yb = x_all[idx], y_all[idx]
        nominal, adversarial, mean_grad = eval_at(xb, yb, t)
        if not (math.isfinite(nominal) and math.isfinite(adversarial)):
            raise DivergenceError(t)
        rows[t] = (t, nominal, adversarial, np.linalg.norm(theta), np.linalg.norm(mean_grad))
        update = mean_grad
        if config.sigma > 0:
            if dpsgd:
                noise_std = config.sigma * config.clip_k
                update = update + rng.normal(0.0, noise_std, size=theta.shape) / xb.shape[0]
            else:
                update = update + rng.normal(0.0, config.sigma, size=theta.shape)
        eta_t = config.resolved_first_step_eta if t == 0 else config.eta
        theta = theta - eta_t * update
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(t + 1)

    nominal, adversarial, mean_grad = eval_at(x_all, y_all, config.steps)
    if not (math.isfinite(nominal) and math.isfinite(adversarial)):
        raise DivergenceError(config.steps)
    rows[config.steps] = (
        config.steps,
        nominal,
        adversarial,
        np.linalg.norm(theta),
        np.linalg.norm(mean_grad),
    )
    return TrainTrace(
        t=rows[:, 0].astype(np.int64),
        nominal_loss=rows[:, 1],
        adversarial_loss=rows[:, 2],
        theta_norm=rows[:, 3],
        grad_norm=rows[:, 4],
        final_params=ModelParams(theta),
        config=config,
    )
