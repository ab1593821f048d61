"""Binary logistic losses (nominal and worst-case) and softmax losses.

For a linear binary classifier the worst-case loss under a norm-bounded
input perturbation has a closed form: an attacker with an l_p budget c
shifts the logit by c times the dual norm of the weights,

    loss(theta; x, y) = log(1 + exp(-y <x, theta> + c * ||theta||_q)),

with q = 2 for p = 2 and q = 1 for p = inf.  Gradients and Hessian-vector
products below are exact for that expression; the multi-class softmax loss
has no such closed form and only its nominal derivatives live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import SingularityError


@dataclass
class ModelParams:
    """Linear model weights: shape (d,) for binary, (C, d) for multi-class."""

    weights: np.ndarray
    _norm: float | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim not in (1, 2):
            raise ValueError("weights must be a vector or a class-by-feature matrix")

    def norm(self) -> float:
        """Euclidean norm of the flattened weights, computed once and cached."""
        if self._norm is None:
            self._norm = float(np.linalg.norm(self.weights))
        return self._norm


@dataclass(frozen=True)
class LossSpec:
    """Which loss to evaluate: nominal, or worst-case with budget c under l_p."""

    kind: str = "nominal"
    c: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("nominal", "adversarial"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not (math.isfinite(self.c) and self.c >= 0.0):
            raise ValueError("budget c must be finite and non-negative")
        if self.kind == "nominal" and self.c != 0.0:
            raise ValueError("nominal loss requires c = 0")
        if self.p not in (2.0, math.inf):
            raise ValueError("perturbation norm p must be 2 or inf")

    @classmethod
    def nominal(cls) -> "LossSpec":
        return cls(kind="nominal", c=0.0)

    @classmethod
    def adversarial(cls, c: float, p: float = 2.0) -> "LossSpec":
        return cls(kind="adversarial", c=float(c), p=float(p))

    @property
    def dual_q(self) -> float:
        """Exponent of the dual norm applied to the weights."""
        return 2.0 if self.p == 2.0 else 1.0

    def weight_norm(self, theta: np.ndarray) -> float:
        if self.dual_q == 2.0:
            return float(np.linalg.norm(theta))
        return float(np.abs(theta).sum())

    def weight_norm_subgradient(self, theta: np.ndarray) -> np.ndarray:
        """Subgradient of the dual weight norm; 0 at theta = 0 by convention."""
        if self.dual_q == 2.0:
            norm = np.linalg.norm(theta)
            if norm == 0.0:
                return np.zeros_like(theta)
            return theta / norm
        return np.sign(theta)


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + exp(z)) without overflow on either tail
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _as_batch(x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != x.shape[0]:
        raise ValueError("feature/label count mismatch")
    return x, y


def _binary_margins(theta, x, y, spec: LossSpec) -> np.ndarray:
    """Softplus argument per example: -y <x, theta> + c ||theta||_q."""
    z = -y * (x @ theta)
    if spec.c > 0.0:
        z = z + spec.c * spec.weight_norm(theta)
    return z


def logistic_loss(theta, x, y, per_example: bool = False):
    """Mean (or per-example) log(1 + exp(-y <x, theta>))."""
    theta = np.asarray(theta, dtype=np.float64)
    x, y = _as_batch(x, y)
    values = _softplus(-y * (x @ theta))
    return values if per_example else float(values.mean())


def adversarial_logistic_loss(theta, x, y, spec: LossSpec, per_example: bool = False):
    """Closed-form worst-case logistic loss under the budget in ``spec``."""
    theta = np.asarray(theta, dtype=np.float64)
    x, y = _as_batch(x, y)
    values = _softplus(_binary_margins(theta, x, y, spec))
    return values if per_example else float(values.mean())


def per_example_gradients(theta, x, y, spec: LossSpec) -> np.ndarray:
    """Stack of single-example loss gradients, shape (n, d) or (n, C, d)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 2:
        if spec.c > 0.0:
            raise ValueError(
                "the multi-class worst-case loss has no closed form; "
                "compute gradients at attacked inputs instead"
            )
        return _softmax_per_example_gradients(theta, x, y)
    x, y = _as_batch(x, y)
    sig = expit(_binary_margins(theta, x, y, spec))
    r = -y[:, None] * x
    if spec.c > 0.0:
        r = r + spec.c * spec.weight_norm_subgradient(theta)[None, :]
    return sig[:, None] * r


def gradient(theta, x, y, spec: LossSpec) -> np.ndarray:
    """Mean loss gradient over the batch."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 2:
        if spec.c > 0.0:
            raise ValueError(
                "the multi-class worst-case loss has no closed form; "
                "compute gradients at attacked inputs instead"
            )
        return multiclass_gradient(theta, x, y)
    x, y = _as_batch(x, y)
    sig = expit(_binary_margins(theta, x, y, spec))
    grad = -(sig * y) @ x / x.shape[0]
    if spec.c > 0.0:
        grad = grad + spec.c * float(sig.mean()) * spec.weight_norm_subgradient(theta)
    return grad


def hessian_vector_product(theta, v, x, y, spec: LossSpec) -> np.ndarray:
    """Exact H v for binary losses; central differences for multi-class.

    The multi-class step is eps = 1e-5 * max(1, ||theta||) / max(1, ||v||).
    For the l_inf (dual l_1) worst-case loss the weight-norm term is flat
    almost everywhere, so only the rank-one part contributes.
    """
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if theta.ndim == 2:
        if spec.c > 0.0:
            raise ValueError(
                "the multi-class worst-case loss has no closed form; "
                "compute curvature at attacked inputs instead"
            )
        eps = 1e-5 * max(1.0, float(np.linalg.norm(theta))) / max(
            1.0, float(np.linalg.norm(v))
        )
        plus = multiclass_gradient(theta + eps * v, x, y)
        minus = multiclass_gradient(theta - eps * v, x, y)
        return (plus - minus) / (2.0 * eps)
    x, y = _as_batch(x, y)
    n = x.shape[0]
    z = _binary_margins(theta, x, y, spec)
    sig = expit(z)
    weights = sig * (1.0 - sig)
    if spec.c == 0.0:
        return x.T @ (weights * (x @ v)) / n
    if spec.dual_q == 2.0:
        norm = float(np.linalg.norm(theta))
        if norm == 0.0:
            raise SingularityError(
                "the worst-case loss is not twice differentiable at theta = 0"
            )
        unit = theta / norm
        r = -y[:, None] * x + spec.c * unit[None, :]
        coeff = weights * (r @ v)
        rank_one = coeff @ r / n
        curvature = spec.c / norm * (v - unit * (unit @ v)) * float(sig.mean())
        return rank_one + curvature
    # dual l_1: sign(theta) is piecewise constant, no curvature from the norm
    r = -y[:, None] * x + spec.c * np.sign(theta)[None, :]
    coeff = weights * (r @ v)
    return coeff @ r / n


def _logits(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ theta.T


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def _check_classes(theta, y):
    if np.any(y < 0) or np.any(y >= theta.shape[0]):
        raise ValueError("class labels must lie in [0, num_classes)")


def multiclass_loss(theta, x, y, per_example: bool = False):
    """Mean (or per-example) softmax cross-entropy for weights (C, d)."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    _check_classes(theta, y)
    log_probs = _log_softmax(_logits(theta, x))
    values = -log_probs[np.arange(x.shape[0]), y]
    return values if per_example else float(values.mean())


def multiclass_gradient(theta, x, y) -> np.ndarray:
    """Mean softmax cross-entropy gradient, shape (C, d)."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    _check_classes(theta, y)
    probs = _softmax(_logits(theta, x))
    probs[np.arange(x.shape[0]), y] -= 1.0
    return probs.T @ x / x.shape[0]


def _softmax_per_example_gradients(theta, x, y) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    _check_classes(theta, y)
    probs = _softmax(_logits(theta, x))
    probs[np.arange(x.shape[0]), y] -= 1.0
    return probs[:, :, None] * x[:, None, :]
