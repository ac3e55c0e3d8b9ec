"""Shared training loop, optimizers, and the finite-difference gradient
harness for both models.

A model here is anything with ``pack``/``unpack`` and a
``loss_and_grads(inputs, labels, sample_weights, update_stats)`` method;
the loop itself only ever sees flat parameter vectors. An optional penalty
term (used by the consolidation-regularized retraining) contributes extra
loss and gradient on top of the data term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 128
    optimizer: str = "adam"
    seed: int = 0
    class_weights: str | dict | None = "balanced"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "class_weights": self.class_weights,
        }


def class_weight_vector(labels: np.ndarray, scheme: str | dict | None) -> np.ndarray:
    """Per-sample weights: None for all ones, 'balanced' for N/(2*N_class),
    or an explicit {0: w0, 1: w1} map."""
    labels = np.asarray(labels)
    if scheme is None:
        return np.ones(len(labels))
    if scheme == "balanced":
        n = len(labels)
        weights = {}
        for cls in (0, 1):
            count = int(np.sum(labels == cls))
            if count == 0:
                raise TrainingError("balanced weighting requires both classes present")
            weights[cls] = n / (2.0 * count)
        return np.array([weights[int(y)] for y in labels])
    if isinstance(scheme, dict):
        return np.array([scheme[int(y)] for y in labels])
    raise ValueError(f"unknown class_weights scheme: {scheme!r}")


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return theta - self.lr * grad


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return _Sgd(cfg.learning_rate)
    return _Adam(cfg.learning_rate)


def _take(inputs, indices: np.ndarray):
    if isinstance(inputs, np.ndarray):
        return inputs[indices]
    return [inputs[i] for i in indices]


def train(
    model,
    inputs,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    penalty: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
) -> list[float]:
    """Train in place; returns the per-epoch mean loss history.

    ``inputs`` is the model's native batch type (feature matrix for the
    MLP, graph list for the GCN). ``penalty`` maps the flat parameter
    vector to an extra (loss, gradient) pair added to every batch.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    if n == 0:
        raise TrainingError("empty training set")
    weights = class_weight_vector(labels, cfg.class_weights)
    optimizer = _make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_loss, grad, _ = model.loss_and_grads(
                _take(inputs, idx), labels[idx], weights[idx], update_stats=True
            )
            if penalty is not None:
                extra_loss, extra_grad = penalty(model.pack())
                batch_loss += extra_loss
                grad = grad + extra_grad
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss {batch_loss} at epoch {epoch + 1}, "
                    f"batch starting at {start} (lr={cfg.learning_rate})"
                )
            model.unpack(optimizer.step(model.pack(), grad))
            epoch_loss += batch_loss * len(idx)
        history.append(epoch_loss / n)
    if not model.finite():
        raise TrainingError("training produced non-finite parameters")
    return history


def gradient_check(
    model,
    inputs,
    labels: np.ndarray,
    sample_weights: np.ndarray | None = None,
    h: float = 1e-6,
    **loss_kwargs,
) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over every parameter. Positions where both gradients vanish
    count as zero error. Coordinates whose perturbation lands within the
    step of a ReLU kink get re-checked at a smaller step: straddle noise
    collapses as the step shrinks while a wrong gradient stays wrong, so
    the refinement filters finite-difference artifacts without masking
    real bugs."""
    theta0 = model.pack()
    _, analytic, _ = model.loss_and_grads(inputs, labels, sample_weights, **loss_kwargs)

    def central(i: int, step: float) -> float:
        theta = theta0.copy()
        theta[i] = theta0[i] + step
        model.unpack(theta)
        up, _, _ = model.loss_and_grads(inputs, labels, sample_weights, **loss_kwargs)
        theta[i] = theta0[i] - step
        model.unpack(theta)
        down, _, _ = model.loss_and_grads(inputs, labels, sample_weights, **loss_kwargs)
        return (up - down) / (2 * step)

    def rel(a: float, f: float) -> float:
        # floor the denominator: central differences at this step carry
        # cancellation noise around 1e-10, so near-zero gradients are held
        # to the equivalent absolute standard instead of a meaningless ratio
        return abs(a - f) / max(abs(a) + abs(f), 3e-6)

    err = np.zeros_like(theta0)
    for i in range(len(theta0)):
        err[i] = rel(analytic[i], central(i, h))
    for i in np.flatnonzero(err > 5e-5):
        err[i] = min(err[i], rel(analytic[i], central(i, h / 10)))
    model.unpack(theta0)
    return float(err.max())
