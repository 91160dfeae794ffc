"""Numerical building blocks for the from-scratch networks.

Parameters are plain lists of float64 arrays.  Every model in the package
exposes ``loss_and_grad(params, X, y)`` over such a list, which is all the
SGD loop and the finite-difference checker need.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .core import InputError

Params = list  # list[np.ndarray]
LossGrad = Callable[[Params, np.ndarray, np.ndarray], "tuple[float, Params]"]
LossFn = Callable[[Params, np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 5
    early_stop_fraction: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InputError("batch_size and max_epochs must be positive")
        if not 0 < self.early_stop_fraction < 0.5:
            raise InputError("early_stop_fraction must lie in (0, 0.5)")
        if self.early_stop_patience < 0:
            raise InputError("early_stop_patience must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def relu(z):
    return np.maximum(z, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax(p) -> int | np.ndarray:
    """Argmax over the last axis; ties go to the lowest class index."""
    return np.argmax(p, axis=-1)


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of integer labels ``y`` under ``probs``."""
    picked = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def softmax_xent_grad(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits."""
    g = probs.copy()
    g[np.arange(len(y)), y] -= 1.0
    return g / len(y)


def dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return w, b


def check_batch(X: np.ndarray, y: np.ndarray, num_classes: int) -> None:
    if len(y) == 0:
        raise InputError("empty batch")
    if len(X) != len(y):
        raise InputError(f"{len(X)} inputs but {len(y)} labels")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise InputError("label out of range")


def holdout_split(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` and carve off the early-stopping subset."""
    order = rng.permutation(n)
    n_hold = 0 if n < 2 else max(1, int(round(fraction * n)))
    return order[n_hold:], order[:n_hold]


def sgd_fit(params: Params, loss_and_grad: LossGrad, loss_fn: LossFn,
            X: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple[Params, list[dict]]:
    """Mini-batch SGD with early stopping on an internal holdout.

    Returns the parameters with the lowest holdout loss and a per-epoch
    history of ``{"epoch", "train_loss", "val_loss"}`` rows.
    """
    rng = np.random.default_rng(config.rng_seed)
    fit_idx, hold_idx = holdout_split(len(y), config.early_stop_fraction, rng)
    params = [p.copy() for p in params]
    has_holdout = len(hold_idx) > 0
    best = [p.copy() for p in params]
    best_loss = loss_fn(params, X[hold_idx], y[hold_idx]) if has_holdout else np.inf
    history = []
    stale = 0
    for epoch in range(config.max_epochs):
        perm = fit_idx[rng.permutation(len(fit_idx))]
        total = 0.0
        for start in range(0, len(perm), config.batch_size):
            b = perm[start:start + config.batch_size]
            loss, grads = loss_and_grad(params, X[b], y[b])
            total += loss * len(b)
            for p, g in zip(params, grads):
                p -= config.learning_rate * g
        train_loss = total / len(perm)
        val_loss = loss_fn(params, X[hold_idx], y[hold_idx]) if has_holdout else float("nan")
        history.append({"epoch": epoch + 1, "train_loss": train_loss, "val_loss": val_loss})
        if not has_holdout:
            best = [p.copy() for p in params]
            continue
        if val_loss < best_loss:
            best_loss, stale = val_loss, 0
            best = [p.copy() for p in params]
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    return best, history


def finite_difference_grads(params: Params, loss_fn: Callable[[Params], float],
                            eps: float = 1e-5) -> Params:
    """Central-difference gradient of ``loss_fn`` for every parameter entry."""
    params = [np.array(p, dtype=np.float64) for p in params]
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            v = flat[i]
            flat[i] = v + eps
            plus = loss_fn(params)
            flat[i] = v - eps
            minus = loss_fn(params)
            flat[i] = v
            gflat[i] = (plus - minus) / (2 * eps)
        out.append(g)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray],
                       floor: float = 1e-8) -> float:
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom, initial=0.0)))
    return worst


def relu_stack_forward(params: Params, X: np.ndarray) -> list[np.ndarray]:
    """Apply ReLU dense layers ``[W1, b1, W2, b2, ...]``; returns every activation, input first."""
    acts = [X]
    for k in range(0, len(params), 2):
        acts.append(relu(acts[-1] @ params[k] + params[k + 1]))
    return acts


def relu_stack_backward(params: Params, acts: list[np.ndarray],
                        d_out: np.ndarray) -> tuple[Params, np.ndarray]:
    """Backprop ``d_out`` (gradient w.r.t. the last activation) through the stack.

    Returns the parameter gradients and the gradient w.r.t. the input.
    """
    grads: Params = [None] * len(params)
    delta = d_out
    for k in range(len(params) // 2 - 1, -1, -1):
        delta = delta * (acts[k + 1] > 0)
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ params[2 * k].T
    return grads, delta
