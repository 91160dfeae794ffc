"""Per-view classifiers ("inducers").

An inducer is a ReLU MLP trunk followed by a softmax head.  It sees one view
of a collection; when that view is missing it sees the zero vector and, after
training, answers with the class distribution of occluded training samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Collection, Dataset, InputError, Task, parse_task
from .imputer import impute_array
from .nn import (
    Params,
    TrainConfig,
    check_batch,
    cross_entropy,
    dense_init,
    finite_difference_grads,
    max_relative_error,
    relu_stack_backward,
    relu_stack_forward,
    sgd_fit,
    softmax,
    softmax_xent_grad,
)

CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = (32, 32)


@dataclass(frozen=True, eq=False)
class InducerModel:
    view_id: int
    task_id: Task
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    history: tuple[dict, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "task_id", parse_task(self.task_id))
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise InputError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InputError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and ws[k - 1].shape[1] != w.shape[0]:
                raise InputError(f"layer {k}: input width {w.shape[0]} != {ws[k - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InputError("non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        if ws[-1].shape[1] != self.task_id.spec.num_classes:
            raise InputError(f"head width {ws[-1].shape[1]} != classes of {self.task_id.value}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def feature_dim(self) -> int:
        return self.dims[0]

    def parameters(self) -> Params:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def with_parameters(self, params: Params, history=()) -> "InducerModel":
        return InducerModel(self.view_id, self.task_id, params[0::2], params[1::2], tuple(history))

    # -- checkpoints ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "view": self.view_id,
            "task": self.task_id.value,
            "dims": self.dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InducerModel":
        if d.get("version") != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {d.get('version')!r}")
        model = cls(int(d["view"]), d["task"],
                    [np.array(w, dtype=np.float64).reshape(len(w), -1) for w in d["weights"]],
                    [np.array(b, dtype=np.float64) for b in d["biases"]])
        if model.dims != list(d["dims"]):
            raise InputError(f"checkpoint dims {d['dims']} disagree with weights {model.dims}")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "InducerModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def init_model(view_id: int, task: Task, feature_dim: int,
               hidden: Sequence[int] = DEFAULT_HIDDEN, rng=None, zero: bool = False) -> InducerModel:
    """Fresh model with uniform(+-1/sqrt(fan_in)) weights, or all zeros when ``zero``."""
    task = parse_task(task)
    rng = np.random.default_rng(rng)
    dims = [feature_dim, *hidden, task.spec.num_classes]
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w, b = dense_init(rng, fan_in, fan_out)
        if zero:
            w, b = np.zeros_like(w), np.zeros_like(b)
        ws.append(w)
        bs.append(b)
    return InducerModel(view_id, task, ws, bs)


def _forward(params: Params, X: np.ndarray):
    acts = relu_stack_forward(params[:-2], X)
    probs = softmax(acts[-1] @ params[-2] + params[-1])
    return acts, probs


def forward(model: InducerModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(hidden, probs)`` for a single vector of shape (D,) or a batch (B, D).

    ``hidden`` is the last trunk activation, the per-view feature a fusion
    layer would consume.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.feature_dim or x.ndim not in (1, 2):
        raise InputError(f"expected features of length {model.feature_dim}, got shape {x.shape}")
    acts, probs = _forward(model.parameters(), np.atleast_2d(x))
    if x.ndim == 1:
        return acts[-1][0], probs[0]
    return acts[-1], probs


def loss_and_grad(params: Params, X: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Mean cross-entropy and its exact gradient for parameter list ``[W1, b1, ..., Wk, bk]``."""
    acts, probs = _forward(params, X)
    d_logits = softmax_xent_grad(probs, y)
    grads_head = [acts[-1].T @ d_logits, d_logits.sum(axis=0)]
    grads_trunk, _ = relu_stack_backward(params[:-2], acts, d_logits @ params[-2].T)
    return cross_entropy(probs, y), grads_trunk + grads_head


def loss_only(params: Params, X: np.ndarray, y: np.ndarray) -> float:
    return cross_entropy(_forward(params, X)[1], y)


def model_loss_and_gradient(model: InducerModel, X, y) -> tuple[float, Params]:
    """Loss and gradients for ``model`` on a batch of (features, label) pairs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    check_batch(X, y, model.task_id.spec.num_classes)
    if X.shape[1] != model.feature_dim:
        raise InputError(f"expected features of length {model.feature_dim}, got {X.shape[1]}")
    return loss_and_grad(model.parameters(), X, y)


def gradient_check(model: InducerModel, X, y, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    _, analytic = model_loss_and_gradient(model, X, y)
    numeric = finite_difference_grads(model.parameters(), lambda p: loss_only(p, X, y), eps)
    return max_relative_error(analytic, numeric)


def view_training_data(dataset: Dataset, view_id: int, task: Task, tag: str = "train"):
    """Zero-imputed features of one view plus labels for the ``tag`` split."""
    part = dataset.tagged(tag)
    if len(part) == 0:
        raise InputError(f"dataset has no {tag}-tagged collections")
    if not 0 <= view_id < dataset.num_views:
        raise InputError(f"view {view_id} out of range for {dataset.num_views} views")
    X = impute_array(part.features, part.present)[:, view_id]
    return X, part.task_labels(task)


def train(dataset: Dataset, view_id: int, task_id: Task | str, config: TrainConfig = TrainConfig(),
          hidden: Sequence[int] = DEFAULT_HIDDEN) -> InducerModel:
    """Train the classifier for one view and one task on every train collection.

    Collections where the view is missing stay in the training set with zero
    features.  Early stopping uses a holdout carved from the train split.
    """
    task = parse_task(task_id)
    X, y = view_training_data(dataset, view_id, task)
    init_rng = np.random.default_rng([config.rng_seed, 1, view_id, list(Task).index(task)])
    model = init_model(view_id, task, dataset.feature_dim, hidden, init_rng)
    params, history = sgd_fit(model.parameters(), loss_and_grad, loss_only, X, y, config)
    return model.with_parameters(params, history)


def predict_features(model: InducerModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a (B, D) batch of already-imputed view features."""
    return forward(model, np.atleast_2d(features))[1]


def predict(model: InducerModel, collection: Collection) -> np.ndarray:
    """Class probabilities for this model's view of ``collection`` (zero if missing)."""
    view = collection.views[model.view_id]
    x = view.features if view.present else np.zeros_like(view.features)
    return forward(model, x)[1]


def predict_class(model: InducerModel, collection: Collection) -> int:
    return int(np.argmax(predict(model, collection)))
