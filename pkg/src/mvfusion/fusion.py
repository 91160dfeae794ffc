"""Late-fusion network over all views.

Each view has its own ReLU trunk and a ReLU dense layer of width F.  The N
per-view features are concatenated in view order and fed to a ReLU fusion
layer of width G, then to a softmax head.  Missing views enter as zero
vectors, so the topology (and forward cost) never depends on availability.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

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
    relu,
    relu_stack_backward,
    relu_stack_forward,
    sgd_fit,
    softmax,
    softmax_xent_grad,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FusionArch:
    trunk_hidden: tuple[int, ...] = (32,)
    view_width: int = 32      # F
    fusion_width: int = 128   # G

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk_hidden"] = list(self.trunk_hidden)
        return d


PRESETS = {
    "desk": FusionArch(),
    "paper": FusionArch(trunk_hidden=(32,), view_width=512, fusion_width=2048),
}


@dataclass(frozen=True, eq=False)
class FusionModel:
    task_id: Task
    num_views: int
    feature_dim: int
    arch: FusionArch
    params: tuple[np.ndarray, ...]
    history: tuple[dict, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "task_id", parse_task(self.task_id))
        params = tuple(np.array(p, dtype=np.float64) for p in self.params)
        expected = param_shapes(self.num_views, self.feature_dim, self.arch,
                                self.task_id.spec.num_classes)
        if [p.shape for p in params] != expected:
            raise InputError("parameter shapes do not match the architecture")
        for p in params:
            if not np.all(np.isfinite(p)):
                raise InputError("non-finite parameters")
            p.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def trunk_layers(self) -> int:
        return len(self.arch.trunk_hidden) + 1

    def parameters(self) -> Params:
        return list(self.params)

    def with_parameters(self, params: Params, history=()) -> "FusionModel":
        return FusionModel(self.task_id, self.num_views, self.feature_dim, self.arch,
                           tuple(params), tuple(history))

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "fusion",
            "task": self.task_id.value,
            "arch": {"num_views": self.num_views, "feature_dim": self.feature_dim,
                     **self.arch.to_dict()},
            "dims": [list(p.shape) for p in self.params],
            "weights": [p.tolist() for p in self.params[0::2]],
            "biases": [p.tolist() for p in self.params[1::2]],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModel":
        if d.get("version") != CHECKPOINT_VERSION or d.get("kind") != "fusion":
            raise InputError("not a version-1 fusion checkpoint")
        a = d["arch"]
        arch = FusionArch(tuple(a["trunk_hidden"]), int(a["view_width"]), int(a["fusion_width"]))
        params = []
        for w, b in zip(d["weights"], d["biases"]):
            params.append(np.array(w, dtype=np.float64).reshape(len(w), -1))
            params.append(np.array(b, dtype=np.float64))
        return cls(d["task"], int(a["num_views"]), int(a["feature_dim"]), arch, tuple(params))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FusionModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def param_shapes(num_views: int, feature_dim: int, arch: FusionArch, num_classes: int) -> list[tuple]:
    """Shapes in parameter order: per view (trunk layers, view layer), then fusion, then head."""
    shapes = []
    widths = [feature_dim, *arch.trunk_hidden, arch.view_width]
    for _ in range(num_views):
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
    shapes += [(num_views * arch.view_width, arch.fusion_width), (arch.fusion_width,)]
    shapes += [(arch.fusion_width, num_classes), (num_classes,)]
    return shapes


def init_model(task: Task, num_views: int, feature_dim: int, arch: FusionArch = FusionArch(),
               rng=None, zero: bool = False) -> FusionModel:
    task = parse_task(task)
    rng = np.random.default_rng(rng)
    params = []
    shapes = param_shapes(num_views, feature_dim, arch, task.spec.num_classes)
    for w_shape, _ in zip(shapes[0::2], shapes[1::2]):
        w, b = dense_init(rng, *w_shape)
        if zero:
            w, b = np.zeros_like(w), np.zeros_like(b)
        params += [w, b]
    return FusionModel(task, num_views, feature_dim, arch, tuple(params))


def _forward(params: Params, X: np.ndarray, trunk_layers: int):
    n = X.shape[1]
    per = 2 * trunk_layers
    view_acts = [relu_stack_forward(params[j * per:(j + 1) * per], X[:, j]) for j in range(n)]
    cat = np.concatenate([acts[-1] for acts in view_acts], axis=1)
    wg, bg, wh, bh = params[n * per:]
    g = relu(cat @ wg + bg)
    return view_acts, cat, g, softmax(g @ wh + bh)


def _loss_and_grad(params: Params, X: np.ndarray, y: np.ndarray, trunk_layers: int):
    n = X.shape[1]
    per = 2 * trunk_layers
    view_acts, cat, g, probs = _forward(params, X, trunk_layers)
    wg, bg, wh, bh = params[n * per:]
    d_logits = softmax_xent_grad(probs, y)
    d_g = (d_logits @ wh.T) * (g > 0)
    d_cat = d_g @ wg.T
    width = cat.shape[1] // n
    grads = []
    for j in range(n):
        gj, _ = relu_stack_backward(params[j * per:(j + 1) * per], view_acts[j],
                                    d_cat[:, j * width:(j + 1) * width])
        grads += gj
    grads += [cat.T @ d_g, d_g.sum(axis=0), g.T @ d_logits, d_logits.sum(axis=0)]
    return cross_entropy(probs, y), grads


def _check_features(model: FusionModel, X: np.ndarray) -> None:
    if X.ndim != 3 or X.shape[1:] != (model.num_views, model.feature_dim):
        raise InputError(f"expected features of shape (B, {model.num_views}, {model.feature_dim}), "
                         f"got {X.shape}")


def loss_and_gradient(model: FusionModel, X, y) -> tuple[float, Params]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_features(model, X)
    check_batch(X, y, model.task_id.spec.num_classes)
    return _loss_and_grad(model.parameters(), X, y, model.trunk_layers)


def fusion_gradient_check(model: FusionModel, X, y, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _, analytic = loss_and_gradient(model, X, y)
    L = model.trunk_layers
    numeric = finite_difference_grads(
        model.parameters(), lambda p: cross_entropy(_forward(p, X, L)[3], y), eps)
    return max_relative_error(analytic, numeric)


def predict_features(model: FusionModel, features, present=None) -> np.ndarray:
    """Probabilities for a (B, N, D) batch; missing views (per ``present``) are zeroed first."""
    X = np.asarray(features, dtype=np.float64)
    _check_features(model, X)
    if present is not None:
        X = impute_array(X, present)
    return _forward(model.parameters(), X, model.trunk_layers)[3]


def fusion_forward(model: FusionModel, collection: Collection) -> np.ndarray:
    X = collection.features[None]
    return predict_features(model, X, collection.availability_mask()[None])[0]


predict = fusion_forward


def fusion_train(dataset: Dataset, task_id: Task | str, config: TrainConfig = TrainConfig(),
                 arch: FusionArch = FusionArch()) -> FusionModel:
    """Train end to end on every train collection, incomplete ones included."""
    task = parse_task(task_id)
    part = dataset.tagged("train")
    if len(part) == 0:
        raise InputError("dataset has no train-tagged collections")
    X = impute_array(part.features, part.present)
    y = part.task_labels(task)
    init_rng = np.random.default_rng([config.rng_seed, 2, list(Task).index(task)])
    model = init_model(task, dataset.num_views, dataset.feature_dim, arch, init_rng)
    L = model.trunk_layers
    params, history = sgd_fit(
        model.parameters(),
        lambda p, Xb, yb: _loss_and_grad(p, Xb, yb, L),
        lambda p, Xb, yb: cross_entropy(_forward(p, Xb, L)[3], yb),
        X, y, config,
    )
    return model.with_parameters(params, history)
