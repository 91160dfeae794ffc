"""Measurement protocols.

Macro-averaged accuracy, best/worst/average single-view summaries, ensemble
evaluation on complete-only or all collections, and leave-one-subject-out
cross-validation.  Report writers (CSV, JSON, SVG) live at the bottom.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import combiner, datagen, fusion, inducer
from .core import TASKS, Dataset, InputError, Task, parse_task
from .fusion import FusionArch, FusionModel
from .imputer import impute_array
from .inducer import InducerModel
from .nn import TrainConfig

log = logging.getLogger(__name__)

ENSEMBLE_METHODS = ("NaiveVoting", "WMV", "BMC", "WMV+BMC", "LateFusion")
VOTING_METHODS = ENSEMBLE_METHODS[:4]
SUBSETS = ("complete_only", "all")


class EmptySubsetError(InputError):
    """The requested evaluation subset contains no collections."""


def view_method(view_id: int) -> str:
    return f"View{view_id}"


@dataclass(frozen=True, eq=False)
class EvalReport:
    task_id: Task
    method: str
    per_class_accuracy: np.ndarray  # nan where a class has no support
    support: np.ndarray
    macro_accuracy: float
    subset: str = "all"
    fold_id: int | None = None
    complete_fraction: float = float("nan")
    predictions: np.ndarray | None = field(default=None, repr=False)

    @property
    def unsupported_classes(self) -> list[str]:
        return [self.task_id.spec.classes[i] for i in np.flatnonzero(self.support == 0)]

    def rows(self) -> list[dict]:
        return [
            {"task": self.task_id.value, "method": self.method, "subset": self.subset,
             "fold": "" if self.fold_id is None else self.fold_id,
             "class": name, "support": int(self.support[i]),
             "accuracy": "" if self.support[i] == 0 else repr(float(self.per_class_accuracy[i]))}
            for i, name in enumerate(self.task_id.spec.classes)
        ]

    def summary(self) -> dict:
        return {"task": self.task_id.value, "method": self.method, "subset": self.subset,
                "fold": self.fold_id, "macro_accuracy": self.macro_accuracy,
                "complete_fraction": self.complete_fraction,
                "unsupported_classes": self.unsupported_classes}


def macro_accuracy(predictions, labels, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class accuracy and their mean over classes that occur in ``labels``.

    Classes without support get ``nan`` and are left out of the mean.
    """
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    if len(y) == 0:
        raise InputError("macro_accuracy needs at least one prediction")
    if pred.shape != y.shape:
        raise InputError(f"{len(pred)} predictions but {len(y)} labels")
    support = np.bincount(y, minlength=num_classes)
    correct = np.bincount(y[pred == y], minlength=num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, correct / np.maximum(support, 1), np.nan)
    return per_class, float(np.mean(per_class[support > 0]))


def make_report(task: Task, method: str, predictions, labels, subset="all", fold_id=None,
                complete_fraction=float("nan")) -> EvalReport:
    m = task.spec.num_classes
    per_class, macro = macro_accuracy(predictions, labels, m)
    return EvalReport(task, method, per_class, np.bincount(np.asarray(labels), minlength=m),
                      macro, subset, fold_id, complete_fraction, np.asarray(predictions))


# -- trained model bundles -------------------------------------------------------


@dataclass
class TrainedModels:
    """Everything one evaluation needs: per-view inducers, fusion models, WMV discounts."""

    inducers: dict[Task, list[InducerModel]] = field(default_factory=dict)
    fusion: dict[Task, FusionModel] = field(default_factory=dict)
    discounts: dict[Task, combiner.DiscountWeights] = field(default_factory=dict)


def view_probabilities(models: Sequence[InducerModel], dataset: Dataset) -> np.ndarray:
    """Stack every view model's output on its (imputed) view: shape (C, N, M)."""
    X = impute_array(dataset.features, dataset.present)
    return np.stack([inducer.predict_features(m, X[:, m.view_id]) for m in models], axis=1)


def fit_task_discounts(models: Sequence[InducerModel], dataset: Dataset, task: Task):
    val = dataset.tagged("val")
    if len(val) == 0:
        raise InputError("dataset has no val-tagged collections for fitting WMV discounts")
    return combiner.fit_discounts(view_probabilities(models, val), val.task_labels(task))


def train_models(dataset: Dataset, tasks: Iterable[Task] = TASKS, config: TrainConfig = TrainConfig(),
                 arch: FusionArch = FusionArch(), hidden: Sequence[int] = inducer.DEFAULT_HIDDEN,
                 which: str = "all") -> TrainedModels:
    """Train per-view inducers and/or fusion models for each task.

    ``which`` is ``"inducers"``, ``"fusion"`` or ``"all"``.
    """
    out = TrainedModels()
    for task in map(parse_task, tasks):
        if which in ("inducers", "all"):
            out.inducers[task] = [inducer.train(dataset, v, task, config, hidden)
                                  for v in range(dataset.num_views)]
            out.discounts[task] = fit_task_discounts(out.inducers[task], dataset, task)
        if which in ("fusion", "all"):
            out.fusion[task] = fusion.fusion_train(dataset, task, config, arch)
    return out


# -- protocols -------------------------------------------------------------------


@dataclass(frozen=True)
class SingleViewSummary:
    best: float
    worst: float
    average: float
    reports: tuple[EvalReport, ...]


def eval_single_views(models: Sequence[InducerModel], test: Dataset, task: Task | str,
                      fold_id: int | None = None) -> SingleViewSummary:
    """Score each view model on every test collection, blank inputs included."""
    task = parse_task(task)
    if len(test) == 0:
        raise EmptySubsetError("empty test set")
    probs = view_probabilities(models, test)
    y = test.task_labels(task)
    reports = tuple(
        make_report(task, view_method(m.view_id), np.argmax(probs[:, j], axis=-1), y,
                    fold_id=fold_id, complete_fraction=test.complete_fraction())
        for j, m in enumerate(models)
    )
    macros = [r.macro_accuracy for r in reports]
    return SingleViewSummary(max(macros), min(macros), float(np.mean(macros)), reports)


def ensemble_predictions(models: Sequence[InducerModel], fusion_model: FusionModel | None,
                         discounts: combiner.DiscountWeights, data: Dataset,
                         methods: Sequence[str] = ENSEMBLE_METHODS) -> dict[str, np.ndarray]:
    """Predicted class per collection for each requested method."""
    out = {}
    if any(m in VOTING_METHODS for m in methods):
        probs = view_probabilities(models, data)
        P = combiner.bmc_weights(data.present)
        voters = {
            "NaiveVoting": lambda: combiner.naive_vote(probs),
            "WMV": lambda: combiner.wmv(probs, discounts),
            "BMC": lambda: combiner.bmc(probs, P),
            "WMV+BMC": lambda: combiner.wmv_bmc(probs, discounts, P),
        }
        for m in methods:
            if m in voters:
                out[m] = np.asarray(voters[m]()[0])
    if "LateFusion" in methods:
        if fusion_model is None:
            raise InputError("LateFusion requested without a fusion model")
        out["LateFusion"] = np.argmax(fusion.predict_features(fusion_model, data.features,
                                                              data.present), axis=-1)
    return out


def eval_ensembles(models: Sequence[InducerModel], fusion_model: FusionModel | None,
                   discounts: combiner.DiscountWeights, test: Dataset, task: Task | str,
                   subset: str = "all", methods: Sequence[str] = ENSEMBLE_METHODS,
                   fold_id: int | None = None) -> list[EvalReport]:
    """One report per method on all test collections or on the complete ones only."""
    task = parse_task(task)
    if subset not in SUBSETS:
        raise InputError(f"unknown subset {subset!r}")
    if len(test) == 0:
        raise EmptySubsetError("empty test set")
    frac = test.complete_fraction()
    data = test
    if subset == "complete_only":
        data = test.subset(test.complete_mask())
        if len(data) == 0:
            raise EmptySubsetError("no complete collections in the test set")
    preds = ensemble_predictions(models, fusion_model, discounts, data, methods)
    y = data.task_labels(task)
    return [make_report(task, m, preds[m], y, subset, fold_id, frac) for m in methods if m in preds]


@dataclass
class CrossvalResult:
    folds: list[int]
    reports: list[EvalReport]

    def summary(self) -> dict[tuple[str, str], tuple[float, float]]:
        """(task, method) -> (mean, population variance) of fold macro accuracies."""
        grouped: dict[tuple[str, str], list[tuple[int, float]]] = {}
        for r in self.reports:
            grouped.setdefault((r.task_id.value, r.method), []).append((r.fold_id, r.macro_accuracy))
        out = {}
        for key, vals in grouped.items():
            xs = np.array([v for _, v in sorted(vals)])
            out[key] = (float(xs.mean()), float(xs.var()))
        return out


def assert_no_leakage(fold_data: Dataset, left_out: int) -> None:
    seen = set(fold_data.subject_ids[fold_data.split != "test"].tolist())
    tested = set(fold_data.subject_ids[fold_data.split == "test"].tolist())
    if seen & tested or tested != {left_out}:
        raise AssertionError(f"subject leakage in fold for subject {left_out}: "
                             f"train/val {sorted(seen)} vs test {sorted(tested)}")


TrainFn = Callable[[Dataset, Sequence[Task]], TrainedModels]


def loso_crossval(dataset: Dataset, tasks: Iterable[Task | str] = TASKS, k: int | None = None,
                  train_fn: TrainFn | None = None, rotation: Sequence[int] | None = None,
                  methods: Sequence[str] = ENSEMBLE_METHODS, split_seed: int = 0,
                  fractions=(0.8, 0.1, 0.1)) -> CrossvalResult:
    """Leave-one-subject-out cross-validation over ``k`` folds.

    Fold ``i`` holds out subject ``rotation[i]`` (default: the first ``k``
    subjects in id order), retrains every model on the remaining subjects and
    evaluates single views plus ``methods`` on the held-out subject.
    """
    tasks = [parse_task(t) for t in tasks]
    subjects = dataset.subjects
    k = len(subjects) if k is None else int(k)
    if not 1 <= k <= len(subjects):
        raise InputError(f"k={k} folds but only {len(subjects)} subjects")
    rotation = list(subjects[:k] if rotation is None else rotation)
    if len(rotation) != k or len(set(rotation)) != k:
        raise InputError("rotation must list k distinct subjects")
    train_fn = train_fn or (lambda d, ts: train_models(d, ts))
    reports = []
    for fold_id, subj in enumerate(rotation):
        fold = datagen.split(dataset, fractions, mode="by_subject", left_out=subj, seed=split_seed)
        assert_no_leakage(fold, subj)
        log.info("fold %d: holding out subject %d", fold_id, subj)
        models = train_fn(fold, tasks)
        test = fold.tagged("test")
        for task in tasks:
            if task in models.inducers:
                reports += eval_single_views(models.inducers[task], test, task, fold_id).reports
            reports += eval_ensembles(models.inducers.get(task, []), models.fusion.get(task),
                                      models.discounts.get(task), test, task, "all",
                                      [m for m in methods if m != "LateFusion" or task in models.fusion],
                                      fold_id)
    return CrossvalResult(list(range(k)), reports)


# -- report files ----------------------------------------------------------------

CSV_FIELDS = ("task", "method", "subset", "fold", "class", "support", "accuracy")


def write_csv(reports: Iterable[EvalReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerows(r.rows())


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_svg(values: dict[str, float], path, title: str = "macro accuracy") -> None:
    """Horizontal bar chart of label -> value in [0, 1] as a standalone SVG."""
    bar_h, label_w, bar_w = 18, 220, 300
    height = 30 + bar_h * len(values) + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{label_w + bar_w + 60}" height="{height}" '
        'font-family="sans-serif" font-size="12">',
        f'<text x="4" y="16" font-weight="bold">{title}</text>',
    ]
    for i, (label, v) in enumerate(values.items()):
        y = 26 + i * bar_h
        width = max(0.0, min(1.0, float(v))) * bar_w
        parts.append(f'<text x="4" y="{y + 12}">{label}</text>')
        parts.append(f'<rect x="{label_w}" y="{y}" width="{width:.1f}" height="{bar_h - 4}" '
                     'fill="#4a7ab5"/>')
        parts.append(f'<text x="{label_w + width + 4:.1f}" y="{y + 12}">{v:.3f}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
