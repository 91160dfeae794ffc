"""Domain types shared across the package: tasks, collections and datasets.

A :class:`Dataset` keeps its data as stacked numpy arrays (the form every
model consumes); :class:`Collection` objects are materialized on demand for
per-instance operations such as streaming and cascading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FORMAT_VERSION = 1

LOCATION_CLASSES = ("SteeringWheel", "Lap", "Air", "Radio", "Cupholder")
OBJECT_CLASSES = ("Phone", "Beverage", "Tablet", "None")

SPLITS = ("train", "val", "test")


class InputError(ValueError):
    """Raised for malformed inputs: bad dimensions, empty sets, unknown ids."""


class Task(str, Enum):
    LH_LOC = "lh_loc"
    RH_LOC = "rh_loc"
    LH_OBJ = "lh_obj"
    RH_OBJ = "rh_obj"

    @property
    def spec(self) -> "TaskSpec":
        return TASK_SPECS[self]

    @property
    def is_location(self) -> bool:
        return self in (Task.LH_LOC, Task.RH_LOC)


TASKS = tuple(Task)


@dataclass(frozen=True)
class TaskSpec:
    task_id: Task
    classes: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        return self.classes.index(name)


# Radio and Cupholder are reachable by the right hand only.
TASK_SPECS: dict[Task, TaskSpec] = {
    Task.LH_LOC: TaskSpec(Task.LH_LOC, LOCATION_CLASSES[:3]),
    Task.RH_LOC: TaskSpec(Task.RH_LOC, LOCATION_CLASSES),
    Task.LH_OBJ: TaskSpec(Task.LH_OBJ, OBJECT_CLASSES),
    Task.RH_OBJ: TaskSpec(Task.RH_OBJ, OBJECT_CLASSES),
}


def parse_task(value: str | Task) -> Task:
    try:
        return Task(value)
    except ValueError:
        raise InputError(f"unknown task {value!r}") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ViewObservation:
    view_id: int
    features: np.ndarray
    present: bool

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))
        if self.features.ndim != 1:
            raise InputError("view features must be a 1-d vector")


@dataclass(frozen=True, eq=False)
class Collection:
    """One simultaneous multi-view capture of a single event."""

    collection_id: int
    subject_id: int
    views: tuple[ViewObservation, ...]
    labels: Mapping[Task, int]
    timestamp: int = 0

    def __post_init__(self):
        views = tuple(self.views)
        if [v.view_id for v in views] != list(range(len(views))):
            raise InputError("views must carry view_ids 0..N-1 in order")
        dims = {v.features.shape[0] for v in views}
        if len(dims) > 1:
            raise InputError(f"inconsistent feature dims across views: {sorted(dims)}")
        labels = {parse_task(t): int(c) for t, c in self.labels.items()}
        for t, c in labels.items():
            if not 0 <= c < t.spec.num_classes:
                raise InputError(f"label {c} out of range for task {t.value}")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels)

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def feature_dim(self) -> int:
        return self.views[0].features.shape[0]

    @property
    def features(self) -> np.ndarray:
        """Stacked features, shape (N, D)."""
        return np.stack([v.features for v in self.views])

    def availability_mask(self) -> np.ndarray:
        return np.array([v.present for v in self.views], dtype=bool)

    def complete(self) -> bool:
        return all(v.present for v in self.views)


def complete(collection: Collection) -> bool:
    """True iff every view of the collection is present."""
    return collection.complete()


def availability_mask(collection: Collection) -> np.ndarray:
    return collection.availability_mask()


def make_collection(collection_id, subject_id, features, present, labels, timestamp=0) -> Collection:
    """Build a collection from an (N, D) feature array and a length-N mask."""
    features = np.asarray(features, dtype=np.float64)
    present = np.asarray(present, dtype=bool)
    views = tuple(ViewObservation(j, features[j], bool(present[j])) for j in range(len(present)))
    return Collection(int(collection_id), int(subject_id), views, labels, int(timestamp))


@dataclass(frozen=True, eq=False)
class Dataset:
    """A set of collections held as stacked arrays.

    ``features`` has shape (C, N, D), ``present`` (C, N), ``labels`` (C, 4)
    with columns in :data:`TASKS` order.  Missing views are always stored as
    zero vectors; construction enforces it.  ``split`` holds one of
    ``"train"``, ``"val"``, ``"test"`` per collection, or is ``None`` when
    the dataset has not been split yet.
    """

    features: np.ndarray
    present: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    collection_ids: np.ndarray
    timestamps: np.ndarray
    split: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        present = np.asarray(self.present, dtype=bool)
        if features.ndim != 3 or present.shape != features.shape[:2]:
            raise InputError(f"features {features.shape} / present {present.shape} mismatch")
        c = features.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64).reshape(c, len(TASKS))
        for k, t in enumerate(TASKS):
            col = labels[:, k]
            if c and (col.min() < 0 or col.max() >= t.spec.num_classes):
                raise InputError(f"labels out of range for task {t.value}")
        features = np.where(present[..., None], features, 0.0)
        ids = np.asarray(self.collection_ids, dtype=np.int64)
        if len(np.unique(ids)) != c:
            raise InputError("collection ids must be unique")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "present", _frozen(present))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "subject_ids", _frozen(np.asarray(self.subject_ids, dtype=np.int64)))
        object.__setattr__(self, "collection_ids", _frozen(ids))
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype=np.int64)))
        if self.split is not None:
            split = np.asarray(self.split, dtype=object)
            bad = set(split.tolist()) - set(SPLITS)
            if len(split) != c or bad:
                raise InputError(f"invalid split tags {sorted(map(str, bad))}")
            object.__setattr__(self, "split", _frozen(split))
        for a in (self.subject_ids, self.collection_ids, self.timestamps):
            if a.shape != (c,):
                raise InputError("per-collection arrays must have length C")

    @classmethod
    def from_collections(cls, collections: Iterable[Collection], split: Sequence[str] | None = None,
                         meta: dict | None = None) -> "Dataset":
        collections = list(collections)
        if not collections:
            raise InputError("a dataset needs at least one collection")
        n, d = collections[0].num_views, collections[0].feature_dim
        for c in collections:
            if c.num_views != n or c.feature_dim != d:
                raise InputError("all collections must share num_views and feature_dim")
        return cls(
            features=np.stack([c.features for c in collections]),
            present=np.stack([c.availability_mask() for c in collections]),
            labels=np.array([[c.labels[t] for t in TASKS] for c in collections]),
            subject_ids=np.array([c.subject_id for c in collections]),
            collection_ids=np.array([c.collection_id for c in collections]),
            timestamps=np.array([c.timestamp for c in collections]),
            split=None if split is None else np.array(split, dtype=object),
            meta=dict(meta or {}),
        )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_views(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    @property
    def task_specs(self) -> dict[Task, TaskSpec]:
        return TASK_SPECS

    @property
    def subjects(self) -> list[int]:
        return sorted(int(s) for s in np.unique(self.subject_ids))

    def task_labels(self, task: Task) -> np.ndarray:
        return self.labels[:, TASKS.index(parse_task(task))]

    def complete_mask(self) -> np.ndarray:
        return self.present.all(axis=1)

    def complete_fraction(self) -> float:
        return float(self.complete_mask().mean()) if len(self) else 0.0

    def collection(self, i: int) -> Collection:
        return make_collection(
            self.collection_ids[i], self.subject_ids[i], self.features[i], self.present[i],
            {t: int(self.labels[i, k]) for k, t in enumerate(TASKS)}, self.timestamps[i],
        )

    @cached_property
    def collections(self) -> tuple[Collection, ...]:
        return tuple(self.collection(i) for i in range(len(self)))

    def subset(self, index) -> "Dataset":
        """Restrict to a boolean mask or integer index array."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(
            self.features[index], self.present[index], self.labels[index],
            self.subject_ids[index], self.collection_ids[index], self.timestamps[index],
            None if self.split is None else self.split[index], dict(self.meta),
        )

    def with_split(self, split: Sequence[str]) -> "Dataset":
        return Dataset(self.features, self.present, self.labels, self.subject_ids,
                       self.collection_ids, self.timestamps, np.array(split, dtype=object),
                       dict(self.meta))

    def tagged(self, tag: str) -> "Dataset":
        if self.split is None:
            raise InputError("dataset has no split tags")
        return self.subset(self.split == tag)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Structural, bit-exact equality (features compared by value bits)."""
    same_split = (a.split is None and b.split is None) or (
        a.split is not None and b.split is not None and list(a.split) == list(b.split))
    return (
        a.features.shape == b.features.shape
        and a.features.tobytes() == b.features.tobytes()
        and np.array_equal(a.present, b.present)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.subject_ids, b.subject_ids)
        and np.array_equal(a.collection_ids, b.collection_ids)
        and np.array_equal(a.timestamps, b.timestamps)
        and same_split
    )


# -- JSON Lines I/O -------------------------------------------------------------


def collection_to_record(dataset: Dataset, i: int) -> dict:
    rec = {
        "id": int(dataset.collection_ids[i]),
        "subject": int(dataset.subject_ids[i]),
        "t": int(dataset.timestamps[i]),
        "labels": {t.value: int(dataset.labels[i, k]) for k, t in enumerate(TASKS)},
        "views": [
            {"present": bool(dataset.present[i, j]), "f": dataset.features[i, j].tolist()}
            for j in range(dataset.num_views)
        ],
    }
    if dataset.split is not None:
        rec["split"] = str(dataset.split[i])
    return rec


def write_jsonl(dataset: Dataset, path) -> None:
    """Write the dataset as JSON Lines: a header line then one collection per line.

    Floats go through ``repr`` (shortest round-trip form) so reading back is
    bit-exact.
    """
    header = {"num_views": dataset.num_views, "feature_dim": dataset.feature_dim,
              "version": FORMAT_VERSION}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(dataset)):
            fh.write(json.dumps(collection_to_record(dataset, i)) + "\n")


def read_jsonl(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise InputError(f"empty dataset file: {path}")
    header = json.loads(lines[0])
    if header.get("version") != FORMAT_VERSION:
        raise InputError(f"unsupported dataset version {header.get('version')!r}")
    n, d = int(header["num_views"]), int(header["feature_dim"])
    records = [json.loads(ln) for ln in lines[1:]]
    if not records:
        raise InputError(f"dataset file has no collections: {path}")
    c = len(records)
    features = np.zeros((c, n, d))
    present = np.zeros((c, n), dtype=bool)
    labels = np.zeros((c, len(TASKS)), dtype=np.int64)
    splits = []
    for i, rec in enumerate(records):
        if len(rec["views"]) != n:
            raise InputError(f"collection {rec['id']} has {len(rec['views'])} views, expected {n}")
        for j, v in enumerate(rec["views"]):
            if len(v["f"]) != d:
                raise InputError(f"collection {rec['id']} view {j}: feature dim {len(v['f'])} != {d}")
            features[i, j] = v["f"]
            present[i, j] = v["present"]
        for k, t in enumerate(TASKS):
            labels[i, k] = rec["labels"][t.value]
        splits.append(rec.get("split"))
    has_split = [s is not None for s in splits]
    if any(has_split) and not all(has_split):
        raise InputError("split tags must be present on every collection or none")
    return Dataset(
        features, present, labels,
        subject_ids=[r["subject"] for r in records],
        collection_ids=[r["id"] for r in records],
        timestamps=[r.get("t", i) for i, r in enumerate(records)],
        split=splits if all(has_split) else None,
    )
