"""Per-frame post-processing of fused predictions.

A stream is a sequence of class-probability vectors, one per frame.  It is
smoothed by a trailing moving average, reduced to the argmax class, and a
counter raises an alert once distraction classes have held for ``T``
consecutive frames.  The cascade runs the held-object model first and only
asks for the hand location when nothing is held.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .core import TASKS, Collection, InputError, Task, parse_task

DEFAULT_WINDOW = 5
DEFAULT_SUSTAIN = 15


def default_distraction_classes(task: Task | str) -> frozenset[int]:
    """Anything but the wheel for locations; any held object for object tasks."""
    task = parse_task(task)
    classes = task.spec.classes
    safe = "SteeringWheel" if task.is_location else "None"
    return frozenset(i for i, c in enumerate(classes) if c != safe)


@dataclass(frozen=True)
class StreamConfig:
    window_size: int = DEFAULT_WINDOW
    sustain_threshold: int = DEFAULT_SUSTAIN
    distraction_classes: Mapping[Task, frozenset[int]] = field(
        default_factory=lambda: {t: default_distraction_classes(t) for t in TASKS})
    cascade_enabled: bool = True

    def __post_init__(self):
        if int(self.window_size) < 1:
            raise InputError("window_size must be >= 1")
        if int(self.sustain_threshold) < 1:
            raise InputError("sustain_threshold must be >= 1")
        classes = {parse_task(t): frozenset(int(i) for i in v)
                   for t, v in dict(self.distraction_classes).items()}
        for t, v in classes.items():
            if any(not 0 <= i < t.spec.num_classes for i in v):
                raise InputError(f"distraction class out of range for {t.value}")
        object.__setattr__(self, "distraction_classes", classes)

    def distracting(self, task: Task | str) -> frozenset[int]:
        task = parse_task(task)
        return self.distraction_classes.get(task, default_distraction_classes(task))


@dataclass(frozen=True)
class AlertEvent:
    timestamp: int
    task_id: Task
    class_index: int
    sustained_frames: int

    def to_dict(self) -> dict:
        return {"frame": self.timestamp, "task": self.task_id.value,
                "class": self.class_index, "sustained_frames": self.sustained_frames}


def _as_stream(stream) -> np.ndarray:
    x = np.asarray(stream, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"expected a (frames, classes) stream, got shape {x.shape}")
    return x


def lowpass(stream, window: int) -> np.ndarray:
    """Trailing moving average: frame t averages the last ``min(t + 1, window)`` frames."""
    if int(window) < 1:
        raise InputError("window must be >= 1")
    x = _as_stream(stream)
    out = np.empty_like(x)
    for t in range(len(x)):
        out[t] = x[max(0, t - window + 1):t + 1].mean(axis=0)
    return out


class AlertCounter:
    """Consecutive-distraction counter for one task; fires once per episode."""

    def __init__(self, task: Task | str, config: StreamConfig):
        self.task = parse_task(task)
        self.threshold = int(config.sustain_threshold)
        self.distracting = config.distracting(self.task)
        self.run = 0
        self.fired = False

    def update(self, frame: int, cls: int) -> AlertEvent | None:
        if int(cls) not in self.distracting:
            self.run, self.fired = 0, False
            return None
        self.run += 1
        if self.run >= self.threshold and not self.fired:
            self.fired = True
            return AlertEvent(frame, self.task, int(cls), self.run)
        return None


def threshold_alerts(classes: Iterable[int], config: StreamConfig,
                     task: Task | str = Task.RH_OBJ) -> list[AlertEvent]:
    """Alerts over a whole sequence of argmax classes.

    Works on run lengths: an episode is a maximal run of distraction frames
    and fires at its ``T``-th frame if it lasts that long.
    """
    task = parse_task(task)
    c = np.asarray(list(classes), dtype=np.int64)
    bad = np.isin(c, sorted(config.distracting(task)))
    T = int(config.sustain_threshold)
    events = []
    t = 0
    while t < len(c):
        if not bad[t]:
            t += 1
            continue
        end = t
        while end < len(c) and bad[end]:
            end += 1
        if end - t >= T:
            k = t + T - 1
            events.append(AlertEvent(k, task, int(c[k]), T))
        t = end
    return events


@dataclass(frozen=True)
class FrameResult:
    frame: int
    task_id: Task
    fused_probs: np.ndarray
    argmax: int
    alert: AlertEvent | None = None

    def to_dict(self) -> dict:
        d = {"frame": self.frame, "task": self.task_id.value,
             "fused_probs": [float(v) for v in self.fused_probs], "argmax": self.argmax}
        if self.alert is not None:
            d["alert"] = self.alert.to_dict()
        return d


class StreamProcessor:
    """Frame-at-a-time filter plus alerting for one task."""

    def __init__(self, task: Task | str, config: StreamConfig = StreamConfig()):
        self.task = parse_task(task)
        self.config = config
        self.buffer: deque[np.ndarray] = deque(maxlen=int(config.window_size))
        self.counter = AlertCounter(self.task, config)
        self.frame = 0

    def push(self, probs) -> FrameResult:
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (self.task.spec.num_classes,):
            raise InputError(f"expected {self.task.spec.num_classes} probabilities, got {p.shape}")
        self.buffer.append(p)
        fused = np.stack(self.buffer).mean(axis=0)
        cls = int(np.argmax(fused))
        res = FrameResult(self.frame, self.task, fused, cls, self.counter.update(self.frame, cls))
        self.frame += 1
        return res


def process_stream(stream, task: Task | str, config: StreamConfig = StreamConfig()):
    """Batch version of :class:`StreamProcessor`: ``(filtered, argmax, alerts)``."""
    filtered = lowpass(stream, config.window_size)
    cls = np.argmax(filtered, axis=1)
    return filtered, cls, threshold_alerts(cls, config, task)


# -- cascade ---------------------------------------------------------------------

Predictor = Callable[[Collection], np.ndarray]


def _predictor(model) -> Predictor:
    if callable(model):
        return model
    from .fusion import FusionModel, fusion_forward
    if isinstance(model, FusionModel):
        return lambda c: fusion_forward(model, c)
    raise InputError(f"cannot predict with {type(model).__name__}")


@dataclass
class Cascade:
    """Object model first; the location model runs only for an empty hand."""

    object_model: object
    location_model: object
    evaluations: int = 0

    def __post_init__(self):
        self._obj = _predictor(self.object_model)
        self._loc = _predictor(self.location_model)
        task = getattr(self.object_model, "task_id", None)
        loc_task = getattr(self.location_model, "task_id", None)
        if task is not None and loc_task is not None:
            if task.is_location or not loc_task.is_location or task.value[:2] != loc_task.value[:2]:
                raise InputError("cascade needs an object model and a location model for the same hand")

    def __call__(self, collection: Collection) -> dict:
        self.evaluations += 1
        obj = int(np.argmax(self._obj(collection)))
        out = {"object": obj, "location": None}
        if obj == NONE_OBJECT:
            self.evaluations += 1
            out["location"] = int(np.argmax(self._loc(collection)))
        return out


NONE_OBJECT = Task.LH_OBJ.spec.index("None")


def cascade(collection: Collection, object_model, location_model) -> dict:
    """One-shot cascade: ``{"object": k, "location": k or None}``."""
    return Cascade(object_model, location_model)(collection)
