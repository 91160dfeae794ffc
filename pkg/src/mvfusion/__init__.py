"""Multi-view classification with missing views: per-view inducers, voting
ensembles, an end-to-end late-fusion network and streaming post-processing."""

from .core import (
    TASKS,
    Collection,
    Dataset,
    InputError,
    Task,
    ViewObservation,
    availability_mask,
    complete,
    read_jsonl,
    write_jsonl,
)

__version__ = "0.1.0"
