"""Single imputation: every missing view becomes the all-zero feature vector."""

from __future__ import annotations

import numpy as np

from .core import Collection, ViewObservation

FILL_VALUE = 0.0


def impute(collection: Collection) -> Collection:
    """Return a copy of ``collection`` whose missing views hold zero features.

    Present views and the ``present`` flags are left untouched.
    """
    views = tuple(
        v if v.present else ViewObservation(v.view_id, np.full_like(v.features, FILL_VALUE), False)
        for v in collection.views
    )
    return Collection(collection.collection_id, collection.subject_id, views,
                      collection.labels, collection.timestamp)


def impute_array(features: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Array form of :func:`impute` for (..., N, D) features and (..., N) masks."""
    features = np.asarray(features, dtype=np.float64)
    return np.where(np.asarray(present, dtype=bool)[..., None], features, FILL_VALUE)
