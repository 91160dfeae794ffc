"""Synthetic multi-view driver-hand scenarios.

The generator stands in for a four-camera capture rig.  Each collection has a
latent state (a location and a held object per hand); every view either
sees the hands or not, and when it does it reports a noisy feature vector:

    features = sum over tasks of informativeness[view, task] * embedding[task, class]
               + pose_nuisance[view] * pose_map[view] @ pose
               + subject_signature[subject, view] + noise

``pose`` is a per-collection latent vector shared by all views (how the
driver happens to sit).  Each view sees it through its own fixed rotation
inside every task's class subspace, so one view alone confuses pose with
class, while two views together can cancel it.

Visibility depends on where the hands are (``occlusion_matrix``), with an
anti-correlation step that makes a view more likely to be present when the
others have lost the hands.  Missing views are zero-filled.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import LOCATION_CLASSES, OBJECT_CLASSES, SPLITS, TASKS, Dataset, InputError, Task

# Rows: views (dashboard center, dashboard driver, steering wheel, rearview).
# Columns: LH location, RH location, LH object, RH object.
DEFAULT_INFORMATIVENESS = (
    (0.60, 0.90, 0.80, 0.90),
    (0.70, 0.70, 0.80, 0.80),
    (0.80, 0.80, 0.70, 0.70),
    (1.00, 0.80, 1.00, 0.90),
)

# Rows: views.  Columns: SteeringWheel, Lap, Air, Radio, Cupholder.
DEFAULT_OCCLUSION = (
    (0.45, 0.15, 0.10, 0.10, 0.20),
    (0.10, 0.70, 0.15, 0.75, 0.15),
    (0.05, 0.20, 0.55, 0.30, 0.85),
    (0.30, 0.10, 0.45, 0.10, 0.10),
)

# Per-view sensitivity to the latent hand pose shared by all views of a collection.
DEFAULT_POSE_NUISANCE = (1.1, 1.1, 1.1, 0.6)

DEFAULT_LH_PRIORS = (0.50, 0.25, 0.25)
DEFAULT_RH_PRIORS = (0.30, 0.20, 0.20, 0.15, 0.15)

# Rows: location.  Columns: Phone, Beverage, Tablet, None.
DEFAULT_OBJECT_GIVEN_LOCATION = (
    (0.10, 0.10, 0.05, 0.75),
    (0.30, 0.10, 0.40, 0.20),
    (0.50, 0.30, 0.10, 0.10),
    (0.05, 0.05, 0.05, 0.85),
    (0.10, 0.70, 0.05, 0.15),
)


def _tuplize(x):
    if isinstance(x, (list, tuple, np.ndarray)):
        return tuple(_tuplize(v) for v in x)
    return float(x)


@dataclass(frozen=True)
class GenConfig:
    num_subjects: int = 12
    collections_per_subject: int = 400
    num_views: int = 4
    feature_dim: int = 16
    view_informativeness: tuple = DEFAULT_INFORMATIVENESS
    occlusion_matrix: tuple = DEFAULT_OCCLUSION
    visibility_anticorrelation: float = 1.0
    pose_nuisance: tuple = DEFAULT_POSE_NUISANCE
    subject_signature_scale: float = 0.1
    noise_sigma: float = 0.1
    lh_location_priors: tuple = DEFAULT_LH_PRIORS
    rh_location_priors: tuple = DEFAULT_RH_PRIORS
    object_given_location: tuple = DEFAULT_OBJECT_GIVEN_LOCATION
    rng_seed: int = 42

    def __post_init__(self):
        for name in ("view_informativeness", "occlusion_matrix", "pose_nuisance", "lh_location_priors",
                     "rh_location_priors", "object_given_location"):
            object.__setattr__(self, name, _tuplize(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.num_subjects < 1 or self.collections_per_subject < 1:
            raise InputError("need at least one subject and one collection per subject")
        if self.num_views < 1 or self.feature_dim < 1:
            raise InputError("num_views and feature_dim must be positive")
        inf = np.asarray(self.view_informativeness)
        occ = np.asarray(self.occlusion_matrix)
        if inf.shape != (self.num_views, len(TASKS)):
            raise InputError(f"view_informativeness must be {self.num_views}x{len(TASKS)}")
        if occ.shape != (self.num_views, len(LOCATION_CLASSES)):
            raise InputError(f"occlusion_matrix must be {self.num_views}x{len(LOCATION_CLASSES)}")
        for name, a in (("view_informativeness", inf), ("occlusion_matrix", occ),
                        ("visibility_anticorrelation", np.asarray(self.visibility_anticorrelation))):
            if np.any(a < 0) or np.any(a > 1):
                raise InputError(f"{name} values must lie in [0, 1]")
        pose = np.asarray(self.pose_nuisance)
        if pose.shape != (self.num_views,) or np.any(pose < 0):
            raise InputError(f"pose_nuisance must be {self.num_views} non-negative scales")
        if self.subject_signature_scale < 0:
            raise InputError("subject_signature_scale must be >= 0")
        if not self.noise_sigma > 0:
            raise InputError("noise_sigma must be > 0")
        for name, p, k in (("lh_location_priors", self.lh_location_priors, 3),
                           ("rh_location_priors", self.rh_location_priors, 5)):
            _check_distribution(name, np.asarray(p), (k,))
        _check_distribution("object_given_location", np.asarray(self.object_given_location),
                            (len(LOCATION_CLASSES), len(OBJECT_CLASSES)))

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: _listify(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def class_priors(self) -> dict[Task, np.ndarray]:
        """Configured marginal label distribution per task (objects via the location mix)."""
        lh, rh = np.asarray(self.lh_location_priors), np.asarray(self.rh_location_priors)
        obj = np.asarray(self.object_given_location)
        return {Task.LH_LOC: lh, Task.RH_LOC: rh, Task.LH_OBJ: lh @ obj[:3], Task.RH_OBJ: rh @ obj}


def _listify(x):
    if isinstance(x, tuple):
        return [_listify(v) for v in x]
    return x


def _check_distribution(name, p, shape):
    if p.shape != shape or np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
        raise InputError(f"{name} must be probability rows of shape {shape}")


def class_embeddings(feature_dim: int, rng: np.random.Generator) -> dict[Task, np.ndarray]:
    """Unit vectors per (task, class), mutually orthogonal when ``feature_dim`` allows."""
    total = sum(t.spec.num_classes for t in TASKS)
    if feature_dim >= total:
        q, _ = np.linalg.qr(rng.normal(size=(feature_dim, feature_dim)))
        vecs = q.T[:total]
    else:
        vecs = rng.normal(size=(total, feature_dim))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    out, k = {}, 0
    for t in TASKS:
        out[t] = vecs[k:k + t.spec.num_classes]
        k += t.spec.num_classes
    return out


def _random_rotation(k: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(k, k)))
    return q * np.sign(np.diag(r))


def _pose_maps(emb: dict[Task, np.ndarray], d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-view linear maps (N, D, D) from the latent pose to feature space.

    With orthonormal class embeddings each map rotates the pose within every
    task's class subspace independently, so the pose perturbs exactly the
    directions that carry class signal, differently in each view.
    """
    basis = np.concatenate([emb[t] for t in TASKS])
    if basis.shape[0] != d or not np.allclose(basis @ basis.T, np.eye(d), atol=1e-9):
        return np.stack([_random_rotation(d, rng) for _ in range(n)])
    maps = []
    for _ in range(n):
        block = np.zeros((d, d))
        k = 0
        for t in TASKS:
            m = t.spec.num_classes
            block[k:k + m, k:k + m] = _random_rotation(m, rng)
            k += m
        maps.append(basis.T @ block @ basis)
    return np.stack(maps)


def all_masks(num_views: int) -> np.ndarray:
    """Every presence mask over ``num_views`` views, shape (2**N, N)."""
    codes = np.arange(2 ** num_views)
    return ((codes[:, None] >> np.arange(num_views)) & 1).astype(bool)


def mask_distribution(p_present: np.ndarray, anticorrelation: float) -> np.ndarray:
    """Probability of every mask in :func:`all_masks` order, per row of ``p_present``.

    Views start independent with the given presence probabilities; each pair
    of simultaneously missing views divides the mask's weight by
    ``1 + anticorrelation``.  Conditioned on the rest, every other missing view
    therefore multiplies a view's presence odds by ``1 + anticorrelation``.
    """
    masks = all_masks(p_present.shape[-1])
    with np.errstate(divide="ignore"):
        log_on, log_off = np.log(p_present), np.log1p(-p_present)
    # Sum the log factors mask by mask; a matmul would turn 0 * -inf into nan.
    logw = np.where(masks, log_on[..., None, :], log_off[..., None, :]).sum(axis=-1)
    k = (~masks).sum(axis=1)
    logw = logw - np.log1p(anticorrelation) * (k * (k - 1) / 2)
    w = np.exp(logw - logw.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def presence_probabilities(config: GenConfig, lh: np.ndarray, rh: np.ndarray) -> np.ndarray:
    """Independent per-view presence probability, (C, N).

    A view keeps a collection only if it sees both hands.
    """
    occ = np.asarray(config.occlusion_matrix)
    return (1.0 - occ[:, lh].T) * (1.0 - occ[:, rh].T)


def _visibility(config: GenConfig, lh: np.ndarray, rh: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    dist = mask_distribution(presence_probabilities(config, lh, rh),
                             config.visibility_anticorrelation)
    u = rng.random(len(lh))
    pick = (u[:, None] > np.cumsum(dist, axis=1)).sum(axis=1)
    return all_masks(config.num_views)[np.minimum(pick, dist.shape[1] - 1)]


def generate(config: GenConfig = GenConfig()) -> Dataset:
    """Draw a dataset; identical configs give bit-identical datasets."""
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    n, d = config.num_views, config.feature_dim
    c = config.num_subjects * config.collections_per_subject

    emb = class_embeddings(d, rng)
    pose_maps = _pose_maps(emb, d, n, rng)
    signatures = rng.normal(scale=config.subject_signature_scale, size=(config.num_subjects, n, d))

    subjects = np.repeat(np.arange(config.num_subjects), config.collections_per_subject)
    timestamps = np.tile(np.arange(config.collections_per_subject), config.num_subjects)
    obj_table = np.asarray(config.object_given_location)
    lh = rng.choice(3, size=c, p=config.lh_location_priors)
    rh = rng.choice(5, size=c, p=config.rh_location_priors)
    u = rng.random((2, c))
    lh_obj = (u[0][:, None] > np.cumsum(obj_table[lh], axis=1)).sum(axis=1)
    rh_obj = (u[1][:, None] > np.cumsum(obj_table[rh], axis=1)).sum(axis=1)
    labels = np.stack([lh, rh, lh_obj, rh_obj], axis=1)
    labels = np.minimum(labels, [t.spec.num_classes - 1 for t in TASKS])

    present = _visibility(config, lh, rh, rng)

    inf = np.asarray(config.view_informativeness)
    signal = np.zeros((c, n, d))
    for k, t in enumerate(TASKS):
        signal += inf[None, :, k, None] * emb[t][labels[:, k]][:, None, :]
    pose = rng.normal(size=(c, d))
    nuisance = np.asarray(config.pose_nuisance)[None, :, None] * np.einsum("cd,ved->cve", pose, pose_maps)
    noise = rng.normal(scale=config.noise_sigma, size=(c, n, d))
    features = signal + nuisance + signatures[subjects] + noise

    meta = {"gen_config": config.to_dict(),
            "no_view_fraction": float(np.mean(~present.any(axis=1))),
            "complete_fraction": float(np.mean(present.all(axis=1)))}
    return Dataset(features, present, labels, subjects, np.arange(c), timestamps, meta=meta)


def split(dataset: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), mode: str = "random",
          left_out: int | None = None, seed: int = 0) -> Dataset:
    """Tag every collection as train, val or test.

    ``random`` shuffles all collections and cuts them by ``fractions``.
    ``by_subject`` puts every collection of subject ``left_out`` in test and
    splits the remaining ones train/val in the ratio ``fractions[0]:fractions[1]``.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise InputError("fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    tags = np.empty(len(dataset), dtype=object)
    if mode == "random":
        order = rng.permutation(len(dataset))
        n_train = int(round(fr[0] * len(dataset)))
        n_val = int(round(fr[1] * len(dataset)))
        tags[order[:n_train]] = "train"
        tags[order[n_train:n_train + n_val]] = "val"
        tags[order[n_train + n_val:]] = "test"
    elif mode == "by_subject":
        if left_out is None or left_out not in dataset.subjects:
            raise InputError(f"unknown subject {left_out!r}")
        held = dataset.subject_ids == left_out
        tags[held] = "test"
        rest = np.flatnonzero(~held)
        order = rest[rng.permutation(len(rest))]
        val_share = fr[1] / (fr[0] + fr[1]) if fr[0] + fr[1] > 0 else 0.0
        n_val = int(round(val_share * len(rest)))
        tags[order[:n_val]] = "val"
        tags[order[n_val:]] = "train"
    else:
        raise InputError(f"unknown split mode {mode!r}")
    assert set(tags.tolist()) <= set(SPLITS)
    return dataset.with_split(tags)
