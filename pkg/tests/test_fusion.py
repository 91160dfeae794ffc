import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvfusion import datagen, evaluator, fusion, inducer
from mvfusion.core import TASKS, InputError, Task, make_collection
from mvfusion.fusion import FusionArch
from mvfusion.imputer import impute
from mvfusion.nn import TrainConfig, cross_entropy, finite_difference_grads

from conftest import tiny_dataset

SMALL = FusionArch(trunk_hidden=(3,), view_width=3, fusion_width=4)
LABELS = {"lh_loc": 1, "rh_loc": 4, "lh_obj": 2, "rh_obj": 3}


def test_zero_model_is_uniform():
    m = fusion.init_model(Task.RH_OBJ, 4, 5, SMALL, zero=True)
    c = make_collection(0, 0, np.ones((4, 5)), [1, 0, 1, 1], LABELS)
    assert np.array_equal(fusion.fusion_forward(m, c), np.full(4, 0.25))


@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-1e3, 1e3)),
       arrays(np.bool_, (2, 3)), st.integers(0, 1000))
def test_outputs_are_distributions(X, present, seed):
    m = fusion.init_model(Task.RH_LOC, 3, 4, SMALL, rng=seed)
    p = fusion.predict_features(m, X, present)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0)


def test_stale_features_do_not_leak():
    m = fusion.init_model(Task.LH_OBJ, 4, 3, SMALL, rng=1)
    base = np.arange(12.0).reshape(4, 3)
    stale = base.copy()
    stale[2] = 99.0
    a = make_collection(0, 0, base, [1, 1, 0, 1], LABELS)
    b = make_collection(0, 0, stale, [1, 1, 0, 1], LABELS)
    assert np.array_equal(fusion.fusion_forward(m, a), fusion.fusion_forward(m, b))
    assert np.array_equal(fusion.fusion_forward(m, b), fusion.fusion_forward(m, impute(b)))


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check(seed):
    r = np.random.default_rng(100 + seed)
    n, d = int(r.integers(2, 5)), int(r.integers(3, 6))
    arch = FusionArch(tuple(int(h) for h in r.integers(2, 5, size=int(r.integers(0, 3)))),
                      int(r.integers(2, 5)), int(r.integers(3, 7)))
    task = TASKS[seed % 4]
    m = fusion.init_model(task, n, d, arch, rng=r)
    X = r.normal(size=(3, n, d)) * (r.random((3, n, 1)) < 0.7)
    y = r.integers(0, task.spec.num_classes, size=3)
    assert fusion.fusion_gradient_check(m, X, y, eps=1e-5) < 1e-4


def test_dead_fusion_layer_has_zero_gradients():
    m = fusion.init_model(Task.LH_LOC, 2, 3, SMALL, rng=0)
    params = m.parameters()
    params[-3] = np.full_like(params[-3], -100.0)  # fusion bias: every unit off
    m = m.with_parameters(params)
    r = np.random.default_rng(0)
    X, y = r.normal(size=(4, 2, 3)), np.array([0, 1, 2, 0])
    _, analytic = fusion.loss_and_gradient(m, X, y)
    numeric = finite_difference_grads(
        m.parameters(), lambda p: cross_entropy(fusion._forward(p, X, m.trunk_layers)[3], y))
    for a, b in zip(analytic[:-2], numeric[:-2]):
        assert np.all(np.abs(a) <= 1e-8) and np.all(np.abs(b) <= 1e-8)


def test_gradient_check_is_repeatable():
    m = fusion.init_model(Task.RH_OBJ, 3, 4, SMALL, rng=5)
    X = np.random.default_rng(5).normal(size=(3, 3, 4))
    y = np.array([0, 3, 1])
    assert fusion.fusion_gradient_check(m, X, y) == fusion.fusion_gradient_check(m, X, y)


def test_training_is_deterministic():
    ds = datagen.split(tiny_dataset(seed=2), seed=0)
    cfg = TrainConfig(max_epochs=4, rng_seed=9)
    a = fusion.fusion_train(ds, Task.LH_OBJ, cfg, SMALL)
    b = fusion.fusion_train(ds, Task.LH_OBJ, cfg, SMALL)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params, b.params))
    assert a.history == b.history


def test_topology_is_fixed_whatever_is_present():
    m = fusion.init_model(Task.RH_LOC, 4, 16, rng=0)
    none = make_collection(0, 0, np.zeros((4, 16)), [0, 0, 0, 0], LABELS)
    p = fusion.fusion_forward(m, none)
    assert p.shape == (5,) and abs(p.sum() - 1) < 1e-12
    shapes = fusion.param_shapes(4, 16, fusion.PRESETS["paper"], 5)
    assert shapes[-4] == (4 * 512, 2048) and shapes[-2] == (2048, 5)


def test_checkpoint_round_trip(tmp_path):
    m = fusion.init_model(Task.LH_LOC, 3, 4, SMALL, rng=3)
    m.save(tmp_path / "f.json")
    back = fusion.FusionModel.load(tmp_path / "f.json")
    assert back.arch == SMALL and back.num_views == 3 and back.feature_dim == 4
    assert all(p.tobytes() == q.tobytes() for p, q in zip(m.params, back.params))
    with pytest.raises(FileNotFoundError):
        fusion.FusionModel.load(tmp_path / "missing.json")
    bad = m.to_dict()
    bad["kind"] = "inducer"
    with pytest.raises(InputError):
        fusion.FusionModel.from_dict(bad)


def test_rejects_wrong_shapes():
    m = fusion.init_model(Task.LH_LOC, 3, 4, SMALL, rng=3)
    with pytest.raises(InputError):
        fusion.predict_features(m, np.zeros((2, 4, 4)))
    with pytest.raises(InputError):
        fusion.FusionModel(Task.LH_LOC, 3, 4, SMALL, m.params[:-1])


def test_beats_best_single_view(bench_reports):
    for task in TASKS:
        best = max(bench_reports[(task, evaluator.view_method(j), "all")].macro_accuracy
                   for j in range(4))
        assert bench_reports[(task, "LateFusion", "all")].macro_accuracy - best >= 0.10


def test_masking_a_view_hurts_fusion_less(bench_data, bench_models):
    """Hide each task's best view everywhere: the fused model loses less than that view's model."""
    test = bench_data.tagged("test")
    hidden = test.present.copy()
    for task in TASKS:
        y = test.task_labels(task)
        m = task.spec.num_classes
        models = bench_models.inducers[task]
        accs = [evaluator.macro_accuracy(np.argmax(p, axis=-1), y, m)[1]
                for p in evaluator.view_probabilities(models, test).transpose(1, 0, 2)]
        j = int(np.argmax(accs))
        masked = hidden.copy()
        masked[:, j] = False
        single_masked = inducer.predict_features(models[j], np.zeros((len(test), test.feature_dim)))
        single_drop = accs[j] - evaluator.macro_accuracy(np.argmax(single_masked, -1), y, m)[1]
        fm = bench_models.fusion[task]
        full = evaluator.macro_accuracy(
            np.argmax(fusion.predict_features(fm, test.features, test.present), -1), y, m)[1]
        less = evaluator.macro_accuracy(
            np.argmax(fusion.predict_features(fm, test.features, masked), -1), y, m)[1]
        assert full - less < single_drop
