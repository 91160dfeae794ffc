import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvfusion import fusion
from mvfusion.core import InputError, Task, make_collection
from mvfusion.temporal import (
    NONE_OBJECT,
    Cascade,
    StreamConfig,
    StreamProcessor,
    cascade,
    default_distraction_classes,
    lowpass,
    process_stream,
    threshold_alerts,
)

# A two-class toy task: class 1 is the distraction, class 0 is safe.
D, N = 1, 0


def toy_config(T, W=1):
    return StreamConfig(window_size=W, sustain_threshold=T, distraction_classes={Task.LH_LOC: {1, 2}})


def random_stream(r, frames, m):
    return r.dirichlet(np.ones(m) * 0.3, size=frames)


# -- lowpass ---------------------------------------------------------------------

def test_lowpass_hand_traced():
    out = lowpass([[1, 0], [0, 1], [0, 1]], 2)
    assert out.tolist() == [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]


def test_lowpass_constant_and_identity():
    v = np.tile([0.2, 0.3, 0.5], (7, 1))
    assert np.allclose(lowpass(v, 4), v, rtol=0, atol=1e-15)
    x = random_stream(np.random.default_rng(0), 10, 4)
    assert np.array_equal(lowpass(x, 1), x)


def test_lowpass_warm_up_averages_prefix():
    x = random_stream(np.random.default_rng(1), 6, 3)
    out = lowpass(x, 4)
    for t in range(6):
        assert np.allclose(out[t], x[max(0, t - 3):t + 1].mean(axis=0), rtol=0, atol=1e-15)


@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.integers(1, 8))
def test_lowpass_linearity(seed, a, W):
    r = np.random.default_rng(seed)
    x, y = random_stream(r, 20, 4), random_stream(r, 20, 4)
    lhs = lowpass(a * x + (1 - a) * y, W)
    assert np.allclose(lhs, a * lowpass(x, W) + (1 - a) * lowpass(y, W), atol=1e-12)
    assert np.allclose(lhs.sum(axis=1), 1.0, atol=1e-6)


def test_lowpass_rejects_bad_window():
    with pytest.raises(InputError):
        lowpass([[1.0]], 0)


# -- alerts ----------------------------------------------------------------------

def test_alert_hand_traced():
    alerts = threshold_alerts([D, D, N, D, D, D], toy_config(3), Task.LH_LOC)
    assert [(a.timestamp, a.sustained_frames) for a in alerts] == [(5, 3)]


def test_no_distraction_no_alert():
    assert threshold_alerts([N] * 50, toy_config(1), Task.LH_LOC) == []


def test_threshold_one_fires_on_single_frame():
    alerts = threshold_alerts([N, D, N], toy_config(1), Task.LH_LOC)
    assert [a.timestamp for a in alerts] == [1]


def test_one_alert_per_episode():
    # Distraction class may change within an episode without re-arming.
    alerts = threshold_alerts([1, 2, 1, 2, 1, 2, 0, 1, 1], toy_config(2), Task.LH_LOC)
    assert [a.timestamp for a in alerts] == [1, 8]


def test_default_distraction_classes():
    assert default_distraction_classes(Task.RH_LOC) == frozenset({1, 2, 3, 4})
    assert default_distraction_classes(Task.LH_OBJ) == frozenset({0, 1, 2})


def test_config_validation():
    with pytest.raises(InputError):
        StreamConfig(window_size=0)
    with pytest.raises(InputError):
        StreamConfig(sustain_threshold=0)
    with pytest.raises(InputError):
        StreamConfig(distraction_classes={Task.LH_LOC: {3}})


@given(st.lists(st.integers(0, 2), max_size=200), st.integers(1, 20))
def test_alert_count_bound(classes, T):
    alerts = threshold_alerts(classes, toy_config(T), Task.LH_LOC)
    assert len(alerts) <= math.ceil(len(classes) / T)
    assert all(a.sustained_frames >= T for a in alerts)


def streamed(x, task, config):
    proc = StreamProcessor(task, config)
    results = [proc.push(p) for p in x]
    return results, [r.alert for r in results if r.alert is not None]


def test_streaming_matches_batch_on_fuzz_streams():
    r = np.random.default_rng(77)
    for i in range(20):
        task = list(Task)[i % 4]
        m = task.spec.num_classes
        # Sticky class sequences make long episodes common.
        cls = np.cumsum(r.random(1000) < 0.05) % m
        x = 0.7 * np.eye(m)[cls] + 0.3 * random_stream(r, 1000, m)
        cfg = StreamConfig(window_size=int(r.integers(1, 8)), sustain_threshold=int(r.integers(1, 30)))
        filtered, batch_cls, batch_alerts = process_stream(x, task, cfg)
        results, live_alerts = streamed(x, task, cfg)
        assert live_alerts == batch_alerts
        assert [res.argmax for res in results] == batch_cls.tolist()
        assert np.allclose([res.fused_probs for res in results], filtered, rtol=0, atol=1e-12)


def test_frame_result_record():
    cfg = StreamConfig(window_size=1, sustain_threshold=1)
    res = StreamProcessor(Task.RH_OBJ, cfg).push([0.7, 0.1, 0.1, 0.1])
    d = res.to_dict()
    assert d["argmax"] == 0 and d["alert"]["sustained_frames"] == 1 and d["task"] == "rh_obj"
    with pytest.raises(InputError):
        StreamProcessor(Task.RH_OBJ, cfg).push([0.5, 0.5])


# -- cascade ---------------------------------------------------------------------

LABELS = {"lh_loc": 0, "rh_loc": 0, "lh_obj": 0, "rh_obj": 0}


def onehot(k, m):
    return np.eye(m)[k]


def test_cascade_short_circuits_on_held_object():
    calls = []
    obj = lambda c: onehot(0, 4)  # Phone
    loc = lambda c: calls.append(c) or onehot(2, 5)
    c = make_collection(0, 0, np.zeros((4, 2)), [1, 1, 1, 1], LABELS)
    assert cascade(c, obj, loc) == {"object": 0, "location": None}
    assert calls == []
    casc = Cascade(lambda c: onehot(NONE_OBJECT, 4), loc)
    assert casc(c) == {"object": NONE_OBJECT, "location": 2}
    assert casc.evaluations == 2 and len(calls) == 1


def test_cascade_evaluation_count_on_mixed_stream():
    r = np.random.default_rng(3)
    objects = r.integers(0, 4, size=200)
    frames = [make_collection(i, 0, np.full((4, 2), float(k)), [1] * 4, LABELS)
              for i, k in enumerate(objects)]
    casc = Cascade(lambda c: onehot(int(c.features[0, 0]), 4), lambda c: onehot(1, 5))
    for f in frames:
        casc(f)
    assert casc.evaluations == len(frames) + int(np.sum(objects == NONE_OBJECT))


def test_cascade_accepts_fusion_models_for_one_hand():
    obj = fusion.init_model(Task.RH_OBJ, 4, 3, rng=0)
    loc = fusion.init_model(Task.RH_LOC, 4, 3, rng=1)
    c = make_collection(0, 0, np.ones((4, 3)), [1, 0, 1, 1], LABELS)
    out = cascade(c, obj, loc)
    assert out["object"] == int(np.argmax(fusion.fusion_forward(obj, c)))
    with pytest.raises(InputError):
        Cascade(obj, fusion.init_model(Task.LH_LOC, 4, 3, rng=1))
    with pytest.raises(InputError):
        Cascade(loc, obj)


@given(arrays(np.float64, (30, 5), elements=st.floats(0, 1)), st.integers(1, 10))
def test_filtered_stream_sums_to_one(raw, W):
    x = (raw + 1e-3) / (raw + 1e-3).sum(axis=1, keepdims=True)
    assert np.allclose(lowpass(x, W).sum(axis=1), 1.0, atol=1e-6)
