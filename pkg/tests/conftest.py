import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mvfusion import datagen, evaluator
from mvfusion.core import TASKS
from mvfusion.nn import TrainConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BENCH_SEED = 42


@pytest.fixture(scope="session")
def bench_data():
    """Default benchmark, randomly split 80/10/10 with seed 42."""
    return datagen.split(datagen.generate(datagen.GenConfig(rng_seed=BENCH_SEED)), seed=BENCH_SEED)


BENCH_SECONDS: dict[str, float] = {}


@pytest.fixture(scope="session")
def bench_models(bench_data):
    start = time.perf_counter()
    models = evaluator.train_models(bench_data, TASKS, TrainConfig(rng_seed=BENCH_SEED))
    BENCH_SECONDS["train"] = time.perf_counter() - start
    return models


@pytest.fixture(scope="session")
def bench_reports(bench_data, bench_models):
    """{(task, method, subset): EvalReport} on the benchmark test split."""
    test = bench_data.tagged("test")
    out = {}
    for task in TASKS:
        for r in evaluator.eval_single_views(bench_models.inducers[task], test, task).reports:
            out[(task, r.method, r.subset)] = r
        for subset in evaluator.SUBSETS:
            for r in evaluator.eval_ensembles(bench_models.inducers[task], bench_models.fusion[task],
                                              bench_models.discounts[task], test, task, subset):
                out[(task, r.method, subset)] = r
    return out


@pytest.fixture(scope="session")
def loso_result():
    ds = datagen.generate(datagen.GenConfig(rng_seed=BENCH_SEED))
    return evaluator.loso_crossval(ds, TASKS, k=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_dataset(seed=0, subjects=3, per_subject=40, occlusion=True):
    cfg = datagen.GenConfig(num_subjects=subjects, collections_per_subject=per_subject, rng_seed=seed)
    if not occlusion:
        cfg = cfg.replace(occlusion_matrix=np.zeros((4, 5)))
    return datagen.generate(cfg)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
