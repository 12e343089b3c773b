import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wtdebias.data import GeneratorConfig, SplitSpec, fit_bucketing, generate_synthetic, split

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(3000, seed=0, config=GeneratorConfig(skip_prob=0.0))


@pytest.fixture(scope="session")
def small_splits(small_data):
    return split(small_data, SplitSpec(seed=0))


@pytest.fixture(scope="session")
def small_bucketing(small_splits):
    return fit_bucketing(small_splits[0].duration_s, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_bench():
    from wtdebias.benchmarks import build_benchmark
    return build_benchmark("pseudo_balance", n=4000, seed=0)


@pytest.fixture(scope="session")
def tiny_model(tiny_bench):
    from wtdebias.correction import CorrectionConfig, DadfModel, InputScaler
    tr = tiny_bench.batches()[0]
    cfg = CorrectionConfig(K=4, n_features=tr.x.shape[1], n_tasks=tr.out.n_tasks, rep_dim=tr.out.rep_dim,
                           common_dim=tr.out.common_dim)
    m = DadfModel(cfg)
    m.scaler = InputScaler.fit(tr.x, tr.out)
    m.bucketing = tiny_bench.bucketing
    return m


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
