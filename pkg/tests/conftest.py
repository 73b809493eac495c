import datetime as dt

import pytest

from qforecast.core import EngineConfig, TimedQuery, TimedWorkload, parse_timestamp
from qforecast.templates import TemplateRegistry, templatize


@pytest.fixture
def t0() -> dt.datetime:
    return parse_timestamp("2023-01-25T14:30:00Z")


@pytest.fixture
def registry() -> TemplateRegistry:
    return TemplateRegistry()


@pytest.fixture
def quick_cfg() -> EngineConfig:
    # small windows keep model-training tests fast
    return EngineConfig(k=6, delta_t=600, delta_t_fine=60, horizon_t=1200,
                        max_epochs=8, seed=3)


def make_workload(texts_and_offsets, start) -> TimedWorkload:
    return TimedWorkload([TimedQuery(text, start + dt.timedelta(seconds=off))
                          for text, off in texts_and_offsets])


def bind_all(workload, registry):
    return [templatize(q.text, q.arrival, registry) for q in workload]
