import pytest

from hiertax.corpus import SyntheticSpec, generate_synthetic, split
from hiertax.model import TrainConfig

TINY = dict(u=16, layers=1, heads=2, max_len=32, batch_size=16, epochs=2)


def tiny_config(**kw) -> TrainConfig:
    return TrainConfig(**{**TINY, **kw})


@pytest.fixture(scope="session")
def separable():
    sc = generate_synthetic(SyntheticSpec(docs=240, leak=1.0, noise=0.0, seed=0))
    train, test = split(sc.records, 0.9, seed=0)
    return sc, train, test


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
