import numpy as np
import pytest

from hrqvae.model import TrainConfig, init_params
from hrqvae.synthdata import HierSpec, gen_paraphrase_analog

ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


TINY = dict(depth=2, codes=4, data_dim=6, sem_dim=3, syn_dim=5, hidden=7, head_hidden=6, batch_size=8)


@pytest.fixture
def tiny_config():
    return TrainConfig(**TINY)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config)


@pytest.fixture(scope="session")
def small_triples():
    spec = HierSpec(levels=2, branching=3, dim=4, scales=(4.0, 1.0))
    return gen_paraphrase_analog(6, spec, 6, 240, seed=5, form_content_correlation=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
