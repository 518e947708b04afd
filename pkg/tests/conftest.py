import numpy as np
import pytest

from kinface.codec import make_toy_codec
from kinface.numerics import MlpParams, seeded_rng


@pytest.fixture(scope="session")
def codec():
    return make_toy_codec(0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from kinface.synthetic import make_synthetic_dataset

    root = tmp_path_factory.mktemp("syn10")
    make_synthetic_dataset(root, n_families=10, seed=3)
    return root / "manifest.json"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_net(seed=0, dims=(12, 7, 5), dropout_p=0.25, bias=0.1):
    r = seeded_rng(seed, "net")
    params = MlpParams.init(r, *dims, dropout_p=dropout_p)
    params.b1[:] = bias * r.standard_normal(dims[1])
    params.b2[:] = bias * r.standard_normal(dims[2])
    return params


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
