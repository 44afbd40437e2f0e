import numpy as np
import pytest

from cumlr import _backend
from cumlr.data import SyntheticSpec, generate_synthetic

BACKENDS = _backend.available()


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    kern = _backend.load(request.param)
    import cumlr.nn
    import cumlr.optim
    import cumlr.tuner
    for mod in (cumlr.nn, cumlr.optim, cumlr.tuner):
        monkeypatch.setattr(mod, "kernels", kern)
    return kern


@pytest.fixture(scope="session")
def desk_data():
    return generate_synthetic(SyntheticSpec(seed=1))


@pytest.fixture(scope="session")
def tiny_two_class():
    """Learnable by construction: two well separated clusters."""
    return generate_synthetic(SyntheticSpec(num_classes=2, per_class_count=160, feature_dim=8,
                                            cluster_separation=1.5, noise_scale=0.3, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split('criterion', 1)[1].split(':')[0])):
            terminalreporter.write_line(line)
