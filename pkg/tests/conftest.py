import os

import numpy as np
import pytest

from spikelab.geometry import DomainSpec, Grid, build_mask
from spikelab.system import CouplingMatrix


@pytest.fixture(scope="session", autouse=True)
def _cache_dir(tmp_path_factory):
    old = os.environ.get("NEHARI_CACHE_DIR")
    os.environ["NEHARI_CACHE_DIR"] = str(tmp_path_factory.mktemp("gs_cache"))
    yield
    if old is None:
        os.environ.pop("NEHARI_CACHE_DIR", None)
    else:
        os.environ["NEHARI_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def whole_space_512():
    """Box surrogate, beta = 1, p = 2, L = 24, h = 24/512."""
    from spikelab.groundstate import whole_space

    return whole_space(1.0, 2.0)


@pytest.fixture(scope="session")
def matched_ref():
    from spikelab.solver import matched_reference

    return matched_reference(2.0)


@pytest.fixture(scope="session")
def disk_mask():
    spec = DomainSpec.disk(1.0)
    return build_mask(spec, Grid.fit(spec, 1 / 32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_cm():
    return CouplingMatrix.default()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for rep in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", []):
        for key, value in getattr(rep, "user_properties", []):
            if key == "acceptance" and rep.when == "call":
                lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
