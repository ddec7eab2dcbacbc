import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phdct.geometry import make_phantom, preset, radon_forward
from phdct.noise import scale_attenuation

settings.register_profile("phdct", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("phdct")


@pytest.fixture(scope="session")
def toy_geom():
    return preset("toy", 64)


@pytest.fixture(scope="session")
def toy_phantom(toy_geom):
    img, _ = scale_attenuation(make_phantom(64), toy_geom)
    return img


@pytest.fixture(scope="session")
def toy_sino(toy_geom, toy_phantom):
    return radon_forward(toy_phantom, toy_geom)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, one line per criterion, shown in the terminal summary
VERDICTS: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(n: int, ok: bool, detail: str) -> None:
        VERDICTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, VERDICTS[n]
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(VERDICTS.get(n, f"criterion {n:2d}: FAIL  (errored or not run)"))
