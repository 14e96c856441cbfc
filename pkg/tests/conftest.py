import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nasvit.dataset import CLASS_NAMES
from nasvit.synthetic import write_texture_dataset

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def texture_root(tmp_path_factory):
    """100-image, 5-class synthetic texture set at 32x32 (read-only for tests)."""
    root = tmp_path_factory.mktemp("textures")
    write_texture_dataset(root, CLASS_NAMES, per_class=20, size=32, seed=0)
    return root


@pytest.fixture
def small_texture_root(tmp_path):
    """5 images per class; cheap enough to train a couple of epochs on."""
    write_texture_dataset(tmp_path / "data", CLASS_NAMES, per_class=5, size=32, seed=3)
    return tmp_path / "data"


_acceptance: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[number] = (title, "PASS" if report.passed else "FAIL", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, verdict, seconds = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}  ({seconds:.1f} s)")
