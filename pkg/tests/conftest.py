import numpy as np
import pytest
from hypothesis import settings

from crossfuse.config import load_config
from crossfuse.data import generate_synthetic

settings.register_profile("crossfuse", max_examples=40, deadline=None)
settings.load_profile("crossfuse")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk():
    return load_config("desk")


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    """96-sample single-label set at desk shapes, spread over 24 actors."""
    out = tmp_path_factory.mktemp("small")
    return generate_synthetic(out, load_config("desk"), 96, 8, seed=5)


@pytest.fixture(scope="session")
def multilabel_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("ml")
    cfg = load_config("iemocap").replace(**{"audio_seq.tokens": 4, "visual_seq.tokens": 4,
                                            "text.tokens": 5})
    return generate_synthetic(out, cfg, 40, seed=2), cfg


# -- acceptance report -------------------------------------------------------
# Tests marked ``criterion`` get one PASS/FAIL line in the terminal summary.
# A test may attach a measurement with record_property("detail", ...).

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _CRITERIA.append(f"[{status}] {mark.args[0]}" + (f": {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
