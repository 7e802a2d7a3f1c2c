import pytest

from rclab.ratecontrol import RcConfig
from rclab.surrogate import SurrogateParams, generate_corpus, generate_sequence


@pytest.fixture(scope="session")
def params():
    return SurrogateParams()


@pytest.fixture(scope="session")
def rc():
    return RcConfig()


@pytest.fixture(scope="session")
def seq():
    return generate_sequence("unit_00", 11, "steady", n_frames=32)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(5, 2, "steady", n_frames=16)


SUITE_LIMIT_S = 600.0
_start = {}


def pytest_sessionstart(session):
    import time
    _start["t"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    import time
    from acceptance_log import RESULTS, record
    if not RESULTS:
        return
    wall = time.perf_counter() - _start["t"]
    record("C12", wall < SUITE_LIMIT_S, f"suite wall time {wall:.0f}s (limit {SUITE_LIMIT_S:.0f}s)")
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k[1:])):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"{key:>4} {'PASS' if ok else 'FAIL'}  {detail}")
