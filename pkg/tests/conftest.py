import pytest

from contractwatch.bench import bundled_source, bundled_traces
from contractwatch.dsl import parse
from contractwatch.engine import InstanceManager

BINDINGS = {"buyer": "alice", "seller": "bob", "validator": "valia"}
TEN_MIN = 600_000


@pytest.fixture(scope="session")
def car_rules():
    return parse(bundled_source())


@pytest.fixture(scope="session")
def traces():
    return {t.name: t for t in bundled_traces()}


@pytest.fixture
def mgr(car_rules):
    m = InstanceManager()
    m.load(car_rules)
    return m


@pytest.fixture
def inst(mgr):
    return mgr.create_instance("car-insurance", BINDINGS, 0)


# acceptance results, filled in by test_acceptance and echoed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
