import pytest

from roadvrp.instance import GeneratorSpec, generate_instance, parse_instance

# shortest paths on the bundled 8-node example: pair -> (edge list, length)
EXAMPLE_SP = {
    (0, 8): ([(0, 6), (6, 7), (7, 8)], 3),
    (8, 0): ([(8, 6), (6, 0)], 2),
    (0, 3): ([(0, 5), (5, 3)], 2),
    (3, 0): ([(3, 5), (5, 0)], 2),
    (0, 1): ([(0, 5), (5, 2), (2, 1)], 3),
    (1, 0): ([(1, 2), (2, 3), (3, 5), (5, 0)], 7),
    (8, 3): ([(8, 6), (6, 0), (0, 5), (5, 3)], 4),
    (3, 8): ([(3, 5), (5, 0), (0, 6), (6, 7), (7, 8)], 5),
    (3, 1): ([(3, 5), (5, 2), (2, 1)], 3),
    (1, 3): ([(1, 2), (2, 3)], 5),
    (1, 8): ([(1, 2), (2, 3), (3, 5), (5, 0), (0, 6), (6, 7), (7, 8)], 10),
    (8, 1): ([(8, 6), (6, 0), (0, 5), (5, 2), (2, 1)], 5),
}

EXPANDED_0_8_3_1_0 = (0, 6, 7, 8, 6, 0, 5, 3, 5, 2, 1, 2, 3, 5, 0)


@pytest.fixture(scope="session")
def fig3():
    return parse_instance("fig3.json")


@pytest.fixture(scope="session")
def grid42():
    return generate_instance(GeneratorSpec(seed=42, customers=10, rows=8, cols=8))


# -- acceptance summary: one line per criterion -------------------------------

_ACCEPT: dict = {}


@pytest.fixture
def criterion(request):
    """Attach a short measurement to the running acceptance check."""
    notes = []
    _ACCEPT.setdefault(request.node.nodeid, {"notes": notes})
    return notes.append


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        _ACCEPT.setdefault(report.nodeid, {"notes": []})["outcome"] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPT:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, info in sorted(_ACCEPT.items(), key=lambda kv: kv[0]):
        name = nodeid.split("::")[-1]
        status = "PASS" if info.get("outcome") == "passed" else "FAIL"
        notes = "; ".join(info["notes"])
        terminalreporter.write_line(f"{status} {name}" + (f" ({notes})" if notes else ""))
