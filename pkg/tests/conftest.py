import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(ok, detail)``; an unrecorded test counts as FAIL."""
    cid = request.node.get_closest_marker("criterion").args[0]
    results = request.config.stash[_RESULTS]

    def record(ok, detail):
        results[cid] = (bool(ok), detail)
        assert ok, f"{cid}: {detail}"

    yield record
    results.setdefault(cid, (False, "did not complete"))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results, key=lambda c: int(c[1:])):
        ok, detail = results[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {cid}: {detail}")
