import numpy as np
import pytest

from fortune.trace import TraceMatrix

ACCEPTANCE_RESULTS = {}

FORCED_CHANNELS = ("c0", "c1", "hot", "c3", "c4", "c5")


def forced_ranking_corpus(n_benign=8, n_attack=6, T=260, seed=0):
    """Stationary noise channels; attacks raise only 'hot', tenfold."""
    rng = np.random.default_rng(seed)

    def background():
        return 1000 + rng.normal(0, 50, (len(FORCED_CHANNELS), T))

    benign = [TraceMatrix(FORCED_CHANNELS, np.rint(background()), label="benign",
                          source_id=f"b{i}") for i in range(n_benign)]
    attack = []
    for i in range(n_attack):
        v = background()
        v[2, 120:220] *= 10.0
        attack.append(TraceMatrix(FORCED_CHANNELS, np.rint(v), label="attack",
                                  source_id=f"a{i}", attack_span=(120, 220)))
    return benign, attack


@pytest.fixture
def forced_corpus():
    return forced_ranking_corpus()


@pytest.fixture
def record():
    """Record a PASS/FAIL line for an acceptance criterion."""
    def _record(name, ok, detail=""):
        ACCEPTANCE_RESULTS[name] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda n: int(n.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
