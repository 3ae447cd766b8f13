import numpy as np
import pytest

from decopt.consensus import builtin_graph, make_gossip, metropolis_gossip

W_TWO_NODE = np.array([[0.6, 0.4], [0.4, 0.6]])


@pytest.fixture
def w2():
    return make_gossip(W_TWO_NODE)


@pytest.fixture
def ring4():
    return metropolis_gossip(builtin_graph("ring", 4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gossip_for(n: int):
    """The standard 2-node matrix, or a Metropolis ring."""
    return make_gossip(W_TWO_NODE) if n == 2 else metropolis_gossip(builtin_graph("ring", n))


ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
