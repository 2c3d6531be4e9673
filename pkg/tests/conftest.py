import numpy as np
import pytest

from ergmlasso.network import AttributeTable, Network
from ergmlasso.statistics import Edges, Gwesp, ModelSpec


def triangle() -> Network:
    return Network(3, [(0, 1), (1, 2), (0, 2)])


def path3() -> Network:
    return Network(3, [(0, 1), (1, 2)])


def cycle4() -> Network:
    return Network(4, [(0, 1), (1, 2), (2, 3), (0, 3)])


def complete(n: int) -> Network:
    return Network(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def fixture5() -> Network:
    """Five nodes, five edges, one triangle: interior point for (edges, gwesp)."""
    return Network(5, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)])


def random_network(n: int, p: float, seed: int) -> Network:
    rng = np.random.default_rng(seed)
    a = np.triu((rng.random((n, n)) < p).astype(np.uint8), 1)
    return Network.from_adjacency(a + a.T)


@pytest.fixture
def gwesp_spec() -> ModelSpec:
    return ModelSpec.of(Edges(), Gwesp(0.5))


@pytest.fixture
def binary_attrs():
    def make(x):
        t = AttributeTable(len(x))
        t.add_categorical("x", [str(v) for v in x], levels=["0", "1"], reference="0")
        return t
    return make


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line, then assert the outcome."""
    lines = request.config.stash[_ACCEPTANCE]

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
