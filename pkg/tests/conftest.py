import numpy as np
import pytest

from grelu.data import Dataset, gen_ackley, normalize_rows
from grelu.model import NetworkShape, compute_gates, init_network


def make_instance(n=3, d_x=4, d_y=1, m=8, L=3, seed=0):
    """Small random instance: (net, gates, dataset)."""
    rng = np.random.default_rng(1000 + seed)
    X = normalize_rows(rng.standard_normal((n, d_x)))
    Y = rng.standard_normal((n, d_y))
    ds = Dataset(X, Y)
    net = init_network(NetworkShape(d_x, d_y, m, L), seed)
    return net, compute_gates(net, ds.X), ds


@pytest.fixture
def tiny():
    return make_instance()


@pytest.fixture
def ackley16():
    return gen_ackley(16, 8, 0)


ACCEPTANCE = {}


def record(name, ok, detail=""):
    """Print and remember one acceptance verdict."""
    line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE[name] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0].strip("C."))):
            terminalreporter.write_line(ACCEPTANCE[name])
