import numpy as np
import pytest

from pegnn.graph import Graph


def random_graph(rng, n, density=0.4, features=0, connected=False):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < density
    edges = np.stack([iu[keep], ju[keep]], 1)
    if connected:
        order = rng.permutation(n)
        edges = np.concatenate([edges, np.stack([order[:-1], order[1:]], 1)])
    x = rng.standard_normal((n, features)) if features else None
    return Graph.from_edges(n, edges, x)


def random_psd(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(rng.uniform(0, 5, n))
    return (q * lam) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of scalar ``f()`` with respect to every entry of ``arrays``."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def assert_grads_close(analytic, numeric, rtol=1e-5, floor=1e-7):
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = float((err / scale).max()) if err.size else 0.0
        assert worst <= rtol or float(err.max()) <= floor, f"relative error {worst:.2e}"


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
