import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def quad_loop_project(L, a):
    """Reference coded-aperture projection with explicit loops, f64 accumulation."""
    S, M, N = a.shape
    _, _, H, W = L.shape
    out = np.zeros((S, H, W))
    for i in range(S):
        for x in range(H):
            for y in range(W):
                acc = 0.0
                for u in range(M):
                    for v in range(N):
                        acc += float(a[i, u, v]) * float(L[u, v, x, y])
                out[i, x, y] = acc
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
