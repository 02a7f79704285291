import numpy as np
import pytest


def fd_gradient(fun, x, h=1e-4):
    """Central differences, written separately from the package helper."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fun(x)
        x[i] = old - h
        fm = fun(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)))


def corner_blend(data, p):
    """Brute-force trilinear value: explicit loop over the 8 corners."""
    dims = data.shape
    p = [min(max(float(p[a]), 0.0), dims[a] - 1) for a in range(3)]
    base = [min(int(np.floor(p[a])), dims[a] - 2) if dims[a] > 1 else 0 for a in range(3)]
    total = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                idx, w = [], 1.0
                for a, d in enumerate((dx, dy, dz)):
                    if dims[a] == 1:
                        if d:
                            w = 0.0
                        idx.append(0)
                        continue
                    t = p[a] - base[a]
                    w *= t if d else 1 - t
                    idx.append(base[a] + d)
                total += w * data[tuple(idx)]
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
