"""Shared oracles: naive reference convolution and finite differences.

These stay deliberately independent of the library's fast paths (plain
Python loops, float64) so they can vouch for them.
"""
import numpy as np
import pytest

# One line per acceptance criterion, echoed in the terminal summary where
# pytest's capture cannot swallow it.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    tail = f": {detail}" if detail else ""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}{tail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def conv2d_reference(x, w, b=None, stride=1, padding=1):
    """Direct 6-loop convolution, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    oc, ic, k, _ = w.shape
    assert c == ic
    hp = (h + 2 * padding - k) // stride + 1
    wp = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, oc, hp, wp))
    for ni in range(n):
        for oi in range(oc):
            for yi in range(hp):
                for xi in range(wp):
                    acc = 0.0
                    for ci in range(ic):
                        for ky in range(k):
                            for kx in range(k):
                                acc += (xp[ni, ci, yi * stride + ky, xi * stride + kx]
                                        * w[oi, ci, ky, kx])
                    out[ni, oi, yi, xi] = acc
    if b is not None:
        out += np.asarray(b, dtype=np.float64)[None, :, None, None]
    return out


def numerical_grad(f, x, eps=1e-3):
    """Central-difference gradient of scalar f at array x, float64."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = f(x)
        flat[idx] = orig - eps
        lo = f(x)
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2 * eps)
    return g


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return np.abs(a - b).max(initial=0.0) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
