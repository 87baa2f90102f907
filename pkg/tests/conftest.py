import numpy as np
import pytest


def numeric_grad(f, arrays, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. each array (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            hi = f()
            a[idx] = old - eps
            lo = f()
            a[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def kink_free(model, rng):
    """Random biases so no ReLU pre-activation sits exactly on the kink."""
    for p in model.parameters():
        if p.name.endswith("bias"):
            p.data[...] = rng.uniform(0.05, 0.5, size=p.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record a named acceptance check; one PASS/FAIL line per check is printed at the end."""

    def record(name, passed, detail=""):
        _CRITERIA.append((name, bool(passed), detail))
        assert passed, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
