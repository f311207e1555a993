"""Shared test utilities: central finite differences and small fixtures."""

import numpy as np


def finite_difference(params, loss_fn, h=1e-5):
    """Central differences of ``loss_fn()`` with respect to every entry of ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros(p.shape)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx].copy()
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_errors(analytic, numeric, floor=1e-6):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def assert_gradients_match(params, loss_fn, analytic, h=1e-5, all_tol=1e-3, bulk_tol=1e-4):
    numeric = finite_difference(params, loss_fn, h)
    err = relative_errors(analytic, numeric)
    assert err.max() <= all_tol, f"max relative error {err.max():.3e}"
    assert np.mean(err <= bulk_tol) >= 0.99, f"only {np.mean(err <= bulk_tol):.3f} of coordinates within {bulk_tol}"
    return err.max()


def cosine(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# one line per acceptance check, echoed in the terminal summary by conftest.py
ACCEPTANCE_LINES: list[str] = []


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
