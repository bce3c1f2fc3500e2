import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def central_diff(fn, params: dict, h: float = 1e-5) -> dict:
    """Central finite-difference gradient of scalar fn() wrt each array.

    Mutates the arrays in place while probing and restores them; fn must
    read the same array objects.
    """
    out = {}
    for name, p in params.items():
        fd = np.zeros_like(p, dtype=np.float64)
        flat, fd_flat = p.ravel(), fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * h)
        out[name] = fd
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    diff = float(np.linalg.norm(a - b))
    if diff < 1e-7:  # both effectively zero (e.g. exact-zero gradients)
        return 0.0
    return diff / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
