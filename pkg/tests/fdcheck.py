"""Central finite differences shared by the gradient tests."""
import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """d f / d x at the given flat coordinates (all of them by default). ``x`` is perturbed in place."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)
