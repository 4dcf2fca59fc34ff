"""Central finite-difference oracle for the autodiff core."""

import numpy as np

from pidt import nncore as nn

STEP = 1e-5
# Central differences carry ~1e-10 of round-off. A tensor whose gradient is
# (near) zero, e.g. a key bias that softmax cancels exactly, is compared
# against this fraction of the overall gradient norm instead of its own.
SCALE_FLOOR = 1e-6


def rel_error(a, b, floor=SCALE_FLOOR):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def check(fn, tensors, rng=None, max_entries=40, step=STEP):
    """Largest relative error between reverse-mode and central-difference gradients.

    Args:
        fn: zero-argument callable returning a scalar tensor built from ``tensors``.
        tensors: leaf tensors (``requires_grad``) whose ``.data`` is perturbed in place.
        rng: picks a random subset of entries for large tensors.
        max_entries: entries checked per tensor.

    Returns:
        The worst relative error over the tensors.
    """
    rng = rng or np.random.default_rng(0)
    analytic = nn.grad(fn(), tensors)
    total = np.sqrt(sum(float(np.sum(g.data ** 2)) for g in analytic))
    floor = max(SCALE_FLOOR, SCALE_FLOOR * total)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        fd = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            up = fn().item()
            flat[i] = old - step
            down = fn().item()
            flat[i] = old
            fd[j] = (up - down) / (2 * step)
        worst = max(worst, rel_error(g.data.reshape(-1)[idx], fd, floor))
    return worst
