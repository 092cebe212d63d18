import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rcmnet.tensor import Tensor, backward, finite_diff_grad  # noqa: E402


def rel_error(analytic, numeric, floor=1e-10):
    """Norm-wise relative error between two gradient estimates."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def grad_check(loss_fn, tensors, h=1e-5, max_probes=None, rng=None, pooled=False):
    """Relative error between backward and central differences over ``tensors``.

    ``loss_fn()`` must rebuild the scalar loss from the current tensor data.
    With ``max_probes``, at most that many randomly chosen elements per
    tensor are probed. The result is the worst per-tensor error, or with
    ``pooled`` one error over all probed entries at once.
    """
    for t in tensors:
        t.grad = None
    backward(loss_fn(), inputs=tensors)
    worst = 0.0
    all_a, all_n = [], []
    for t in tensors:
        analytic = t.grad
        if max_probes is not None and t.size > max_probes:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(t.size, size=max_probes, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
            numeric = finite_diff_grad(lambda _: loss_fn(), t, h, idx)
            analytic = np.array([t.grad[i] for i in idx])
        else:
            numeric = finite_diff_grad(lambda _: loss_fn(), t, h)
        all_a.append(np.ravel(analytic))
        all_n.append(np.ravel(numeric))
        worst = max(worst, rel_error(analytic, numeric))
    if pooled:
        return rel_error(np.concatenate(all_a), np.concatenate(all_n))
    return worst


class Probe:
    """Scalar ``sum(out * W)`` with random W drawn once, so no gradient cancels by symmetry."""

    def __init__(self, rng):
        self.rng = rng
        self.weights = None

    def __call__(self, out: Tensor) -> Tensor:
        if self.weights is None:
            self.weights = self.rng.normal(size=out.shape)
        return (out * self.weights).sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)
