"""Central finite-difference oracle for the autodiff engine (float64)."""
import contextlib

import numpy as np

from assertkit.nn import functional as F

STEP = 1e-4
# at most this fraction of probed coordinates may straddle a kink
MAX_KINK_FRACTION = 0.5


@contextlib.contextmanager
def kink_monitor():
    """Record ReLU sign patterns and max-pool winners of every call.

    Central differences are only meaningful when both stencil points see the
    same piecewise-linear branch; the log lets the caller detect a crossing.
    """
    log = []
    relu, pool = F.relu, F.max_pool2d

    def relu_logged(x):
        log.append((x.data > 0).tobytes())
        return relu(x)

    def pool_logged(x, kernel=2):
        n, c, h, w = x.shape
        ho, wo = h // kernel, w // kernel
        win = x.data[:, :, :ho * kernel, :wo * kernel].reshape(n, c, ho, kernel, wo, kernel)
        log.append(win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1).argmax(-1).tobytes())
        return pool(x, kernel)

    F.relu, F.max_pool2d = relu_logged, pool_logged
    try:
        yield log
    finally:
        F.relu, F.max_pool2d = relu, pool


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def numeric_grad(fn, arr, rng, max_coords=None):
    """d fn / d arr by central differences; fn takes no args and reads ``arr``
    in place. Returns (flat indices, numeric values, smooth flags)."""
    flat = arr.reshape(-1)
    idx = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
    out = np.empty(idx.size)
    smooth = np.ones(idx.size, dtype=bool)
    for j, i in enumerate(idx):
        old = flat[i]
        with kink_monitor() as log_up:
            flat[i] = old + STEP
            up = fn()
        with kink_monitor() as log_down:
            flat[i] = old - STEP
            down = fn()
        flat[i] = old
        out[j] = (up - down) / (2 * STEP)
        smooth[j] = log_up == log_down
    return idx, out, smooth


def check_gradients(loss_fn, tensors, rng, max_coords=40):
    """Worst relative error between analytic and numeric gradients.

    ``loss_fn`` builds a fresh scalar Tensor from ``tensors`` each call.
    Coordinates whose stencil crosses a ReLU/max-pool switch are excluded,
    since the function is not differentiable across that interval.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def value():
        return float(loss_fn().data)

    worst = 0.0
    probed = kinks = 0
    for t, g in zip(tensors, analytic):
        idx, num, smooth = numeric_grad(value, t.data, rng, max_coords)
        probed += idx.size
        kinks += int((~smooth).sum())
        if smooth.any():
            worst = max(worst, relative_error(g.reshape(-1)[idx][smooth], num[smooth]))
    if kinks > MAX_KINK_FRACTION * probed:
        raise AssertionError(f"{kinks} of {probed} probes straddle a kink; redraw the trial inputs")
    return worst


