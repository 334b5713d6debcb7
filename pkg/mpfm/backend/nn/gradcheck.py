from collections.abc import Callable, Sequence

import numpy as np

from mpfm.backend.models.errors import GradCheckError
from mpfm.backend.nn.tensor import Tensor, backward


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    atol: float = 1e-9,
) -> float:
    """
    Compare reverse-mode gradients against central differences.

    Returns the max over parameter entries of |analytic - numeric| /
    (|numeric| + 1e-12). Entries whose absolute disagreement is at most
    atol * max(1, |loss|) count as exact, so zero gradients do not report
    rounding noise as relative error.
    """
    base = loss_fn()
    if base.item() != loss_fn().item():
        raise GradCheckError("Loss is not deterministic for fixed parameters")

    # rounding noise of the difference quotient grows with the loss value
    tol = atol * max(1.0, abs(base.item()))
    analytic = backward(base, params)
    worst = 0.0
    for p, grad in zip(params, analytic):
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        grad = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = loss_fn().item()
            flat[i] = original - step
            minus = loss_fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * step)
            diff = abs(grad[i] - numeric)
            if diff <= tol:
                continue
            worst = max(worst, float(diff / (abs(numeric) + 1e-12)))
    return worst
