"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .engine import Variable, backward
from . import functional as F


def grad_check(op, inputs, step=1e-5, seed=0) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``op`` maps Variables built from ``inputs`` (float64 arrays) to a
    Variable. Non-scalar outputs are contracted with a fixed random probe so
    every output element contributes. The error per element is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    out = op(*[Variable(a) for a in arrays])
    # own stream so the probe never coincides with caller test data
    probe = np.random.default_rng((seed, 7919)).standard_normal(out.shape)

    variables = [Variable(a, requires_grad=True) for a in arrays]
    loss = F.sum(F.mul(op(*variables), probe))
    backward(loss, variables)

    def evaluate():
        return op(*[Variable(a) for a in arrays]).data

    worst = 0.0
    for var, base in zip(variables, arrays):
        numeric = np.zeros_like(base)
        for pos in np.ndindex(base.shape):
            orig = base[pos]
            base[pos] = orig + step
            fp = evaluate()
            base[pos] = orig - step
            fm = evaluate()
            base[pos] = orig
            # difference before contracting: keeps roundoff per element
            numeric[pos] = np.sum(probe * (fp - fm)) / (2 * step)
        a = var.grad
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        if base.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst
