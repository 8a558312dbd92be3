"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np


def grad_check(fn, inputs, eps=1e-5, max_entries=None, rng=None):
    """Compare analytic gradients against central differences.

    `fn(*inputs)` must return ``(loss, grads)`` where `grads` matches
    `inputs` (one array per input, or None for inputs without gradient).
    Returns the maximum relative error over all checked coordinates, where
    the error is ``|a - n| / max(1, |a|, |n|)`` so near-zero gradients are
    compared absolutely.

    `max_entries` caps the number of coordinates probed per input (chosen
    with `rng`), keeping checks on large tensors affordable.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    _, grads = fn(*inputs)
    worst = 0.0
    for i, x in enumerate(inputs):
        if grads[i] is None:
            continue
        g = np.asarray(grads[i], dtype=np.float64)
        if g.shape != x.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, input {x.shape}")
        coords = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(x.size, size=max_entries, replace=False)
        flat = x.ravel()
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi, _ = fn(*inputs)
            flat[c] = orig - eps
            lo, _ = fn(*inputs)
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * eps)
            analytic = g.ravel()[c]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
