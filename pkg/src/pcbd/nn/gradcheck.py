"""Finite-difference validation of analytic gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Var

REL_STEP = 1e-5
_NOISE_FLOOR = 5e-7  # both gradients below this are treated as agreeing


def grad_check(
    forward: Callable[[], Var],
    blocks: Mapping[str, Var],
    tol: float = 1e-4,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic gradients of a scalar program to central differences.

    `forward` must rebuild the tape from the blocks' current values on each
    call.  Returns a report with the max relative error per block; a block
    passes when that error is <= tol.  For large blocks, `max_elements`
    limits the check to a deterministic random subset.
    """
    for v in blocks.values():
        v.zero_grad()
    loss = forward()
    if loss.value.shape != ():
        raise ValueError("grad_check expects a scalar program")
    loss.backward()
    analytic = {
        name: (np.zeros_like(v.value) if v.grad is None else v.grad.copy())
        for name, v in blocks.items()
    }

    report: dict = {"blocks": {}, "ok": True, "tol": tol}
    for name, v in blocks.items():
        flat = v.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(flat.size, size=max_elements, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in indices:
            orig = flat[i]
            h = REL_STEP * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = forward().item()
            flat[i] = orig - h
            f_minus = forward().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            denom = max(abs(a), abs(fd))
            if denom < _NOISE_FLOOR:
                continue
            worst = max(worst, abs(a - fd) / denom)
        ok = worst <= tol
        report["blocks"][name] = {"max_rel_err": worst, "ok": ok}
        report["ok"] = report["ok"] and ok
    return report
