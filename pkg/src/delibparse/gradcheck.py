"""Finite-difference verification of recorded gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteValue, Tensor


#: coordinates whose analytic AND finite-difference gradients are both below
#: this are inert (e.g. key-projection biases, which softmax shift-invariance
#: cancels exactly, or padding embedding rows); the difference there is pure
#: float noise, so they contribute zero instead of noise over the 1e-8 floor.
DEGENERATE_EPS = 1e-7


def gradcheck(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    samples_per_tensor: int = 4,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare recorded gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph on every call from the shared ``params``.
    Up to ``samples_per_tensor`` coordinates are probed per tensor. Returns
    the max over probes of ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)``,
    counting doubly-degenerate coordinates (see ``DEGENERATE_EPS``) as zero.
    A sign-of-life check still covers them: a genuinely nonzero gradient on
    either side keeps the coordinate in play.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NonFiniteValue("loss is not finite")
    loss.backward()
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
        if p.requires_grad
    }

    worst = 0.0
    for name, p in params.items():
        if not p.requires_grad:
            continue
        flat = p.data.reshape(-1)
        n = flat.size
        count = min(samples_per_tensor, n)
        idxs = rng.choice(n, size=count, replace=False)
        for idx in idxs:
            orig = flat[idx]
            with ag.no_grad():
                flat[idx] = orig + h
                up = float(f().data)
                flat[idx] = orig - h
                down = float(f().data)
                flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteValue(f"non-finite probe at {name}[{idx}]")
            g_fd = (up - down) / (2.0 * h)
            g_ad = grads[name].reshape(-1)[idx]
            if abs(g_ad) < DEGENERATE_EPS and abs(g_fd) < DEGENERATE_EPS:
                continue
            rel = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
            worst = max(worst, rel)
    return worst
