"""Adam with global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import NonFiniteError, Tensor


@dataclass
class OptState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads.values()])))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        k = max_norm / norm
        return {name: g * k for name, g in grads.items()}, norm
    return dict(grads), norm


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], opt: OptState,
              clip: float | None = 5.0) -> float:
    """Clip, then apply one bias-corrected Adam update in place.

    Returns the pre-clipping global gradient norm. Parameters missing from
    ``grads`` are treated as having zero gradient.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
    grads, norm = clip_by_global_norm(grads, clip)
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    corr1 = 1.0 - b1 ** opt.step
    corr2 = 1.0 - b2 ** opt.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = opt.lr * (m / corr1) / (np.sqrt(v / corr2) + opt.eps)
        p.data -= update.astype(p.data.dtype, copy=False)
    return norm
