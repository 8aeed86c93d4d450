"""Adam with bias correction, updating autodiff leaves in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    eta: float = 3e-4
    batch_n: int = 256
    epochs: int = 200
    tau: float = 0.5
    lam: float = 1.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ablate: tuple = ()

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"learning rate must be > 0, got {self.eta}")
        if self.batch_n < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_n}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        bad = set(self.ablate) - {"atten", "np", "mp"}
        if bad:
            raise ValueError(f"unknown ablation switches {sorted(bad)}; use atten, np, mp")
        self.ablate = tuple(sorted(set(self.ablate)))


# task-dependent trade-off weights recommended for the regularizer
LAMBDA_PRESETS = {
    "default": 1.0,
    "low-label-noise": 1.0,
    "high-label-noise": 1e3,
    "retrieval": 1e-1,
}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], state: AdamState, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update of every tensor in ``params`` from its ``.grad``."""
    state.t += 1
    t = state.t
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r} at step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = cfg.eta * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p.data -= step.astype(p.dtype, copy=False)
    return state
