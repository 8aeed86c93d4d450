"""Simulated noise and unusable-view perturbations of a multi-view batch.

Both operators accept plain arrays or autodiff tensors per view, never modify
their input, and return the realized draw so a perturbation can be replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import RngStream, Tensor


class PerturbationError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    p: float = 0.25
    sigma: float = 0.4
    r: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise PerturbationError(f"p must lie in [0, 1], got {self.p}")
        if not 0.0 <= self.r <= 1.0:
            raise PerturbationError(f"r must lie in [0, 1], got {self.r}")
        if not self.sigma > 0.0:
            raise PerturbationError(f"sigma must be > 0, got {self.sigma}")


@dataclass
class PerturbationDraw:
    """One realized draw for a batch of n samples over V views.

    ``delta`` decides which (sample, view) cells receive noise, ``epsilon``
    holds the noise for those cells only (keyed by (i, m)), and ``mask`` is the
    n x V availability indicator (1 = kept, 0 = zeroed).
    """

    delta: np.ndarray | None = None
    epsilon: dict = field(default_factory=dict)
    mask: np.ndarray | None = None
    p: float = 0.0

    @property
    def noisy_cells(self) -> np.ndarray:
        return self.delta < self.p

    @property
    def dropped_rows(self) -> np.ndarray:
        return np.flatnonzero((self.mask == 0).any(axis=1))


def _dims(batch) -> tuple[int, list[int]]:
    n = batch[0].shape[0]
    return n, [x.shape[1] for x in batch]


def draw_noise(cfg: PerturbationConfig, rng: RngStream, n: int,
               dims: list[int]) -> PerturbationDraw:
    n_views = len(dims)
    delta = rng.uniform((n, n_views))
    eps = {}
    for m, dm in enumerate(dims):
        rows = np.flatnonzero(delta[:, m] < cfg.p)
        if rows.size:
            eps[m] = (rows, rng.normal(cfg.sigma, (rows.size, dm)))
    return PerturbationDraw(delta=delta, epsilon=eps, p=cfg.p)


def draw_unusable(cfg: PerturbationConfig, rng: RngStream, n: int,
                  n_views: int) -> PerturbationDraw:
    mask = np.ones((n, n_views), dtype=np.int8)
    count = int(round(cfg.r * n))
    if count == 0:
        return PerturbationDraw(mask=mask)
    if n_views < 2:
        raise PerturbationError(
            "unusable perturbation with r > 0 needs V >= 2: every sample must keep "
            "at least one view while a fraction r of samples loses one")
    rows = rng.choice(n, count, replace=False)
    for i in np.sort(rows):
        k = int(rng.integers(1, n_views))  # 1..V-1
        mask[i, rng.choice(n_views, k, replace=False)] = 0
    return PerturbationDraw(mask=mask)


def resample(cfg: PerturbationConfig, rng: RngStream, batch_shape) -> PerturbationDraw:
    """Fresh combined draw for a batch of shape (n, [D_1, ..., D_V])."""
    n, dims = batch_shape
    noise = draw_noise(cfg, rng, n, list(dims))
    drop = draw_unusable(cfg, rng, n, len(dims))
    return PerturbationDraw(delta=noise.delta, epsilon=noise.epsilon, mask=drop.mask, p=cfg.p)


def apply_noise(batch, draw: PerturbationDraw) -> list:
    out = []
    for m, x in enumerate(batch):
        if m not in draw.epsilon:
            out.append(x)
            continue
        rows, eps = draw.epsilon[m]
        dtype = x.dtype
        full = np.zeros(x.shape, dtype=dtype)
        full[rows] = eps.astype(dtype)
        out.append(x + full)
    return out


def apply_mask(batch, draw: PerturbationDraw) -> list:
    out = []
    for m, x in enumerate(batch):
        col = draw.mask[:, m]
        if col.all():
            out.append(x)
            continue
        keep = col.astype(x.dtype)[:, None]
        if isinstance(x, Tensor):
            out.append(x * keep)
        else:
            out.append(np.where(keep > 0, x, np.zeros((), dtype=x.dtype)))
    return out


def noise_perturb(batch, cfg: PerturbationConfig, rng: RngStream):
    """Add N(0, sigma^2) noise to each (sample, view) cell with probability p."""
    n, dims = _dims(batch)
    draw = draw_noise(cfg, rng, n, dims)
    return apply_noise(batch, draw), draw


def unusable_perturb(batch, cfg: PerturbationConfig, rng: RngStream):
    """Zero a random non-empty proper subset of views for round(r*n) samples."""
    n, dims = _dims(batch)
    draw = draw_unusable(cfg, rng, n, len(dims))
    return apply_mask(batch, draw), draw
