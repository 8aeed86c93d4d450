"""Bidirectional InfoNCE alignment between two perturbed fused batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import FusedBatch


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    norm_eps: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _rows(z) -> Tensor:
    if isinstance(z, FusedBatch):
        return z.z
    return ad.as_tensor(z)


def normalize_rows(z: Tensor, eps: float = 0.0) -> Tensor:
    norms = ad.sqrt(ad.tsum(z * z, axis=1, keepdims=True))
    if eps:
        norms = norms + eps
    elif np.any(norms.data == 0):
        bad = np.flatnonzero(norms.data[:, 0] == 0).tolist()
        raise DegenerateInputError(f"zero-norm fused representation in rows {bad}")
    return z / norms


def rml_loss(z_noise, z_mask, cfg: ContrastiveConfig | None = None) -> Tensor:
    """InfoNCE in both directions between row-aligned batches.

    Row i of each batch is the positive pair; every other row of either batch
    is a negative, so each anchor has 2(n-1) negatives. Each direction is
    averaged over n and the two directions are summed.
    """
    cfg = cfg or ContrastiveConfig()
    zn, zm = _rows(z_noise), _rows(z_mask)
    if zn.shape != zm.shape:
        raise ad.ShapeError(f"fused batches differ in shape: {zn.shape} vs {zm.shape}")
    n = zn.shape[0]
    if n == 0:
        raise ValueError("rml_loss needs at least one sample")
    zn = normalize_rows(zn, cfg.norm_eps)
    zm = normalize_rows(zm, cfg.norm_eps)
    # columns ordered [partner batch | own batch] so swapping the arguments
    # swaps the two direction terms exactly
    where = np.concatenate([np.ones((n, n), dtype=bool), ~np.eye(n, dtype=bool)], axis=1)
    total = None
    for anchor, other in ((zn, zm), (zm, zn)):
        cross = ad.matmul(anchor, ad.transpose(other)) * (1.0 / cfg.tau)
        own = ad.matmul(anchor, ad.transpose(anchor)) * (1.0 / cfg.tau)
        lse = ad.logsumexp(ad.concat([cross, own], axis=1), axis=1, where=where)
        positives = cross[np.arange(n), np.arange(n)]
        term = ad.tsum(lse - positives) * (1.0 / n)
        total = term if total is None else total + term
    return total
