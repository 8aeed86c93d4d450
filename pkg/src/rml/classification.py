"""Noise-label classification on top of the fusion network."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import RngStream, Tensor
from .contrastive import ContrastiveConfig, rml_loss
from .data import MultiViewDataset
from .fusion import FusionConfig, FusionModel, forward, init_model
from .metrics import ClassificationReport, classification_metrics
from .optim import AdamState, NonFiniteError, TrainConfig, adam_step
from .perturbation import PerturbationConfig, noise_perturb, unusable_perturb
from .training import LossTrace, Streams, _batches, _views, infer

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-9


class StratificationError(ValueError):
    pass


@dataclass
class ClassifierHead:
    """One linear layer d -> C followed by softmax."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, d: int, n_classes: int, rng: RngStream, dtype="float32"):
        bound = 1.0 / np.sqrt(d)
        w = rng.generator.uniform(-bound, bound, (d, n_classes)).astype(dtype)
        return cls(Tensor(w, requires_grad=True, name="head.w"),
                   Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True, name="head.b"))

    @property
    def params(self) -> dict[str, Tensor]:
        return {"head.w": self.w, "head.b": self.b}

    def __call__(self, z) -> Tensor:
        z = getattr(z, "z", z)
        return ad.softmax_rows(ad.linear(z, self.w, self.b))


@dataclass
class NoisyLabelSet:
    y_true: np.ndarray
    y_noisy: np.ndarray
    noise_rate: float
    corrupted: np.ndarray

    @property
    def flipped_fraction(self) -> float:
        return float(np.mean(self.y_true != self.y_noisy)) if self.y_true.size else 0.0


def make_symmetric_noise(y_true, rho: float, n_classes: int, rng: RngStream) -> NoisyLabelSet:
    """Replace round(rho*N) uniformly chosen labels by uniform draws over all classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"noise rate must lie in [0, 1], got {rho}")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    count = int(round(rho * y_true.size))
    idx = np.sort(rng.choice(y_true.size, count, replace=False)) if count else \
        np.zeros(0, dtype=np.int64)
    y_noisy = y_true.copy()
    y_noisy[idx] = rng.integers(0, n_classes, count)
    return NoisyLabelSet(y_true, y_noisy, rho, idx)


def ce_loss(q, y) -> Tensor:
    """Mean negative log-probability of the labelled class."""
    q = ad.as_tensor(q)
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= q.shape[1]):
        raise ValueError(f"labels must lie in [0, {q.shape[1]})")
    picked = q[np.arange(y.size), y]
    return ad.mean(-ad.log(ad.clip(picked, PROB_FLOOR, 1.0)))


def mce_terms(model: FusionModel, head: ClassifierHead, batch, y, perturb_cfg: PerturbationConfig,
              rng: RngStream, training: bool = False, dropout_rng: RngStream | None = None):
    """Clean, noise-perturbed and unusable-perturbed cross-entropies.

    Returns ``(l_mce, z_noise, z_mask)`` so the perturbed fused batches can be
    reused for the RML term.
    """
    noisy, _ = noise_perturb(batch, perturb_cfg, rng)
    masked, _ = unusable_perturb(batch, perturb_cfg, rng)
    z = forward(model, batch, training, dropout_rng)
    z_n = forward(model, noisy, training, dropout_rng, "noise-perturbed")
    z_m = forward(model, masked, training, dropout_rng, "unusable-perturbed")
    loss = ce_loss(head(z), y) + ce_loss(head(z_n), y) + ce_loss(head(z_m), y)
    return loss, z_n, z_m


def mce_loss(model, head, batch, y, perturb_cfg, rng, training=False, dropout_rng=None) -> Tensor:
    return mce_terms(model, head, batch, y, perturb_cfg, rng, training, dropout_rng)[0]


def stratified_split(labels, train_fraction: float, rng: RngStream,
                     n_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    c = n_classes or int(labels.max()) + 1
    train, test = [], []
    for k in range(c):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(train_fraction * idx.size))
        if cut == 0:
            raise StratificationError(f"class {k} has no samples in the training split")
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass
class ClassificationRun:
    report: ClassificationReport
    model: FusionModel
    head: ClassifierHead
    labels: NoisyLabelSet
    train_idx: np.ndarray
    test_idx: np.ndarray
    trace: LossTrace = field(default_factory=LossTrace)


def predict(model: FusionModel, head: ClassifierHead, data) -> np.ndarray:
    z = infer(model, data)
    with ad.no_grad():
        return head(z).data.argmax(axis=1)


def train_classifier(dataset: MultiViewDataset, noise_rate: float = 0.0, loss_kind: str = "ce",
                     fusion_cfg: FusionConfig | None = None,
                     perturb_cfg: PerturbationConfig | None = None,
                     train_cfg: TrainConfig | None = None, split: float = 0.7) -> ClassificationRun:
    """Train fusion network + head on noisy training labels; score the clean test split.

    The objective is CE (or MCE) plus ``lam`` times the RML loss; with
    ``lam == 0`` the perturbed RML branch is skipped entirely.
    """
    if dataset.labels is None:
        raise ValueError("classification needs a labelled dataset")
    loss_kind = loss_kind.lower()
    if loss_kind not in ("ce", "mce"):
        raise ValueError(f"loss_kind must be 'ce' or 'mce', got {loss_kind!r}")
    train_cfg = train_cfg or TrainConfig()
    perturb_cfg = perturb_cfg or PerturbationConfig()
    fusion_cfg = fusion_cfg or FusionConfig(dataset.dims)
    c = dataset.n_classes
    streams = Streams(train_cfg.seed)
    split_rng = RngStream(train_cfg.seed).fork("split")
    train_idx, test_idx = stratified_split(dataset.labels, split, split_rng, c)
    labels = make_symmetric_noise(dataset.labels[train_idx], noise_rate, c,
                                  RngStream(train_cfg.seed).fork("label-noise"))
    train_ds = dataset.subset(train_idx)
    model = init_model(fusion_cfg, streams.init)
    head = ClassifierHead.init(fusion_cfg.d, c, streams.init.fork("head"), fusion_cfg.dtype)
    params = {**model.params, **head.params}
    dtype = np.dtype(fusion_cfg.dtype)
    ccfg = ContrastiveConfig(train_cfg.tau)
    state = AdamState()
    trace = LossTrace()
    batch_n = min(train_cfg.batch_n, train_ds.n_samples)
    for epoch in range(train_cfg.epochs):
        for idx in _batches(train_ds.n_samples, batch_n, streams.shuffle):
            batch = _views(train_ds, idx, dtype)
            y = labels.y_noisy[idx]
            if loss_kind == "mce":
                task, z_n, z_m = mce_terms(model, head, batch, y, perturb_cfg,
                                           streams.perturb, True, streams.dropout)
            else:
                task = ce_loss(head(forward(model, batch, True, streams.dropout)), y)
                z_n = z_m = None
                if train_cfg.lam > 0:
                    noisy, _ = noise_perturb(batch, perturb_cfg, streams.perturb)
                    masked, _ = unusable_perturb(batch, perturb_cfg, streams.perturb)
                    z_n = forward(model, noisy, True, streams.dropout)
                    z_m = forward(model, masked, True, streams.dropout)
            loss, rml_value = task, None
            if train_cfg.lam > 0:
                reg = rml_loss(z_n, z_m, ccfg)
                rml_value = reg.item()
                loss = task + reg * train_cfg.lam
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"non-finite classification loss at epoch {epoch}")
            for p in params.values():
                p.zero_grad()
            ad.backward(loss)
            adam_step(params, state, train_cfg)
            trace.record(epoch, rml_value, task.item())
    test_ds = dataset.subset(test_idx)
    pred = predict(model, head, test_ds)
    report = classification_metrics(pred, test_ds.labels, c)
    return ClassificationRun(report, model, head, labels, train_idx, test_idx, trace)
