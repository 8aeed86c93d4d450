"""Self-supervised training, inference, and the plug-in regularizer for host models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import RngStream, Tensor
from .contrastive import ContrastiveConfig, rml_loss
from .data import MultiViewDataset
from .fusion import FusedBatch, FusionConfig, FusionModel, forward, init_model
from .optim import AdamState, NonFiniteError, TrainConfig, adam_step
from .perturbation import PerturbationConfig, noise_perturb, unusable_perturb

log = logging.getLogger(__name__)


@dataclass
class LossTrace:
    steps: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    rml: list[float] = field(default_factory=list)
    task: list[float] = field(default_factory=list)

    def record(self, epoch: int, rml: float | None, task: float | None = None):
        self.steps.append(len(self.steps))
        self.epochs.append(epoch)
        self.rml.append(float("nan") if rml is None else float(rml))
        if task is not None:
            self.task.append(float(task))

    def __len__(self):
        return len(self.steps)

    @property
    def total(self) -> np.ndarray:
        rml = np.asarray(self.rml)
        if not self.task:
            return rml
        return np.asarray(self.task) + np.nan_to_num(rml)

    def smoothed(self, window: int = 10, values=None) -> np.ndarray:
        return moving_average(self.rml if values is None else values, window)

    def per_epoch(self, values=None) -> np.ndarray:
        vals = np.asarray(self.rml if values is None else values)
        ep = np.asarray(self.epochs)
        return np.array([vals[ep == e].mean() for e in np.unique(ep)])

    def save(self, path) -> None:
        """Two whitespace-separated columns: step, loss (the RML loss, or the total)."""
        vals = self.rml if not self.task else self.total
        with open(path, "w") as fh:
            fh.write("# step loss\n")
            for s, v in zip(self.steps, vals):
                fh.write(f"{s} {v!r}\n")

    @classmethod
    def load(cls, path) -> "LossTrace":
        data = np.loadtxt(path, ndmin=2)
        tr = cls()
        for s, v in data:
            tr.steps.append(int(s))
            tr.epochs.append(0)
            tr.rml.append(float(v))
        return tr


def moving_average(values, window: int = 10) -> np.ndarray:
    """Trailing mean; the first window-1 entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _batches(n: int, size: int, rng: RngStream):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _views(ds: MultiViewDataset, idx, dtype) -> list[np.ndarray]:
    return [np.ascontiguousarray(v[idx], dtype=dtype) for v in ds.views]


@dataclass
class Streams:
    """Independent named streams derived from one master seed."""

    seed: int

    def __post_init__(self):
        root = RngStream(self.seed)
        self.init = root.fork("init")
        self.shuffle = root.fork("shuffle")
        self.perturb = root.fork("perturb")
        self.dropout = root.fork("dropout")
        self.regularizer = root.fork("regularizer")
        self.host = root.fork("host")


def perturbed_pair(model: FusionModel, batch: Sequence, pcfg: PerturbationConfig,
                   perturb_rng: RngStream, dropout_rng: RngStream | None,
                   ablate: tuple = (), training: bool = True):
    """Fuse the noise-perturbed and unusable-perturbed versions of one batch."""
    noisy = batch if "np" in ablate else noise_perturb(batch, pcfg, perturb_rng)[0]
    masked = batch if "mp" in ablate else unusable_perturb(batch, pcfg, perturb_rng)[0]
    z_noise = forward(model, noisy, training, dropout_rng, provenance="noise-perturbed")
    z_mask = forward(model, masked, training, dropout_rng, provenance="unusable-perturbed")
    return z_noise, z_mask


def train_self_supervised(dataset: MultiViewDataset, fusion_cfg: FusionConfig,
                          perturb_cfg: PerturbationConfig, train_cfg: TrainConfig,
                          model: FusionModel | None = None):
    """Minimize the RML loss over freshly perturbed mini-batches.

    Returns ``(model, LossTrace)``; the trace holds one entry per mini-batch.
    """
    if "atten" in train_cfg.ablate:
        fusion_cfg = replace(fusion_cfg, attention=False)
    streams = Streams(train_cfg.seed)
    if model is None:
        model = init_model(fusion_cfg, streams.init)
    dtype = np.dtype(model.cfg.dtype)
    ccfg = ContrastiveConfig(train_cfg.tau)
    batch_n = min(train_cfg.batch_n, dataset.n_samples)
    state = AdamState()
    trace = LossTrace()
    for epoch in range(train_cfg.epochs):
        for b, idx in enumerate(_batches(dataset.n_samples, batch_n, streams.shuffle)):
            batch = _views(dataset, idx, dtype)
            z_n, z_m = perturbed_pair(model, batch, perturb_cfg, streams.perturb,
                                      streams.dropout, train_cfg.ablate)
            loss = rml_loss(z_n, z_m, ccfg)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteError(f"non-finite RML loss at epoch {epoch}, batch {b}")
            model.zero_grad()
            ad.backward(loss)
            adam_step(model.params, state, train_cfg)
            trace.record(epoch, value)
        if epoch % 20 == 0 or epoch == train_cfg.epochs - 1:
            log.info("epoch %d loss %.5f", epoch, trace.rml[-1])
    return model, trace


INFER_BLOCK = 64


def infer(model: FusionModel, data, batch_size: int | None = None) -> FusedBatch:
    """Clean, dropout-free fused representations; consumes no randomness.

    Rows go through the network in zero-padded blocks of ``INFER_BLOCK``
    samples so every GEMM has the same shape whatever ``batch_size`` is;
    BLAS picks different kernels for small matrices, which would otherwise
    change the last bits of a row depending on how the data was batched.
    """
    views = data.views if isinstance(data, MultiViewDataset) else list(data)
    dtype = np.dtype(model.cfg.dtype)
    n = views[0].shape[0]
    step = batch_size or n
    chunks = []
    with ad.no_grad():
        for start in range(0, n, max(step, 1)):
            part = [np.asarray(v[start:start + step], dtype=dtype) for v in views]
            chunks.extend(_infer_blocks(model, part))
    z = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, model.cfg.d), dtype)
    return FusedBatch(Tensor(z), "clean")


def _infer_blocks(model: FusionModel, views: list[np.ndarray]):
    n = views[0].shape[0]
    for start in range(0, n, INFER_BLOCK):
        rows = min(INFER_BLOCK, n - start)
        block = []
        for v in views:
            padded = np.zeros((INFER_BLOCK, v.shape[1]), dtype=v.dtype)
            padded[:rows] = v[start:start + rows]
            block.append(padded)
        yield forward(model, block, training=False).z.data[:rows]


# ----------------------------------------------------------------- regularizer

def regularizer_loss(hidden: Sequence, reg_model: FusionModel, perturb_cfg: PerturbationConfig,
                     tau: float, rng: RngStream, dropout_rng: RngStream | None = None,
                     training: bool = True) -> Tensor:
    """RML loss on a host's per-view hidden representations.

    Gradients reach both the fusion parameters and ``hidden`` (and through it the
    host's representation parameters); nothing else in the host is touched.
    """
    widths = [h.shape[1] for h in hidden]
    if widths != reg_model.cfg.dims:
        raise ad.ShapeError(f"hidden widths {widths} do not match regularizer "
                            f"config dims {reg_model.cfg.dims}")
    z_n, z_m = perturbed_pair(reg_model, list(hidden), perturb_cfg, rng,
                              dropout_rng, training=training)
    return rml_loss(z_n, z_m, ContrastiveConfig(tau))


class LinearAutoencoderHost:
    """Toy host: per-view linear encoders (representation) and decoders (task)."""

    def __init__(self, dims: Sequence[int], hidden: int, rng: RngStream, dtype="float64"):
        self.dims = list(dims)
        self.hidden = hidden
        self.rep = {}
        self.task = {}
        for m, dm in enumerate(self.dims):
            b = 1.0 / np.sqrt(dm)
            self.rep[f"enc.{m}"] = Tensor(rng.generator.uniform(-b, b, (dm, hidden)).astype(dtype),
                                          requires_grad=True, name=f"enc.{m}")
            b = 1.0 / np.sqrt(hidden)
            self.task[f"dec.{m}"] = Tensor(rng.generator.uniform(-b, b, (hidden, dm)).astype(dtype),
                                           requires_grad=True, name=f"dec.{m}")

    def represent(self, batch) -> list[Tensor]:
        return [ad.matmul(Tensor(x), self.rep[f"enc.{m}"]) for m, x in enumerate(batch)]

    def task_loss(self, hidden, batch) -> Tensor:
        total = None
        for m, (h, x) in enumerate(zip(hidden, batch)):
            err = ad.matmul(h, self.task[f"dec.{m}"]) - Tensor(x)
            term = ad.mean(err * err)
            total = term if total is None else total + term
        return total


@dataclass
class HostRun:
    host: LinearAutoencoderHost
    reg_model: FusionModel | None
    trace: LossTrace
    snapshots: list = field(default_factory=list)


def train_host(dataset: MultiViewDataset, train_cfg: TrainConfig, hidden: int = 8,
               regularize: bool = True, perturb_cfg: PerturbationConfig | None = None,
               reg_cfg: FusionConfig | None = None, keep_snapshots: bool = False) -> HostRun:
    """Jointly minimize L_task + lambda * L_RML for the toy autoencoder host.

    The host draws only from its own stream, the regularizer only from its
    own, so switching the regularizer off leaves the host's randomness intact.
    """
    streams = Streams(train_cfg.seed)
    dtype = "float64"
    host = LinearAutoencoderHost(dataset.dims, hidden, streams.host.fork("init"), dtype)
    perturb_cfg = perturb_cfg or PerturbationConfig()
    reg_model = None
    if regularize:
        reg_cfg = reg_cfg or FusionConfig([hidden] * dataset.n_views, d_e=16, d=16,
                                          dtype=dtype)
        reg_model = init_model(reg_cfg, streams.regularizer.fork("init"))
    shuffle = streams.host.fork("shuffle")
    reg_rng = streams.regularizer.fork("perturb")
    drop_rng = streams.regularizer.fork("dropout")
    params = {**host.rep, **host.task}
    if reg_model is not None:
        params.update({f"rml.{k}": v for k, v in reg_model.params.items()})
    state = AdamState()
    run = HostRun(host, reg_model, LossTrace())
    batch_n = min(train_cfg.batch_n, dataset.n_samples)
    for epoch in range(train_cfg.epochs):
        for idx in _batches(dataset.n_samples, batch_n, shuffle):
            batch = _views(dataset, idx, dtype)
            for p in params.values():
                p.zero_grad()
            hid = host.represent(batch)
            task = host.task_loss(hid, batch)
            loss, rml_value = task, None
            if reg_model is not None:
                reg = regularizer_loss(hid, reg_model, perturb_cfg, train_cfg.tau,
                                       reg_rng, drop_rng)
                rml_value = reg.item()
                loss = task + reg * train_cfg.lam
            ad.backward(loss)
            adam_step(params, state, train_cfg)
            run.trace.record(epoch, rml_value, task.item())
            if keep_snapshots:
                run.snapshots.append({k: v.data.copy() for k, v in {**host.rep, **host.task}.items()})
    return run
