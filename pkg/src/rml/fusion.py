"""Multi-view transformer fusion network.

Each view of a sample is embedded into a d_e-dimensional token by its own
two-layer perceptron. The V tokens of one sample attend to each other with a
single-head attention block (no positional encoding, no normalization), pass
through a residual feed-forward layer, and are summed and projected to the
fused representation z.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import RngStream, Tensor

CKPT_MAGIC = b"RML-CKPT-1\n"


class ConfigError(ValueError):
    pass


@dataclass
class FusionConfig:
    dims: list[int]
    d_e: int = 256
    d: int = 256
    dropout_rate: float = 0.2
    ffn_hidden: int | None = None
    attention: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        self.dims = [int(x) for x in self.dims]
        if not self.dims:
            raise ConfigError("fusion config needs at least one view (V >= 1)")
        if any(x < 1 for x in self.dims):
            raise ConfigError(f"every view dimension must be >= 1, got {self.dims}")
        if self.d_e < 1 or self.d < 1:
            raise ConfigError(f"d_e and d must be >= 1, got d_e={self.d_e} d={self.d}")
        if self.ffn_hidden is None:
            self.ffn_hidden = self.d_e
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def n_views(self) -> int:
        return len(self.dims)

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: FusionConfig) -> dict[str, tuple]:
    """Name -> shape of every trainable tensor, in a fixed order."""
    shapes: dict[str, tuple] = {}
    for m, dm in enumerate(cfg.dims):
        shapes[f"embed.{m}.w1"] = (dm, dm)
        shapes[f"embed.{m}.b1"] = (dm,)
        shapes[f"embed.{m}.w2"] = (dm, cfg.d_e)
        shapes[f"embed.{m}.b2"] = (cfg.d_e,)
    for name in ("wq", "wk", "wv"):
        shapes[f"attn.{name}"] = (cfg.d_e, cfg.d_e)
    shapes["ffn.w1"] = (cfg.d_e, cfg.ffn_hidden)
    shapes["ffn.b1"] = (cfg.ffn_hidden,)
    shapes["ffn.w2"] = (cfg.ffn_hidden, cfg.d_e)
    shapes["ffn.b2"] = (cfg.d_e,)
    shapes["out.w"] = (cfg.d_e, cfg.d)
    shapes["out.b"] = (cfg.d,)
    return shapes


@dataclass
class FusionModel:
    cfg: FusionConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def astype(self, dtype) -> "FusionModel":
        cfg = FusionConfig(**{**self.cfg.to_dict(), "dtype": np.dtype(dtype).name})
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k)
                  for k, v in self.params.items()}
        return FusionModel(cfg, params)


@dataclass
class AttentionTrace:
    tokens: np.ndarray
    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    scores: np.ndarray
    attended: np.ndarray
    residual: np.ndarray
    encoded: np.ndarray


@dataclass
class FusedBatch:
    z: Tensor
    provenance: str = "clean"

    @property
    def values(self) -> np.ndarray:
        return self.z.data

    def __len__(self):
        return self.z.shape[0]


def init_model(cfg: FusionConfig, rng: RngStream) -> FusionModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            data = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            data = rng.generator.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return FusionModel(cfg, params)


def _check_batch(model: FusionModel, batch: Sequence) -> None:
    cfg = model.cfg
    if len(batch) != cfg.n_views:
        raise ad.ShapeError(f"expected {cfg.n_views} views, got {len(batch)}")
    n = None
    for m, x in enumerate(batch):
        shape = x.shape
        if len(shape) != 2 or shape[1] != cfg.dims[m]:
            raise ad.ShapeError(
                f"view {m}: expected (n, {cfg.dims[m]}) input, got {tuple(shape)}")
        if n is None:
            n = shape[0]
        elif shape[0] != n:
            raise ad.ShapeError(f"view {m} has {shape[0]} rows, view 0 has {n}")


def _as_input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def embed_views(model: FusionModel, batch: Sequence, training: bool = False,
                rng: RngStream | None = None) -> Tensor:
    """Per-view MLP embedding; returns tokens of shape (n, V, d_e)."""
    _check_batch(model, batch)
    p, rate = model.params, model.cfg.dropout_rate
    dtype = np.dtype(model.cfg.dtype)
    tokens = []
    for m, x in enumerate(batch):
        h = ad.linear(_as_input(x, dtype), p[f"embed.{m}.w1"], p[f"embed.{m}.b1"])
        h = ad.dropout(ad.gelu(h), rate, training, rng)
        h = ad.linear(h, p[f"embed.{m}.w2"], p[f"embed.{m}.b2"])
        tokens.append(ad.dropout(h, rate, training, rng))
    return ad.stack(tokens, axis=1)


def attend_and_fuse(model: FusionModel, tokens: Tensor, training: bool = False,
                    rng: RngStream | None = None, trace: bool = False):
    """Sample-level attention over view tokens, residual FFN, sum and project.

    Returns ``(FusedBatch, AttentionTrace | None)``.
    """
    cfg, p = model.cfg, model.params
    tokens = ad.as_tensor(tokens)
    if tokens.ndim != 3 or tokens.shape[2] != cfg.d_e:
        raise ad.ShapeError(f"tokens must be (n, V, {cfg.d_e}), got {tokens.shape}")
    q = ad.linear(tokens, p["attn.wq"])
    k = ad.linear(tokens, p["attn.wk"])
    v = ad.linear(tokens, p["attn.wv"])
    if cfg.attention:
        logits = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(cfg.d_e))
        scores = ad.softmax_rows(logits)
        attended = ad.matmul(scores, v)
    else:
        # ablation: tokens pass through the attention stage unchanged
        n, n_views = tokens.shape[:2]
        scores = Tensor(np.broadcast_to(np.eye(n_views, dtype=tokens.dtype),
                                        (n, n_views, n_views)).copy())
        attended = tokens
    residual = attended + tokens
    hidden = ad.gelu(ad.linear(residual, p["ffn.w1"], p["ffn.b1"]))
    encoded = residual + ad.linear(hidden, p["ffn.w2"], p["ffn.b2"])
    z = ad.linear(ad.tsum(encoded, axis=1), p["out.w"], p["out.b"])
    info = None
    if trace:
        info = AttentionTrace(tokens.data, q.data, k.data, v.data, scores.data,
                              attended.data, residual.data, encoded.data)
    return FusedBatch(z), info


def forward(model: FusionModel, batch: Sequence, training: bool = False,
            rng: RngStream | None = None, provenance: str = "clean") -> FusedBatch:
    tokens = embed_views(model, batch, training, rng)
    fused, _ = attend_and_fuse(model, tokens, training, rng)
    fused.provenance = provenance
    return fused


# ----------------------------------------------------------------- checkpoint

def save_checkpoint(model: FusionModel, path, meta: dict | None = None) -> None:
    """Write config and every parameter as little-endian float64, row-major."""
    entries, blobs, offset = [], [], 0
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.cfg.to_dict(), "tensors": entries,
                         "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, with_meta: bool = False):
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not an RML-CKPT-1 checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        body = fh.read()
    cfg = FusionConfig(**header["config"])
    dtype = np.dtype(cfg.dtype)
    params = {}
    for e in header["tensors"]:
        arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(e["shape"], dtype=int)),
                            offset=e["offset"]).reshape(e["shape"])
        params[e["name"]] = Tensor(arr.astype(dtype), requires_grad=True, name=e["name"])
    expected = param_shapes(cfg)
    if list(params) != list(expected) or any(
            params[k].shape != s for k, s in expected.items()):
        raise ValueError(f"{path}: tensors do not match the stored config")
    model = FusionModel(cfg, params)
    return (model, header.get("meta", {})) if with_meta else model
