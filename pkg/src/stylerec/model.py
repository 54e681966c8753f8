"""Transformer encoder over product sessions with cosine candidate scoring.

The input at each position concatenates a learnable product embedding, a
fixed sinusoidal positional encoding, and (optionally) a 512-dim style
embedding. Stacked encoder blocks apply multi-head self-attention and a
position-wise feed-forward net, each wrapped in dropout, a residual
connection, and layer normalization. The hidden state at the last real
(non-padding) position, projected back to product-embedding size, acts as
the session's history vector; candidates are scored by cosine similarity
against their product embeddings, and training minimizes a pairwise
softmax cross-entropy between the true next product and one sampled
negative.

Design notes. Positions use the fixed sinusoidal encoding and products a
seeded N(0,1) init. The encoder is bidirectional over the prefix (only the
final item is ever predicted, so no causal mask is needed; padding is
still masked). The feed-forward inner layer defaults to 4x the input
width with ReLU.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Dict, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, FormatError, InputError, MaskError, NumericError, ShapeError
from .seeding import SeedStream, rng_for
from .style import STYLE_DIM

DEFAULT_MAX_LEN = 20


@dataclass(frozen=True)
class ModelConfig:
    d_product: int = 128
    d_model: int = 128  # positional-encoding width
    n_blocks: int = 2
    n_heads: int = 2
    d_ffn: int = 0  # 0 selects the 4x input_dim default
    dropout: float = 0.1
    use_style: bool = False
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.d_product < 1 or self.d_model < 1 or self.n_blocks < 1 or self.n_heads < 1:
            raise ConfigError("model dimensions and counts must be positive")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sin/cos pairs, got {self.d_model}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.d_ffn == 0:
            object.__setattr__(self, "d_ffn", 4 * self.input_dim)
        if self.d_ffn < 1:
            raise ConfigError(f"d_ffn must be >= 1, got {self.d_ffn}")
        if self.input_dim % self.n_heads:
            raise ConfigError(
                f"input dim {self.input_dim} not divisible into {self.n_heads} heads")

    @property
    def input_dim(self) -> int:
        return self.d_product + self.d_model + (STYLE_DIM if self.use_style else 0)

    @property
    def head_dim(self) -> int:
        return self.input_dim // self.n_heads

    @classmethod
    def wide(cls, **overrides) -> "ModelConfig":
        """Larger preset: 8 heads and 1024-dim product embeddings."""
        base = dict(n_heads=8, d_product=1024)
        base.update(overrides)
        return cls(**base)

    def to_kv(self) -> str:
        pairs = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            pairs.append(f"{f.name}={v}")
        return "\n".join(pairs)

    @classmethod
    def from_kv(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            if key not in types:
                raise FormatError(f"unknown model config key {key!r}")
            if types[key] == "bool":
                kwargs[key] = value == "true"
            elif types[key] == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)


class ModelParams:
    """Named parameter tensors for one model instance."""

    def __init__(self, config: ModelConfig, catalog_size: int, tensors: Dict[str, T.Tensor]):
        self.config = config
        self.catalog_size = catalog_size
        self.tensors = tensors

    def __getitem__(self, name: str) -> T.Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    @property
    def product_emb(self) -> T.Tensor:
        return self.tensors["product_emb"]

    def l2_norm_squared(self) -> float:
        return float(sum((t.data.astype(np.float64) ** 2).sum() for t in self.tensors.values()))


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """Fixed sinusoid table: even dims sin(pos/10000^(2i/d)), odd dims cos."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs even d_model, got {d_model}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.empty((max_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def init_product_embeddings(catalog_size: int, d_product: int, seed: int) -> np.ndarray:
    """[(P+1) x d_product] table, rows 1..P standard normal, row 0 zeros."""
    if catalog_size < 1:
        raise ConfigError(f"catalog_size must be >= 1, got {catalog_size}")
    table = np.zeros((catalog_size + 1, d_product))
    table[1:] = rng_for(seed, "product-emb").standard_normal((catalog_size, d_product))
    return table


def init_params(config: ModelConfig, catalog_size: int, seed: int,
                dtype=np.float32) -> ModelParams:
    """Seeded parameter init; weight matrices scale by 1/sqrt(fan_in)."""
    d = config.input_dim
    tensors: Dict[str, T.Tensor] = {}

    def param(name, array):
        tensors[name] = T.Tensor(np.asarray(array, dtype=dtype), requires_grad=True)

    def weight(name, rows, cols):
        w = rng_for(seed, "param", name).standard_normal((rows, cols)) / np.sqrt(rows)
        param(name, w)

    param("product_emb", init_product_embeddings(catalog_size, config.d_product, seed))
    for b in range(config.n_blocks):
        for h in range(config.n_heads):
            for kind in ("wq", "wk", "wv"):
                weight(f"block{b}.head{h}.{kind}", d, config.head_dim)
        weight(f"block{b}.wo", d, d)
        weight(f"block{b}.ffn.w1", d, config.d_ffn)
        param(f"block{b}.ffn.b1", np.zeros(config.d_ffn))
        weight(f"block{b}.ffn.w2", config.d_ffn, d)
        param(f"block{b}.ffn.b2", np.zeros(d))
        for ln in ("ln1", "ln2"):
            param(f"block{b}.{ln}.gamma", np.ones(d))
            param(f"block{b}.{ln}.beta", np.zeros(d))
    weight("w_out", d, config.d_product)
    return ModelParams(config, catalog_size, tensors)


def _check_ids_mask(ids: np.ndarray, mask: np.ndarray, catalog_size: int) -> Tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=bool)
    if ids.ndim != 2:
        raise ShapeError(f"session batch must be [B, L], got {ids.shape}")
    if mask.shape != ids.shape:
        raise MaskError(f"mask shape {mask.shape} does not match ids {ids.shape}")
    if ids.size and int(ids.max()) > catalog_size:
        raise InputError(f"unknown product id {int(ids.max())} (catalog has {catalog_size})")
    if ids.size and int(ids.min()) < 0:
        raise InputError(f"negative product id {int(ids.min())}")
    # validity must be a prefix: padding only ever follows real items
    if np.any(mask[:, 1:] & ~mask[:, :-1]):
        raise MaskError("validity mask must be contiguous from position 0")
    if np.any(ids[mask] == 0) or np.any(ids[~mask] != 0):
        raise MaskError("mask must flag exactly the non-padding (nonzero id) positions")
    return ids, mask


def build_input(ids: np.ndarray, mask: np.ndarray, params: ModelParams,
                pos_enc: np.ndarray, style_table: Optional[np.ndarray] = None) -> T.Tensor:
    """Concatenate product, positional, and optional style embeddings.

    ``ids``/``mask`` are [B, L]; the result is [B, L, input_dim]. Padding
    positions pick up zero product/style rows but real positional rows.
    """
    cfg = params.config
    ids, mask = _check_ids_mask(ids, mask, params.catalog_size)
    if cfg.use_style and style_table is None:
        raise ContractError("use_style is on but no style table was provided")
    if not cfg.use_style and style_table is not None:
        raise ContractError("style table provided but use_style is off")
    b, length = ids.shape
    if length > pos_enc.shape[0]:
        raise ShapeError(f"session length {length} exceeds positional table {pos_enc.shape[0]}")
    dtype = params.product_emb.dtype
    parts = [T.embedding_lookup(params.product_emb, ids)]
    pe = np.broadcast_to(pos_enc[:length].astype(dtype), (b, length, cfg.d_model))
    parts.append(T.Tensor(pe.copy()))
    if cfg.use_style:
        if style_table.shape != (params.catalog_size + 1, STYLE_DIM):
            raise ShapeError(f"style table shape {style_table.shape}, expected "
                             f"{(params.catalog_size + 1, STYLE_DIM)}")
        parts.append(T.embedding_lookup(T.Tensor(style_table.astype(dtype)), ids))
    return T.concat_last_dim(parts)


def multi_head_attention(h: T.Tensor, params: ModelParams, block: int,
                         mask: np.ndarray) -> T.Tensor:
    """Self-attention with per-head projections, masked padding keys.

    Scores scale by 1/sqrt(input_dim/n_heads); padding keys get exactly
    zero weight; head outputs concatenate and project through W^O.
    """
    cfg = params.config
    if h.data.ndim != 3 or h.shape[-1] != cfg.input_dim:
        raise ShapeError(f"attention input must be [B, L, {cfg.input_dim}], got {h.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != h.shape[:2]:
        raise MaskError(f"mask shape {mask.shape} does not match input {h.shape}")
    if not mask.any(axis=1).all():
        raise MaskError("a session in the batch has no valid positions")
    key_mask = mask[:, None, :]  # broadcast over query positions
    scaling = 1.0 / np.sqrt(cfg.head_dim)
    heads = []
    for i in range(cfg.n_heads):
        q = T.matmul(h, params[f"block{block}.head{i}.wq"])
        k = T.matmul(h, params[f"block{block}.head{i}.wk"])
        v = T.matmul(h, params[f"block{block}.head{i}.wv"])
        scores = T.scale(T.matmul(q, T.transpose(k)), scaling)
        weights = T.softmax(scores, axis=-1, mask=key_mask)
        heads.append(T.matmul(weights, v))
    return T.matmul(T.concat_last_dim(heads), params[f"block{block}.wo"])


def transformer_block(h: T.Tensor, params: ModelParams, block: int, mask: np.ndarray,
                      training: bool = False, seeds: Optional[SeedStream] = None) -> T.Tensor:
    """One encoder block: MHA and FFN sublayers, each with dropout,
    residual connection, and layer normalization."""
    cfg = params.config
    mode = "train" if training else "eval"
    if training and cfg.dropout > 0.0 and seeds is None:
        raise ContractError("training with dropout needs a seed stream")

    def drop(x):
        seed = seeds.next_seed() if training and cfg.dropout > 0.0 else None
        return T.dropout(x, cfg.dropout, seed=seed, mode=mode)

    att = multi_head_attention(h, params, block, mask)
    h1 = T.layer_norm(T.add(h, drop(att)),
                      params[f"block{block}.ln1.gamma"], params[f"block{block}.ln1.beta"])
    inner = T.relu(T.add(T.matmul(h1, params[f"block{block}.ffn.w1"]),
                         params[f"block{block}.ffn.b1"]))
    ffn = T.add(T.matmul(inner, params[f"block{block}.ffn.w2"]),
                params[f"block{block}.ffn.b2"])
    return T.layer_norm(T.add(h1, drop(ffn)),
                        params[f"block{block}.ln2.gamma"], params[f"block{block}.ln2.beta"])


def encode(ids: np.ndarray, mask: np.ndarray, params: ModelParams, pos_enc: np.ndarray,
           style_table: Optional[np.ndarray] = None, training: bool = False,
           seeds: Optional[SeedStream] = None) -> T.Tensor:
    """Run the full encoder stack; returns hidden states [B, L, input_dim]."""
    h = build_input(ids, mask, params, pos_enc, style_table)
    for b in range(params.config.n_blocks):
        h = transformer_block(h, params, b, mask, training=training, seeds=seeds)
    return h


def history_vector(hidden: T.Tensor, mask: np.ndarray, params: ModelParams) -> T.Tensor:
    """Hidden state at each session's last valid position, projected to
    d_product by W_out. Output is [B, d_product]."""
    mask = np.asarray(mask, dtype=bool)
    if hidden.data.ndim != 3 or mask.shape != hidden.shape[:2]:
        raise ShapeError(f"history_vector needs [B, L, D] hidden and [B, L] mask, "
                         f"got {hidden.shape} and {mask.shape}")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ContractError("a session in the batch has no valid items")
    if np.any(mask[:, 1:] & ~mask[:, :-1]):
        raise MaskError("validity mask must be contiguous from position 0")
    last = T.gather_rows(hidden, counts - 1)
    return T.matmul(last, params["w_out"])


def score(history, candidate_ids, params: ModelParams) -> np.ndarray:
    """Cosine similarity between one history vector and candidate embeddings.

    Inference-only: accepts a [d_product] vector (or 1-row Tensor) and
    returns a float array over candidates. Downstream sorts break ties by
    ascending product id.
    """
    h = history.data if isinstance(history, T.Tensor) else np.asarray(history)
    h = np.squeeze(h)
    if h.ndim != 1:
        raise ShapeError(f"score expects one history vector, got shape {h.shape}")
    ids = np.asarray(candidate_ids)
    if ids.size == 0:
        raise ContractError("score needs at least one candidate")
    if ids.min() < 1 or ids.max() > params.catalog_size:
        raise ContractError(f"candidate ids must lie in 1..{params.catalog_size}")
    emb = params.product_emb.data[ids].astype(np.float64)
    hn = np.linalg.norm(h)
    en = np.linalg.norm(emb, axis=1)
    if hn == 0.0 or np.any(en == 0.0):
        raise NumericError("cosine scoring hit a zero-norm vector")
    return (emb @ h.astype(np.float64)) / (en * hn)


def pairwise_bce_loss(s_pos: T.Tensor, s_neg: T.Tensor) -> T.Tensor:
    """-ln softmax([s_pos, s_neg])[0], elementwise over paired scores.

    Computed as softplus(s_neg - s_pos) for stability; equal scores give
    ln 2.
    """
    return T.softplus(T.sub(s_neg, s_pos))


# ---------------------------------------------------------------------------
# S4CK checkpoints
# ---------------------------------------------------------------------------

_S4CK_MAGIC = b"S4CK"
_S4CK_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    """Write config and all tensors (32-bit floats) to an S4CK file."""
    config_block = (params.config.to_kv() + f"\ncatalog_size={params.catalog_size}").encode("utf-8")
    chunks = [struct.pack("<4sI", _S4CK_MAGIC, _S4CK_VERSION),
              struct.pack("<I", len(config_block)), config_block]
    for name in sorted(params.tensors):
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(params.tensors[name].data, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _ck_need(buf: bytes, off: int, count: int, what: str) -> int:
    if off + count > len(buf):
        raise FormatError(f"truncated checkpoint: needed {count} bytes for {what} "
                          f"at byte {off}, have {len(buf) - off}")
    return off + count


def load_checkpoint(path) -> ModelParams:
    """Read an S4CK file back into float32 parameter tensors."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    end = _ck_need(buf, off, 8, "header")
    magic, version = struct.unpack_from("<4sI", buf, off)
    off = end
    if magic != _S4CK_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {_S4CK_MAGIC!r}")
    if version != _S4CK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    end = _ck_need(buf, off, 4, "config length")
    (cfg_len,) = struct.unpack_from("<I", buf, off)
    off = end
    end = _ck_need(buf, off, cfg_len, "config block")
    lines = buf[off:end].decode("utf-8").splitlines()
    off = end
    catalog_size = None
    cfg_lines = []
    for line in lines:
        if line.startswith("catalog_size="):
            catalog_size = int(line.split("=", 1)[1])
        else:
            cfg_lines.append(line)
    if catalog_size is None:
        raise FormatError("checkpoint config block lacks catalog_size")
    config = ModelConfig.from_kv("\n".join(cfg_lines))
    tensors: Dict[str, T.Tensor] = {}
    while off < len(buf):
        end = _ck_need(buf, off, 2, "tensor name length")
        (name_len,) = struct.unpack_from("<H", buf, off)
        off = end
        end = _ck_need(buf, off, name_len, "tensor name")
        name = buf[off:end].decode("utf-8")
        off = end
        end = _ck_need(buf, off, 1, f"rank of {name}")
        (rank,) = struct.unpack_from("<B", buf, off)
        off = end
        end = _ck_need(buf, off, 4 * rank, f"dims of {name}")
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off = end
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        end = _ck_need(buf, off, 4 * count, f"data of {name}")
        data = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims).copy()
        off = end
        tensors[name] = T.Tensor(data, requires_grad=True)
    return ModelParams(config, catalog_size, tensors)
