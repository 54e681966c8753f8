"""Gram matrices, style/content losses, and 512-dim product style embeddings.

A product's style embedding is computed from the first two convolutional
layers of a feature provider (64 maps each): per layer, the 64x64 gram of
pairwise feature-map dot products is normalized by map count and size,
max-pooled 4x4 down to 16x16, and flattened; the two layers concatenate to
512 values. Catalog-level standardization brings each dimension to zero
mean and unit variance so the style block does not dwarf the product
embedding under concatenation. Products without images carry zero vectors.

The built-in pseudo provider stands in for a pretrained network: two
seeded, frozen 3x3 conv layers (64 filters, stride 1, same padding, ReLU).
Externally computed activations can be supplied via S4RF files instead.
"""

from __future__ import annotations

import struct
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from .errors import ConfigError, ContractError, FormatError, ShapeError
from .seeding import rng_for

STYLE_DIM = 512
_MAPS_PER_LAYER = 64
_POOL = 4


def _as_stack(maps) -> np.ndarray:
    """Coerce a layer to an [N, H, W] float64 array; reject ragged maps."""
    if isinstance(maps, np.ndarray):
        if maps.ndim != 3 or maps.shape[0] < 1:
            raise ShapeError(f"layer must be [N, H, W] with N >= 1, got {maps.shape}")
        return maps.astype(np.float64, copy=False)
    maps = list(maps)
    if not maps:
        raise ShapeError("empty layer")
    shapes = {np.asarray(m).shape for m in maps}
    if len(shapes) != 1 or next(iter(shapes)).__len__() != 2:
        raise ShapeError(f"feature maps in a layer must share one 2-D shape, got {sorted(shapes)}")
    return np.stack([np.asarray(m, dtype=np.float64) for m in maps])


def gram(maps) -> np.ndarray:
    """Pairwise dot products of flattened feature maps: [N, H, W] -> [N, N]."""
    stack = _as_stack(maps)
    flat = stack.reshape(stack.shape[0], -1)
    g = flat @ flat.T
    # mirror the lower triangle so symmetry holds exactly, not just to rounding
    return np.tril(g) + np.tril(g, -1).T


def style_loss(input_grams: Sequence[np.ndarray], style_grams: Sequence[np.ndarray],
               weights: Sequence[float], n_maps: Sequence[int],
               map_sizes: Sequence[int]) -> float:
    """Weighted sum over layers of sum((G_in - G_style)^2) / (4 N^2 M^2)."""
    if not (len(input_grams) == len(style_grams) == len(weights) == len(n_maps) == len(map_sizes)):
        raise ShapeError("per-layer argument lists must have equal length")
    total = 0.0
    for g_in, g_st, w, n, m in zip(input_grams, style_grams, weights, n_maps, map_sizes):
        if g_in.shape != g_st.shape:
            raise ShapeError(f"gram shape mismatch {g_in.shape} vs {g_st.shape}")
        diff = np.asarray(g_in, dtype=np.float64) - np.asarray(g_st, dtype=np.float64)
        total += w * float((diff * diff).sum()) / (4.0 * n * n * m * m)
    return total


def content_loss(features_a, features_b) -> float:
    """Half the sum of squared element differences between two stacks."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"content features differ in shape: {a.shape} vs {b.shape}")
    d = a - b
    return 0.5 * float((d * d).sum())


def max_pool2d(matrix: np.ndarray, window: int = _POOL) -> np.ndarray:
    """Non-overlapping window x window max pooling of a 2-D matrix."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ShapeError(f"max_pool2d expects a matrix, got {m.shape}")
    h, w = m.shape
    if h % window or w % window:
        raise ShapeError(f"matrix {m.shape} not divisible into {window}x{window} windows")
    return m.reshape(h // window, window, w // window, window).max(axis=(1, 3))


def extract_style_embedding(layers: Sequence) -> np.ndarray:
    """Two 64-map layers -> 512 values: normalized gram, 4x4 max-pool, flatten.

    Catalog-level standardization is a separate pass (standardize_embeddings).
    """
    if len(layers) != 2:
        raise ConfigError(f"style embedding needs exactly 2 layers, got {len(layers)}")
    parts = []
    for stack in map(_as_stack, layers):
        n, h, w = stack.shape
        if n != _MAPS_PER_LAYER:
            raise ConfigError(f"style embedding needs {_MAPS_PER_LAYER} maps per layer, got {n}")
        g = gram(stack) / (n * h * w)
        parts.append(max_pool2d(g, _POOL).ravel())
    out = np.concatenate(parts)
    assert out.shape == (STYLE_DIM,)
    return out


def standardize_embeddings(raw: Dict[int, np.ndarray],
                           image_ids: Optional[Set[int]] = None) -> Dict[int, np.ndarray]:
    """Standardize each of the 512 dims to zero mean / unit variance.

    Statistics come only from products that have images; the rest keep zero
    vectors. Dimensions constant across the catalog are zeroed rather than
    divided by a vanishing deviation.
    """
    if image_ids is None:
        image_ids = set(raw)
    image_ids = set(image_ids) & set(raw)
    if not image_ids:
        raise ConfigError("no products with images to standardize over")
    stack = np.stack([np.asarray(raw[i], dtype=np.float64) for i in sorted(image_ids)])
    mean = stack.mean(axis=0)
    std = stack.std(axis=0)
    safe = np.where(std < 1e-12, 1.0, std)
    out = {}
    for pid in raw:
        if pid in image_ids:
            v = (np.asarray(raw[pid], dtype=np.float64) - mean) / safe
            v[std < 1e-12] = 0.0
        else:
            v = np.zeros(STYLE_DIM)
        out[pid] = v.astype(np.float32)
    return out


def style_table(catalog_size: int, vectors: Dict[int, np.ndarray]) -> np.ndarray:
    """[(P+1), 512] lookup table; row 0 (padding) and image-less rows are zero."""
    table = np.zeros((catalog_size + 1, STYLE_DIM), dtype=np.float32)
    for pid, vec in vectors.items():
        if not 1 <= pid <= catalog_size:
            raise ContractError(f"style vector for id {pid} outside catalog 1..{catalog_size}")
        v = np.asarray(vec, dtype=np.float32)
        if v.shape != (STYLE_DIM,):
            raise ShapeError(f"style vector for id {pid} has shape {v.shape}")
        table[pid] = v
    return table


# ---------------------------------------------------------------------------
# pseudo feature provider
# ---------------------------------------------------------------------------

def _conv2d_same(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """3x3 stride-1 same-padding convolution: [C, H, W] x [F, C, 3, 3] -> [F, H, W]."""
    c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    return np.einsum("chwij,fcij->fhw", windows, weights, optimize=True)


def pseudo_feature_provider(image: np.ndarray, seed: int) -> List[np.ndarray]:
    """Two frozen seeded conv layers over an H x W x 3 image.

    Both layers use 64 bias-free 3x3 filters with same padding and ReLU, so a
    zero image yields zero maps and equal seeds yield bit-identical stacks.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"image must be H x W x C, got {img.shape}")
    h, w, c = img.shape
    if h < 8 or w < 8:
        raise ContractError(f"image must be at least 8x8, got {h}x{w}")
    rng = rng_for(seed, "pseudo-features")
    w1 = rng.standard_normal((_MAPS_PER_LAYER, c, 3, 3)) / np.sqrt(9.0 * c)
    w2 = rng.standard_normal((_MAPS_PER_LAYER, _MAPS_PER_LAYER, 3, 3)) / np.sqrt(9.0 * _MAPS_PER_LAYER)
    layer1 = np.maximum(_conv2d_same(img.transpose(2, 0, 1), w1), 0.0)
    layer2 = np.maximum(_conv2d_same(layer1, w2), 0.0)
    return [layer1.astype(np.float32), layer2.astype(np.float32)]


# ---------------------------------------------------------------------------
# S4RF feature-map files and S4SE embedding caches
# ---------------------------------------------------------------------------

_S4RF_MAGIC = b"S4RF"
_S4SE_MAGIC = b"S4SE"
_VERSION = 1


def _need(buf: bytes, offset: int, count: int, what: str) -> int:
    if offset + count > len(buf):
        raise FormatError(f"truncated file: needed {count} bytes for {what} at byte {offset}, "
                          f"have {len(buf) - offset}")
    return offset + count


def write_feature_maps(layers: Sequence[np.ndarray], path) -> None:
    """Write a feature-map stack in the S4RF binary format."""
    chunks = [struct.pack("<4sII", _S4RF_MAGIC, _VERSION, len(layers))]
    for stack in layers:
        arr = np.ascontiguousarray(np.asarray(stack, dtype=np.float32))
        if arr.ndim != 3:
            raise ShapeError(f"S4RF layer must be [N, H, W], got {arr.shape}")
        n, h, w = arr.shape
        chunks.append(struct.pack("<III", n, h, w))
        chunks.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_feature_maps(path) -> List[np.ndarray]:
    """Read an S4RF file; malformed input reports the failing byte offset."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    end = _need(buf, off, 12, "header")
    magic, version, layer_count = struct.unpack_from("<4sII", buf, off)
    off = end
    if magic != _S4RF_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {_S4RF_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported S4RF version {version} at byte 4")
    layers = []
    for k in range(layer_count):
        end = _need(buf, off, 12, f"layer {k} dims")
        n, h, w = struct.unpack_from("<III", buf, off)
        off = end
        nbytes = n * h * w * 4
        end = _need(buf, off, nbytes, f"layer {k} data ({n}x{h}x{w})")
        layers.append(np.frombuffer(buf, dtype="<f4", count=n * h * w, offset=off)
                      .reshape(n, h, w).copy())
        off = end
    if off != len(buf):
        raise FormatError(f"trailing data at byte {off}")
    return layers


def save_style_cache(vectors: Dict[int, np.ndarray], path) -> None:
    """Write per-product 512-dim style vectors in the S4SE binary format."""
    chunks = [struct.pack("<4sII", _S4SE_MAGIC, _VERSION, len(vectors))]
    for pid in sorted(vectors):
        if pid < 1:
            raise ContractError(f"product id must be >= 1, got {pid}")
        vec = np.asarray(vectors[pid], dtype=np.float32)
        if vec.shape != (STYLE_DIM,):
            raise ShapeError(f"style vector for id {pid} has shape {vec.shape}, need ({STYLE_DIM},)")
        chunks.append(struct.pack("<I", pid))
        chunks.append(vec.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_style_cache(path) -> Dict[int, np.ndarray]:
    """Read an S4SE file; malformed input reports the failing byte offset."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    end = _need(buf, off, 12, "header")
    magic, version, count = struct.unpack_from("<4sII", buf, off)
    off = end
    if magic != _S4SE_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {_S4SE_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported S4SE version {version} at byte 4")
    vectors = {}
    for k in range(count):
        end = _need(buf, off, 4, f"product id #{k}")
        (pid,) = struct.unpack_from("<I", buf, off)
        off = end
        end = _need(buf, off, STYLE_DIM * 4, f"style vector for id {pid}")
        vectors[pid] = np.frombuffer(buf, dtype="<f4", count=STYLE_DIM, offset=off).copy()
        off = end
    if off != len(buf):
        raise FormatError(f"trailing data at byte {off}")
    return vectors
