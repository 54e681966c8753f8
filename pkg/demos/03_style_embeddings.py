"""From product images to 512-dim style vectors and the model lookup table."""

import tempfile
from pathlib import Path

import numpy as np

from stylerec.style import (
    extract_style_embedding,
    gram,
    load_style_cache,
    pseudo_feature_provider,
    save_style_cache,
    standardize_embeddings,
    style_loss,
    style_table,
)

rng = np.random.default_rng(42)

# A gram matrix holds the pairwise dot products of flattened feature
# maps; it measures which features fire together, not where.
stack = rng.standard_normal((4, 6, 6))
g = gram(stack)
print("gram shape:", g.shape, " symmetric:", bool((g == g.T).all()))

# Style distance between two images is a weighted sum of squared gram
# differences, normalized by map count and size.
other = rng.standard_normal((4, 6, 6))
d = style_loss([g], [gram(other)], weights=[1.0], n_maps=[4], map_sizes=[36])
print("style distance:", round(d, 4))

# Without a real convnet on disk, a fixed random convolutional stack
# stands in: two layers of 64 maps from any image of at least 8x8.
image = rng.random((32, 32, 3))
layers = pseudo_feature_provider(image, seed=1)
print("layer shapes:", [l.shape for l in layers])

emb = extract_style_embedding(layers)
print("embedding: len", emb.shape[0], "= 2 layers x 16 x 16 pooled gram")

# Catalog-level standardization: per-dimension zero mean, unit variance,
# computed only over products that actually have images.
raw = {pid: extract_style_embedding(pseudo_feature_provider(rng.random((16, 16, 3)), seed=pid))
       for pid in range(1, 9)}
std = standardize_embeddings(raw)
mat = np.stack(list(std.values()))
print("standardized mean ~0:", np.abs(mat.mean(axis=0)).max() < 1e-5,
      " std ~1:", abs(float(mat.std(axis=0).mean()) - 1.0) < 1e-2)

# The cache file round-trips exactly, and the lookup table keeps row 0
# (the padding id) at zero.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "styles.s4se"
    save_style_cache(std, path)
    back = load_style_cache(path)
print("cache round-trip exact:",
      all(np.array_equal(std[p], back[p]) for p in std))

table = style_table(10, std)
print("table shape:", table.shape, " padding row zero:", not table[0].any())
