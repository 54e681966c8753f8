"""The three experiment drivers: configuration suite, length curve, sweep."""

from stylerec.data import generate_style_correlated, generate_synthetic, prepare_dataset
from stylerec.style import standardize_embeddings, style_table
from stylerec.training import (
    CONFIGURATIONS,
    TrainConfig,
    curve_series,
    dynamic_experiment,
    run_configuration_suite,
    sweep,
)

ARCH = dict(d_product=16, d_model=8, n_blocks=1, n_heads=2, dropout=0.0)

# 1) Four data configurations, one shared test split: purchases only,
#    optionally adding cart sessions and the style channel.
sessions, _, vectors = generate_style_correlated(
    40, 300, n_clusters=5, length_range=(2, 4), seed=11, cart_ratio=0.5)
ds = prepare_dataset(sessions, max_len=4)
table = style_table(40, standardize_embeddings(vectors))
base = TrainConfig(epochs=5, seed=11, learning_rate=1e-3, batch_size=16, l2=0.0)

suite = run_configuration_suite(ds, dict(ARCH, d_ffn=32, max_len=4), base, table)
print("configuration suite (NDCG@5 on the shared test split):")
for name in CONFIGURATIONS:
    report = suite[name]["report"]
    used = suite[name]["result"].cart_sessions_used
    print(f"  {name:14s} {report['NDCG@5']:.3f}   cart sessions used: {used}")

# 2) Accuracy as a function of the visible history length. Each next
#    item here depends on the two before it, so a window of one sees
#    only part of the state and longer windows catch up.
sessions2, _ = generate_synthetic(30, 800, length_range=(9, 14), seed=0, order=2)
curve = dynamic_experiment(sessions2, [2, 4, 8], dict(ARCH, d_ffn=32),
                           TrainConfig(epochs=10, seed=0, learning_rate=1e-3,
                                       batch_size=16, l2=0.0))
print()
print("history-length curve (max_len, value):")
print("HR@5:")
print(curve_series(curve, "HR@5"))
print("NDCG@5:")
print(curve_series(curve, "NDCG@5"))

# 3) Grid search over feed-forward width and L2 strength, selected by
#    validation NDCG@5 with deterministic tie-breaks.
grid_cfg = TrainConfig(epochs=4, seed=2, learning_rate=1e-3, batch_size=16,
                       hidden_dim_grid=(16, 32), l2_grid=(0.0, 1e-3))
result = sweep(ds, dict(ARCH, max_len=4), grid_cfg)
print()
print("sweep runs (hidden dim, l2 -> val NDCG@5):")
for run in result.runs:
    print(f"  {run.hidden_dim:4d}  {run.l2:g}  ->  {run.val_ndcg5:.3f}")
print("picked:", result.best.hidden_dim, "with l2", result.best.l2)
