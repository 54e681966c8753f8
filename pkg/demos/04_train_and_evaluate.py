"""Train a small recommender on synthetic sessions and rank the baselines."""

import tempfile
from pathlib import Path

from stylerec.data import generate_synthetic, prepare_dataset
from stylerec.metrics import format_report_table
from stylerec.model import ModelConfig, load_checkpoint, save_checkpoint
from stylerec.training import (
    TrainConfig,
    evaluate,
    evaluate_with_scorer,
    oracle_scorer,
    popularity_scorer,
    random_scorer,
    train,
)

# 150 products, sessions of 2: each truth item depends only on its
# predecessor, so a small attention model can learn the table quickly.
sessions, oracle = generate_synthetic(150, 1200, length_range=(2, 2), seed=3)
ds = prepare_dataset(sessions, max_len=4)
print("sessions:", len(ds.train), "train /", len(ds.val), "val /", len(ds.test), "test")

model_cfg = ModelConfig(d_product=32, d_model=16, n_blocks=1, n_heads=2,
                        d_ffn=64, dropout=0.0, max_len=4)
cfg = TrainConfig(epochs=30, seed=3, learning_rate=1e-3, batch_size=16, l2=0.0)
result = train(ds, model_cfg, cfg, log=lambda line: None)
print("best epoch:", result.best_epoch,
      " val NDCG@5:", round(result.best_val_ndcg5, 3))
print("fingerprint:", result.fingerprint)

# Shared candidate protocol: the true next product plus 100 sampled
# negatives, same seed for every scorer.
kw = dict(mode="negsample", n_negatives=100, seed=3)
reports = {
    "model": evaluate(result.params, ds.test, **kw),
    "oracle": evaluate_with_scorer(ds.test, 150, oracle_scorer(oracle), **kw),
    "popularity": evaluate_with_scorer(ds.test, 150, popularity_scorer(ds.train, 150), **kw),
    "random": evaluate_with_scorer(ds.test, 150, random_scorer(3), **kw),
}
print()
print(format_report_table(reports))

# Checkpoints restore the exact weights, so the report reproduces.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.s4ck"
    save_checkpoint(result.params, path)
    reloaded = load_checkpoint(path)
again = evaluate(reloaded, ds.test, **kw)
print()
print("reloaded report identical:", again.values == reports["model"].values)
