"""Session preprocessing end to end: cleaning, splits, stats, synthetic data."""

import tempfile
from pathlib import Path

from stylerec.data import (
    CART,
    PURCHASE,
    Session,
    clean_session,
    dataset_statistics,
    format_statistics_table,
    generate_synthetic,
    parse_sessions,
    prepare_dataset,
    write_sessions,
    truncate_pad,
)

# A raw session may end in a run of the same product (page reloads,
# double submits). Cleaning collapses that run and truncates to the
# most recent 20 actions.
noisy = Session("s1", PURCHASE, t=0, items=tuple(range(1, 25)) + (24, 24, 24))
print("raw length:", len(noisy.items))
print("cleaned:", clean_session(noisy).items)

padded, mask = truncate_pad([5, 9, 9, 4], max_len=8)
print("padded:", padded)
print("mask:  ", mask)

# Sessions round-trip through a line-oriented JSON file.
raw = [
    Session("a", PURCHASE, 0, (1, 2, 3)),
    Session("b", CART, 1, (2, 4)),
    Session("c", PURCHASE, 2, (3, 1, 4, 2)),
]
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "sessions.jsonl"
    write_sessions(raw, path)
    print("reparsed equal:", parse_sessions(path) == raw)

# The synthetic generator samples a Markov chain with one dominant
# successor per state and hands back the generating oracle.
sessions, oracle = generate_synthetic(50, 400, length_range=(3, 9), seed=7,
                                      cart_ratio=0.3)
print()
print(format_statistics_table(dataset_statistics(sessions)))

dist = oracle.next_distribution([11])
print()
print("P(next | 11) peaks at product", int(dist.argmax()) + 1,
      "with mass", round(float(dist.max()), 3))

# prepare_dataset removes purchase/cart overlap, cleans every session,
# and splits by time. Carts never reach the test split.
ds = prepare_dataset(sessions, max_len=8)
print("splits:", len(ds.train), "train /", len(ds.val), "val /", len(ds.test), "test")
print("test kinds:", sorted({s.kind for s in ds.test}))
