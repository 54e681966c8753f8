"""Session ingestion, preprocessing, temporal splits, synthetic data.

Sessions arrive as one JSON object per line (``session_id``, ``kind``,
``t``, ``items``). Product ids are positive integers; id 0 is reserved
for padding. Preprocessing collapses repeated trailing products, keeps
the last ``max_len`` items of over-long sessions, and drops sessions too
short to form an input/target pair.

The synthetic generator samples Markov sessions (order 1 or 2) from a
seeded transition tensor with one dominant successor per state, so that
learning checks have a known oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .seeding import rng_for

PURCHASE = "purchase"
CART = "cart"
PADDING_ID = 0

# train/val/test fractions follow a 14/2/2 month ratio
DEFAULT_TRAIN_FRAC = 14.0 / 18.0
DEFAULT_VAL_FRAC = 2.0 / 18.0


@dataclass(frozen=True)
class Session:
    """One user's ordered product interactions."""

    session_id: str
    kind: str  # PURCHASE or CART
    t: int  # ordinal timestamp, larger = later
    items: tuple

    def __post_init__(self):
        if self.kind not in (PURCHASE, CART):
            raise InputError(f"session {self.session_id!r}: unknown kind {self.kind!r}")
        if not self.items:
            raise InputError(f"session {self.session_id!r}: empty item list")
        if any((not isinstance(i, (int, np.integer))) or i < 1 for i in self.items):
            raise InputError(f"session {self.session_id!r}: item ids must be integers >= 1 (0 is padding)")
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))


@dataclass
class PreparedDataset:
    """Temporal train/val/test splits after preprocessing."""

    train: list
    val: list
    test: list
    catalog_size: int
    max_len: int
    padding_id: int = PADDING_ID

    def all_sessions(self):
        return list(self.train) + list(self.val) + list(self.test)

    def to_json(self) -> str:
        def enc(sessions):
            return [
                {"session_id": s.session_id, "kind": s.kind, "t": s.t, "items": list(s.items)}
                for s in sessions
            ]

        doc = {
            "catalog_size": self.catalog_size,
            "max_len": self.max_len,
            "padding_id": self.padding_id,
            "train": enc(self.train),
            "val": enc(self.val),
            "test": enc(self.test),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PreparedDataset":
        doc = json.loads(text)

        def dec(rows):
            return [
                Session(r["session_id"], r["kind"], int(r["t"]), tuple(r["items"]))
                for r in rows
            ]

        return cls(
            train=dec(doc["train"]),
            val=dec(doc["val"]),
            test=dec(doc["test"]),
            catalog_size=int(doc["catalog_size"]),
            max_len=int(doc["max_len"]),
            padding_id=int(doc.get("padding_id", PADDING_ID)),
        )


# ---------------------------------------------------------------------------
# parsing / writing
# ---------------------------------------------------------------------------

def parse_sessions(path) -> list:
    """Read a JSON-lines sessions file; report malformed lines by number."""
    sessions = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                sid = str(obj["session_id"])
                kind = obj["kind"]
                t = int(obj["t"])
                items = tuple(obj["items"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: missing or malformed field ({exc})") from exc
            if sid in seen:
                raise InputError(f"{path}:{lineno}: duplicate session_id {sid!r}")
            seen.add(sid)
            try:
                sessions.append(Session(sid, kind, t, items))
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return sessions


def write_sessions(sessions: Iterable[Session], path) -> None:
    """Write sessions in the line format parse_sessions reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(
                json.dumps(
                    {"session_id": s.session_id, "kind": s.kind, "t": s.t, "items": list(s.items)}
                )
            )
            fh.write("\n")


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def dedupe_trailing(items: Sequence[int]) -> list:
    """Collapse a run of the repeated final product to a single occurrence."""
    if not items:
        raise InputError("dedupe_trailing on an empty item list")
    out = list(items)
    while len(out) >= 2 and out[-1] == out[-2]:
        out.pop()
    return out


def truncate_pad(items: Sequence[int], max_len: int = 20):
    """Keep the last ``max_len`` items; pad short lists with 0 as a suffix.

    Returns ``(padded_items, validity_mask)``, both of length max_len.
    """
    if max_len < 2:
        raise ConfigError(f"max_len must be >= 2, got {max_len}")
    kept = list(items)[-max_len:]
    pad = max_len - len(kept)
    return kept + [PADDING_ID] * pad, [True] * len(kept) + [False] * pad


def remove_overlap(purchase_sessions: Sequence[Session], cart_sessions: Sequence[Session]):
    """Drop session identities that appear in both the purchase and cart sets."""
    shared = {s.session_id for s in purchase_sessions} & {s.session_id for s in cart_sessions}
    return (
        [s for s in purchase_sessions if s.session_id not in shared],
        [s for s in cart_sessions if s.session_id not in shared],
    )


def clean_session(session: Session, max_len: int = 20) -> Optional[Session]:
    """Dedupe the trailing repeat and truncate to the last ``max_len`` items.

    Returns None when fewer than 2 items survive (no input/target pair).
    """
    items = dedupe_trailing(session.items)[-max_len:]
    if len(items) < 2:
        return None
    return Session(session.session_id, session.kind, session.t, tuple(items))


def temporal_split(
    sessions: Sequence[Session],
    train_frac: float = DEFAULT_TRAIN_FRAC,
    val_frac: float = DEFAULT_VAL_FRAC,
    max_len: int = 20,
    catalog_size: Optional[int] = None,
) -> PreparedDataset:
    """Split chronologically: earliest fraction trains, then val, then test.

    Ties on ``t`` break by session_id so the split is deterministic. Cart
    sessions are excluded from the test split.
    """
    if not (0 < train_frac and 0 < val_frac and train_frac + val_frac < 1):
        raise ConfigError(f"bad split fractions train={train_frac}, val={val_frac}")
    ordered = sorted(sessions, key=lambda s: (s.t, s.session_id))
    n = len(ordered)
    n_train = int(round(n * train_frac))
    n_val = int(round(n * val_frac))
    train = ordered[:n_train]
    val = ordered[n_train:n_train + n_val]
    test = [s for s in ordered[n_train + n_val:] if s.kind == PURCHASE]
    if not train or not val or not test:
        raise ConfigError(
            f"empty split: train={len(train)}, val={len(val)}, test={len(test)} from {n} sessions"
        )
    if catalog_size is None:
        catalog_size = max(max(s.items) for s in ordered)
    return PreparedDataset(train=train, val=val, test=test, catalog_size=catalog_size,
                           max_len=max_len)


def prepare_dataset(
    sessions: Sequence[Session],
    max_len: int = 20,
    train_frac: float = DEFAULT_TRAIN_FRAC,
    val_frac: float = DEFAULT_VAL_FRAC,
    catalog_size: Optional[int] = None,
) -> PreparedDataset:
    """Full preprocessing pipeline: overlap removal, per-session cleaning,
    temporal split with purchase-only test."""
    purchases = [s for s in sessions if s.kind == PURCHASE]
    carts = [s for s in sessions if s.kind == CART]
    purchases, carts = remove_overlap(purchases, carts)
    cleaned = []
    for s in purchases + carts:
        c = clean_session(s, max_len=max_len)
        if c is not None:
            cleaned.append(c)
    if not cleaned:
        raise ConfigError("no sessions survive preprocessing")
    return temporal_split(cleaned, train_frac=train_frac, val_frac=val_frac,
                          max_len=max_len, catalog_size=catalog_size)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def dataset_statistics(sessions: Sequence[Session]) -> dict:
    """Per-kind counts: #Sessions, #Products, Avg.Length, #Actions."""
    stats = {}
    for kind, label in ((PURCHASE, "Purchase"), (CART, "S.Cart")):
        subset = [s for s in sessions if s.kind == kind]
        n_actions = sum(len(s.items) for s in subset)
        products = set()
        for s in subset:
            products.update(s.items)
        stats[label] = {
            "sessions": len(subset),
            "products": len(products),
            "avg_length": (n_actions / len(subset)) if subset else 0.0,
            "actions": n_actions,
        }
    return stats


def format_statistics_table(stats: dict) -> str:
    header = f"{'Datasets':<10} {'#Sessions':>10} {'#Products':>10} {'Avg.Length':>11} {'#Actions':>10}"
    rule = "-" * len(header)
    lines = [header, rule]
    for label, row in stats.items():
        lines.append(
            f"{label:<10} {row['sessions']:>10d} {row['products']:>10d} "
            f"{row['avg_length']:>11.2f} {row['actions']:>10d}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# synthetic data with a known oracle
# ---------------------------------------------------------------------------

@dataclass
class SyntheticOracle:
    """Ground-truth Markov process behind a synthetic dataset.

    ``transition`` has shape [P, P] (order 1) or [P, P, P] (order 2),
    indexed by 0-based item indices (product id = index + 1). Rows along
    the final axis sum to 1.
    """

    transition: np.ndarray
    initial: np.ndarray
    seed: int
    order: int = 1
    cluster_of: Optional[np.ndarray] = None  # 0-based item index -> cluster

    def __post_init__(self):
        sums = self.transition.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ConfigError("oracle transition rows must sum to 1")

    @property
    def catalog_size(self) -> int:
        return self.transition.shape[-1]

    def next_distribution(self, prev_items: Sequence[int]) -> np.ndarray:
        """P(next product | history), indexed by 0-based item index."""
        if not prev_items:
            return self.initial
        if self.order == 1:
            return self.transition[prev_items[-1] - 1]
        if len(prev_items) == 1:
            # second item: marginalize the unknown first predecessor
            return self.initial @ self.transition[:, prev_items[-1] - 1, :]
        return self.transition[prev_items[-2] - 1, prev_items[-1] - 1]

    def save(self, path) -> None:
        np.savez(
            path,
            transition=self.transition,
            initial=self.initial,
            seed=np.array(self.seed, dtype=np.int64),
            order=np.array(self.order, dtype=np.int64),
            cluster_of=self.cluster_of if self.cluster_of is not None else np.array([]),
        )

    @classmethod
    def load(cls, path) -> "SyntheticOracle":
        with np.load(path) as z:
            cluster = z["cluster_of"]
            return cls(
                transition=z["transition"],
                initial=z["initial"],
                seed=int(z["seed"]),
                order=int(z["order"]),
                cluster_of=cluster if cluster.size else None,
            )


def _dominant_rows(rng, P: int, n_rows: int, dominant_mass: float,
                   dominant_choice) -> np.ndarray:
    """Rows with ``dominant_mass`` on one chosen column, rest uniform."""
    rows = np.full((n_rows, P), (1.0 - dominant_mass) / (P - 1))
    cols = dominant_choice(rng, n_rows)
    rows[np.arange(n_rows), cols] = dominant_mass
    return rows


def make_transition(P: int, seed: int, dominant_mass: float = 0.8, order: int = 1,
                    cluster_of: Optional[np.ndarray] = None) -> np.ndarray:
    """Seeded transition tensor with one dominant successor per state.

    The dominant successor never equals the most recent item (it would be
    collapsed by trailing-repeat removal); with ``cluster_of`` it is drawn
    from the current item's cluster.
    """
    if P < 2:
        raise ConfigError("need a catalog of at least 2 products")
    if not 0.0 < dominant_mass < 1.0:
        raise ConfigError("dominant_mass must be in (0, 1)")
    rng = rng_for(seed, "transition", order)
    n_states = P if order == 1 else P * P

    def choose(rng, n_rows):
        cols = np.empty(n_rows, dtype=np.int64)
        for row in range(n_rows):
            last = row % P  # most recent item index for this state
            if cluster_of is not None:
                pool = np.flatnonzero(cluster_of == cluster_of[last])
                pool = pool[pool != last]
                if pool.size == 0:
                    pool = np.array([i for i in range(P) if i != last])
            else:
                pool = None
            if pool is None:
                c = rng.integers(0, P - 1)
                cols[row] = c if c < last else c + 1  # skip the self column
            else:
                cols[row] = pool[rng.integers(0, pool.size)]
        return cols

    flat = _dominant_rows(rng, P, n_states, dominant_mass, choose)
    return flat.reshape((P, P) if order == 1 else (P, P, P))


def generate_synthetic(
    catalog_size: int,
    n_sessions: int,
    length_range=(3, 12),
    seed: int = 0,
    dominant_mass: float = 0.8,
    cart_ratio: float = 0.0,
    order: int = 1,
    cluster_of: Optional[np.ndarray] = None,
):
    """Sample Markov sessions from a seeded dominant-transition oracle.

    Returns ``(sessions, oracle)``. Timestamps are ordinal and increasing;
    each session is flagged cart with probability ``cart_ratio``.
    """
    P = catalog_size
    if P < 2 or n_sessions < 1:
        raise ConfigError("need catalog_size >= 2 and n_sessions >= 1")
    if order not in (1, 2):
        raise ConfigError("order must be 1 or 2")
    lo, hi = length_range
    if lo < 2 or hi < lo:
        raise ConfigError(f"bad length_range {length_range}")
    transition = make_transition(P, seed, dominant_mass=dominant_mass, order=order,
                                 cluster_of=cluster_of)
    initial = np.full(P, 1.0 / P)
    oracle = SyntheticOracle(transition=transition, initial=initial, seed=seed,
                             order=order, cluster_of=cluster_of)
    rng = rng_for(seed, "sessions")
    sessions = []
    for idx in range(n_sessions):
        length = int(rng.integers(lo, hi + 1))
        items = [int(rng.choice(P, p=initial)) + 1]
        while len(items) < length:
            probs = oracle.next_distribution(items)
            items.append(int(rng.choice(P, p=probs)) + 1)
        kind = CART if rng.random() < cart_ratio else PURCHASE
        sessions.append(Session(f"syn{idx:06d}", kind, idx, tuple(items)))
    return sessions, oracle


def generate_style_correlated(
    catalog_size: int,
    n_sessions: int,
    n_clusters: int = 5,
    style_dim: int = 512,
    length_range=(3, 12),
    seed: int = 0,
    dominant_mass: float = 0.8,
    cart_ratio: float = 0.3,
    style_noise: float = 0.1,
):
    """Markov sessions whose co-purchased items share style clusters.

    Items are assigned to contiguous clusters; each state's dominant
    successor stays within the cluster, and every item's style vector is
    its cluster centroid plus small noise. Returns
    ``(sessions, oracle, style_vectors)`` with style_vectors keyed by
    product id.
    """
    if n_clusters < 2 or catalog_size < 2 * n_clusters:
        raise ConfigError("need >= 2 clusters and >= 2 items per cluster")
    cluster_of = (np.arange(catalog_size) * n_clusters) // catalog_size
    sessions, oracle = generate_synthetic(
        catalog_size, n_sessions, length_range=length_range, seed=seed,
        dominant_mass=dominant_mass, cart_ratio=cart_ratio, order=1,
        cluster_of=cluster_of,
    )
    rng = rng_for(seed, "style-clusters")
    centroids = rng.standard_normal((n_clusters, style_dim))
    vectors = {}
    for idx in range(catalog_size):
        noise = rng.standard_normal(style_dim) * style_noise
        vectors[idx + 1] = (centroids[cluster_of[idx]] + noise).astype(np.float32)
    return sessions, oracle, vectors
