"""Training loop, negative sampling, evaluation protocol, experiments.

Each session trains on its prefix: the items before the last form the
input and the last item is the target, scored against one uniformly
sampled negative through a pairwise softmax cross-entropy. Regularization
adds an L2 penalty over all parameters. Validation runs every epoch and
the parameters with the best val NDCG@5 are kept.

Evaluation ranks the true next product either among 100 sampled negatives
plus the truth (negsample mode) or against the whole catalog minus the
session's other items (full-catalog mode). Four data configurations gate
cart sessions and style embeddings into the run: P, P+Style, P+Cart,
P+Cart+Style.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import CART, PURCHASE, PreparedDataset, Session, prepare_dataset
from .errors import ConfigError, ContractError, NumericError
from .metrics import FULL_CATALOG, NEGSAMPLE, MetricsReport, rank_of_truth
from .model import (
    ModelConfig,
    ModelParams,
    encode,
    history_vector,
    init_params,
    pairwise_bce_loss,
    positional_encoding,
    score,
)
from .seeding import SeedStream, derive_seed, rng_for

CONFIGURATIONS = ("P", "P+Style", "P+Cart", "P+Cart+Style")

HIDDEN_DIM_GRID = (8, 16, 32, 64, 128, 256)
L2_GRID = (0.1, 0.001, 0.0001, 0.00001)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    l2: float = 1e-4
    seed: int = 0
    configuration: str = "P"
    eval_negatives: int = 100
    eval_mode: str = "auto"  # auto | negsample | full-catalog
    hidden_dim_grid: Tuple[int, ...] = HIDDEN_DIM_GRID
    l2_grid: Tuple[float, ...] = L2_GRID

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("learning_rate, batch_size, and epochs must be positive")
        if self.l2 < 0:
            raise ConfigError(f"l2 penalty must be >= 0, got {self.l2}")
        if self.configuration not in CONFIGURATIONS:
            raise ConfigError(f"configuration must be one of {CONFIGURATIONS}, "
                              f"got {self.configuration!r}")
        if self.eval_negatives < 1:
            raise ConfigError("eval_negatives must be >= 1")
        if self.eval_mode not in ("auto", NEGSAMPLE, FULL_CATALOG):
            raise ConfigError(f"unknown eval_mode {self.eval_mode!r}")
        if not self.hidden_dim_grid or not self.l2_grid:
            raise ConfigError("sweep grids must be nonempty")

    @property
    def use_cart(self) -> bool:
        return "Cart" in self.configuration

    @property
    def use_style(self) -> bool:
        return "Style" in self.configuration


@dataclass
class TrainResult:
    params: ModelParams
    history: List[dict]  # per epoch: loss, val metrics
    best_epoch: int
    best_val_ndcg5: float
    val_mode: str
    cart_sessions_used: int
    fingerprint: str


# ---------------------------------------------------------------------------
# sampling and batching
# ---------------------------------------------------------------------------

def sample_negatives(session_items: Sequence[int], catalog_size: int, n: int,
                     seed: int) -> np.ndarray:
    """n distinct uniform ids excluding the truth and every session item."""
    exclude = set(int(i) for i in session_items)
    pool = np.array([i for i in range(1, catalog_size + 1) if i not in exclude],
                    dtype=np.int64)
    if pool.size < n:
        raise ConfigError(
            f"catalog of {catalog_size} cannot supply {n} negatives for a session "
            f"with {len(exclude)} distinct items")
    rng = np.random.default_rng(seed)
    return rng.choice(pool, size=n, replace=False)


def _session_arrays(sessions: Sequence[Session], max_len: int):
    """Pack inputs (items before the last) into [N, max_len] id/mask arrays."""
    n = len(sessions)
    ids = np.zeros((n, max_len), dtype=np.int64)
    mask = np.zeros((n, max_len), dtype=bool)
    truth = np.zeros(n, dtype=np.int64)
    for r, s in enumerate(sessions):
        inp = list(s.items[:-1])[-max_len:]
        ids[r, :len(inp)] = inp
        mask[r, :len(inp)] = True
        truth[r] = s.items[-1]
    return ids, mask, truth


def _train_negative(rng, catalog_size: int, exclude: frozenset) -> int:
    while True:
        c = int(rng.integers(1, catalog_size + 1))
        if c not in exclude:
            return c


def _train_exclusions(sessions: Sequence[Session], catalog_size: int) -> List[frozenset]:
    """Training negatives avoid all session items; when a session covers the
    whole catalog only the target itself is excluded."""
    out = []
    for s in sessions:
        distinct = frozenset(s.items)
        out.append(distinct if len(distinct) < catalog_size else frozenset((s.items[-1],)))
    return out


class Adam:
    """Adam optimizer; moments kept in float64, updates cast to param dtype."""

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros(t.shape) for name, t in params.items()}
        self.v = {name: np.zeros(t.shape) for name, t in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            g = g.astype(np.float64)
            p = self.params.tensors[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            update = self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.dtype)


# ---------------------------------------------------------------------------
# loss and training
# ---------------------------------------------------------------------------

def training_loss(params: ModelParams, ids: np.ndarray, mask: np.ndarray,
                  pos_ids: np.ndarray, neg_ids: np.ndarray, pos_enc: np.ndarray,
                  style_table: Optional[np.ndarray] = None, training: bool = False,
                  seeds: Optional[SeedStream] = None) -> T.Tensor:
    """Mean pairwise loss for one batch (L2 penalty handled by the caller)."""
    hidden = encode(ids, mask, params, pos_enc, style_table,
                    training=training, seeds=seeds)
    hist = history_vector(hidden, mask, params)
    pos_emb = T.embedding_lookup(params.product_emb, pos_ids)
    neg_emb = T.embedding_lookup(params.product_emb, neg_ids)
    s_pos = T.cosine_similarity(hist, pos_emb)
    s_neg = T.cosine_similarity(hist, neg_emb)
    return T.mean_all(pairwise_bce_loss(s_pos, s_neg))


def l2_penalty(params: ModelParams, lam: float) -> float:
    return lam * params.l2_norm_squared() if lam else 0.0


def choose_eval_mode(sessions: Sequence[Session], catalog_size: int,
                     n_negatives: int) -> str:
    """Negsample when every session leaves enough ids to draw negatives from."""
    worst = max((len(set(s.items)) for s in sessions), default=0)
    feasible = catalog_size - worst >= n_negatives
    return NEGSAMPLE if feasible else FULL_CATALOG


def _pick_eval_mode(cfg: TrainConfig, sessions: Sequence[Session], catalog_size: int) -> str:
    if cfg.eval_mode != "auto":
        return cfg.eval_mode
    return choose_eval_mode(sessions, catalog_size, cfg.eval_negatives)


def _fingerprint(model_cfg: ModelConfig, cfg: TrainConfig, catalog_size: int) -> str:
    return (f"cfg={cfg.configuration} seed={cfg.seed} lr={cfg.learning_rate} "
            f"batch={cfg.batch_size} epochs={cfg.epochs} l2={cfg.l2} "
            f"dp={model_cfg.d_product} dm={model_cfg.d_model} blocks={model_cfg.n_blocks} "
            f"heads={model_cfg.n_heads} ffn={model_cfg.d_ffn} drop={model_cfg.dropout} "
            f"style={model_cfg.use_style} maxlen={model_cfg.max_len} P={catalog_size}")


def train(dataset: PreparedDataset, model_cfg: ModelConfig, cfg: TrainConfig,
          style_table: Optional[np.ndarray] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Fit a model on the dataset's train split under one configuration.

    Cart sessions join train/val only for cart configurations; the result
    carries the count actually used so gating is checkable. The returned
    parameters are the best-val-NDCG@5 snapshot.
    """
    if model_cfg.use_style != cfg.use_style:
        raise ConfigError(f"model use_style={model_cfg.use_style} conflicts with "
                          f"configuration {cfg.configuration!r}")
    if cfg.use_style and style_table is None:
        raise ConfigError(f"configuration {cfg.configuration!r} needs a style table")

    def keep(s: Session) -> bool:
        return s.kind == PURCHASE or cfg.use_cart

    train_sessions = [s for s in dataset.train if keep(s)]
    val_sessions = [s for s in dataset.val if keep(s)]
    if not train_sessions or not val_sessions:
        raise ConfigError(f"configuration {cfg.configuration!r} leaves an empty "
                          f"train or val split")
    cart_used = sum(s.kind == CART for s in train_sessions + val_sessions)

    P = dataset.catalog_size
    max_len = model_cfg.max_len
    ids, mask, truth = _session_arrays(train_sessions, max_len)
    pos_enc = positional_encoding(max_len, model_cfg.d_model)
    params = init_params(model_cfg, P, cfg.seed)
    adam = Adam(params, cfg.learning_rate)
    exclusions = _train_exclusions(train_sessions, P)
    val_mode = _pick_eval_mode(cfg, list(dataset.val) + list(dataset.test), P)
    n = len(train_sessions)

    history: List[dict] = []
    best_epoch = -1
    best_ndcg = -1.0
    best_state: Dict[str, np.ndarray] = {}
    for epoch in range(cfg.epochs):
        order = rng_for(cfg.seed, "shuffle", epoch).permutation(n)
        neg_rng = rng_for(cfg.seed, "train-neg", epoch)
        negatives = np.array([_train_negative(neg_rng, P, exclusions[i]) for i in order],
                             dtype=np.int64)
        total = 0.0
        batches = 0
        for b0 in range(0, n, cfg.batch_size):
            sel = order[b0:b0 + cfg.batch_size]
            seeds = SeedStream(cfg.seed, "dropout", epoch, b0)
            loss = training_loss(params, ids[sel], mask[sel], truth[sel],
                                 negatives[b0:b0 + cfg.batch_size], pos_enc,
                                 style_table, training=True, seeds=seeds)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"training diverged: loss {value} at epoch {epoch}, "
                                   f"batch {batches}")
            grads = T.backward(loss)
            by_name = {}
            for name, t in params.items():
                g = grads.get(t)
                if g is None:
                    continue
                if cfg.l2:
                    g = g + 2.0 * cfg.l2 * t.data
                by_name[name] = g
            # padding row stays frozen: drop whatever the scatter put there
            if "product_emb" in by_name:
                by_name["product_emb"][0] = 0.0
            adam.step(by_name)
            total += value + l2_penalty(params, cfg.l2)
            batches += 1
        val_report = evaluate(params, val_sessions, mode=val_mode,
                              n_negatives=cfg.eval_negatives, seed=cfg.seed,
                              style_table=style_table)
        entry = {"epoch": epoch, "loss": total / batches,
                 "val": dict(val_report.values)}
        history.append(entry)
        if log:
            log(f"epoch {epoch}: loss {entry['loss']:.4f} "
                f"val NDCG@5 {val_report['NDCG@5']:.4f}")
        if val_report["NDCG@5"] > best_ndcg:
            best_ndcg = val_report["NDCG@5"]
            best_epoch = epoch
            best_state = {name: t.data.copy() for name, t in params.items()}
    for name, t in params.items():
        t.data = best_state[name]
    return TrainResult(params=params, history=history, best_epoch=best_epoch,
                       best_val_ndcg5=best_ndcg, val_mode=val_mode,
                       cart_sessions_used=cart_used,
                       fingerprint=_fingerprint(model_cfg, cfg, P))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _eval_candidates(session: Session, catalog_size: int, mode: str,
                     n_negatives: int, seed: int) -> np.ndarray:
    truth = session.items[-1]
    if mode == NEGSAMPLE:
        negs = sample_negatives(session.items, catalog_size, n_negatives,
                                derive_seed(seed, "eval-neg", session.session_id))
        return np.concatenate(([truth], negs))
    exclude = set(session.items) - {truth}
    keep = np.ones(catalog_size + 1, dtype=bool)
    keep[0] = False
    if exclude:
        keep[list(exclude)] = False
    return np.flatnonzero(keep)


def evaluate(params: ModelParams, sessions: Sequence[Session], *, mode: str = NEGSAMPLE,
             n_negatives: int = 100, seed: int = 0,
             style_table: Optional[np.ndarray] = None,
             batch_size: int = 256) -> MetricsReport:
    """Rank the true next product for every session; aggregate HR/NDCG/MRR."""
    if not sessions:
        raise ContractError("evaluate needs at least one session")
    cfg = params.config
    max_len = cfg.max_len
    pos_enc = positional_encoding(max_len, cfg.d_model)
    ids, mask, truth = _session_arrays(sessions, max_len)
    ranks = []
    with T.no_grad():
        for b0 in range(0, len(sessions), batch_size):
            sel = slice(b0, b0 + batch_size)
            hidden = encode(ids[sel], mask[sel], params, pos_enc, style_table)
            hist = history_vector(hidden, mask[sel], params).data
            for r, session in enumerate(sessions[b0:b0 + batch_size]):
                cands = _eval_candidates(session, params.catalog_size, mode,
                                         n_negatives, seed)
                scores = score(hist[r], cands, params)
                ranks.append(rank_of_truth(scores, cands, truth[b0 + r]))
    return MetricsReport(mode=mode, ranks=ranks)


def evaluate_with_scorer(sessions: Sequence[Session], catalog_size: int,
                         scorer: Callable[[Session, np.ndarray], np.ndarray], *,
                         mode: str = NEGSAMPLE, n_negatives: int = 100,
                         seed: int = 0) -> MetricsReport:
    """Protocol-identical evaluation for model-free scorers (baselines)."""
    if not sessions:
        raise ContractError("evaluate needs at least one session")
    ranks = []
    for session in sessions:
        cands = _eval_candidates(session, catalog_size, mode, n_negatives, seed)
        scores = np.asarray(scorer(session, cands), dtype=np.float64)
        ranks.append(rank_of_truth(scores, cands, session.items[-1]))
    return MetricsReport(mode=mode, ranks=ranks)


def popularity_scorer(train_sessions: Sequence[Session], catalog_size: int):
    """Scores candidates by training-set frequency."""
    counts = np.zeros(catalog_size + 1, dtype=np.float64)
    for s in train_sessions:
        for item in s.items:
            counts[item] += 1.0

    def scorer(session: Session, candidates: np.ndarray) -> np.ndarray:
        return counts[candidates]

    return scorer


def random_scorer(seed: int):
    """Uniform random scores, deterministic per session."""

    def scorer(session: Session, candidates: np.ndarray) -> np.ndarray:
        return rng_for(seed, "random-score", session.session_id).random(len(candidates))

    return scorer


def oracle_scorer(oracle):
    """Scores candidates with the true Markov next-item distribution."""

    def scorer(session: Session, candidates: np.ndarray) -> np.ndarray:
        dist = oracle.next_distribution(list(session.items[:-1]))
        return dist[candidates - 1]

    return scorer


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_configuration_suite(dataset: PreparedDataset, model_kwargs: dict,
                            base_cfg: TrainConfig,
                            style_table: Optional[np.ndarray] = None, *,
                            test_mode: Optional[str] = None,
                            log: Optional[Callable[[str], None]] = None) -> Dict[str, dict]:
    """Train and test all four data configurations with shared seeds.

    ``model_kwargs`` must not pin use_style; each configuration sets it.
    The test split is identical across configurations by construction.
    """
    if "use_style" in model_kwargs:
        raise ConfigError("use_style is decided per configuration")
    results: Dict[str, dict] = {}
    for name in CONFIGURATIONS:
        cfg = replace(base_cfg, configuration=name)
        model_cfg = ModelConfig(use_style=cfg.use_style, **model_kwargs)
        table = style_table if cfg.use_style else None
        if cfg.use_style and style_table is None:
            raise ConfigError(f"configuration {name!r} needs a style table")
        if log:
            log(f"training configuration {name}")
        result = train(dataset, model_cfg, cfg, style_table=table, log=log)
        mode = test_mode or result.val_mode
        report = evaluate(result.params, dataset.test, mode=mode,
                          n_negatives=cfg.eval_negatives, seed=cfg.seed,
                          style_table=table)
        results[name] = {"result": result, "report": report}
    return results


def dynamic_experiment(raw_sessions: Sequence[Session], max_lens: Sequence[int],
                       model_kwargs: dict, cfg: TrainConfig,
                       style_table: Optional[np.ndarray] = None, *,
                       train_frac: float = 14.0 / 18.0, val_frac: float = 2.0 / 18.0,
                       log: Optional[Callable[[str], None]] = None) -> List[Tuple[int, MetricsReport]]:
    """Retrain and test at each maximum session length; returns the curve."""
    if not max_lens:
        raise ConfigError("dynamic experiment needs at least one max_len")
    if any(m < 2 for m in max_lens):
        raise ConfigError("max_len values must be >= 2")
    if "use_style" in model_kwargs or "max_len" in model_kwargs:
        raise ConfigError("the experiment owns use_style and max_len; leave them out")
    curve = []
    for max_len in max_lens:
        ds = prepare_dataset(raw_sessions, max_len=max_len,
                             train_frac=train_frac, val_frac=val_frac)
        model_cfg = ModelConfig(use_style=cfg.use_style, max_len=max_len, **model_kwargs)
        if log:
            log(f"dynamic: max_len {max_len}")
        result = train(ds, model_cfg, cfg, style_table=style_table, log=log)
        report = evaluate(result.params, ds.test, mode=result.val_mode,
                          n_negatives=cfg.eval_negatives, seed=cfg.seed,
                          style_table=style_table)
        curve.append((max_len, report))
    return curve


def curve_series(curve: List[Tuple[int, MetricsReport]], column: str) -> str:
    """Two-column plot-ready series: max_len and one metric per line."""
    return "\n".join(f"{max_len} {report[column]:.6f}" for max_len, report in curve)


@dataclass
class SweepRun:
    hidden_dim: int
    l2: float
    val_ndcg5: float
    best_epoch: int
    fingerprint: str


@dataclass
class SweepResult:
    best: SweepRun
    best_result: TrainResult
    runs: List[SweepRun]


def sweep_order_key(run: SweepRun):
    """Best val NDCG@5 first; ties prefer smaller hidden dim, then smaller L2."""
    return (-run.val_ndcg5, run.hidden_dim, run.l2)


def sweep(dataset: PreparedDataset, model_kwargs: dict, cfg: TrainConfig,
          style_table: Optional[np.ndarray] = None, *, budget: Optional[int] = None,
          log: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Grid search over hidden (feed-forward) dims and L2 penalties.

    Deterministic order; selection by val NDCG@5, ties broken by smaller
    hidden dim, then smaller L2.
    """
    if "d_ffn" in model_kwargs or "use_style" in model_kwargs:
        raise ConfigError("the sweep owns d_ffn and use_style; leave them out")
    combos = [(h, lam) for h in cfg.hidden_dim_grid for lam in cfg.l2_grid]
    if budget is not None:
        if budget < 1:
            raise ConfigError("sweep budget must be >= 1")
        combos = combos[:budget]
    runs: List[SweepRun] = []
    best_key = None
    best_result: Optional[TrainResult] = None
    for hidden, lam in combos:
        model_cfg = ModelConfig(use_style=cfg.use_style, d_ffn=hidden, **model_kwargs)
        run_cfg = replace(cfg, l2=lam)
        if log:
            log(f"sweep: hidden {hidden}, l2 {lam}")
        result = train(dataset, model_cfg, run_cfg, style_table=style_table)
        run = SweepRun(hidden_dim=hidden, l2=lam, val_ndcg5=result.best_val_ndcg5,
                       best_epoch=result.best_epoch, fingerprint=result.fingerprint)
        runs.append(run)
        key = sweep_order_key(run)
        if best_key is None or key < best_key:
            best_key = key
            best_result = result
    best = min(runs, key=sweep_order_key)
    return SweepResult(best=best, best_result=best_result, runs=runs)
