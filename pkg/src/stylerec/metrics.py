"""Ranking metrics: rank of the true item, HR/NDCG/MRR at k, reports.

Each test session contributes one rank: the 1-based position of the true
next product after sorting candidates by score, ties broken by ascending
product id. With a single relevant item the ideal DCG is 1, so NDCG at a
rank r within the window is simply 1/log2(r+1); MRR is truncated at k to
match per-k reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ContractError

KS = (5, 10, 20)
NEGSAMPLE = "negsample"
FULL_CATALOG = "full-catalog"

# Table layout: metric-major, k minor
COLUMNS = tuple(f"{m}@{k}" for m in ("HR", "NDCG", "MRR") for k in KS)


def rank_of_truth(scores: Sequence[float], candidate_ids: Sequence[int], truth_id: int) -> int:
    """1 + number of candidates ranked ahead of the truth.

    A candidate ranks ahead if it scores strictly higher, or ties the
    truth's score with a smaller product id.
    """
    s = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(candidate_ids)
    if s.shape != ids.shape or s.ndim != 1:
        raise ContractError(f"scores {s.shape} and candidates {ids.shape} must be 1-D and equal")
    where = np.flatnonzero(ids == truth_id)
    if where.size == 0:
        raise ContractError(f"truth id {truth_id} not among candidates")
    if where.size > 1:
        raise ContractError(f"truth id {truth_id} occurs {where.size} times among candidates")
    s_truth = s[where[0]]
    higher = int((s > s_truth).sum())
    tied_lower = int(((s == s_truth) & (ids < truth_id)).sum())
    return 1 + higher + tied_lower


def metrics_at_k(ranks: Sequence[int], k: int) -> Tuple[float, float, float]:
    """Mean (HR, NDCG, MRR) at cutoff k over per-session ranks."""
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        raise ContractError("metrics over an empty rank list")
    if r.min() < 1:
        raise ContractError(f"ranks are 1-based, got minimum {int(r.min())}")
    hit = r <= k
    hr = float(hit.mean())
    ndcg = float(np.where(hit, 1.0 / np.log2(r + 1.0), 0.0).mean())
    mrr = float(np.where(hit, 1.0 / r, 0.0).mean())
    return hr, ndcg, mrr


@dataclass
class MetricsReport:
    """Evaluation summary: per-session ranks plus HR/NDCG/MRR at 5/10/20."""

    mode: str
    ranks: List[int]
    values: Dict[str, float] = field(init=False)

    def __post_init__(self):
        if self.mode not in (NEGSAMPLE, FULL_CATALOG):
            raise ContractError(f"unknown evaluation mode {self.mode!r}")
        self.ranks = [int(r) for r in self.ranks]
        self.values = {}
        for k in KS:
            hr, ndcg, mrr = metrics_at_k(self.ranks, k)
            self.values[f"HR@{k}"] = hr
            self.values[f"NDCG@{k}"] = ndcg
            self.values[f"MRR@{k}"] = mrr

    def __getitem__(self, column: str) -> float:
        return self.values[column]

    def row(self) -> List[float]:
        return [self.values[c] for c in COLUMNS]

    def machine_lines(self, config_name: str) -> List[str]:
        """One record per metric: config, mode, metric, k, value."""
        lines = []
        for metric in ("HR", "NDCG", "MRR"):
            for k in KS:
                lines.append(f"{config_name} {self.mode} {metric} {k} "
                             f"{self.values[f'{metric}@{k}']:.6f}")
        return lines


def format_report_table(rows: Dict[str, MetricsReport]) -> str:
    """Aligned comparison table, one row per configuration/label."""
    label_w = max(14, max((len(name) for name in rows), default=0) + 1)
    header = f"{'Configurations':<{label_w}}" + "".join(f"{c:>9}" for c in COLUMNS)
    out = [header, "-" * len(header)]
    for name, report in rows.items():
        out.append(f"{name:<{label_w}}" + "".join(f"{v:>9.4f}" for v in report.row()))
    return "\n".join(out)
