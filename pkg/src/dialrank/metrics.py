"""Retrieval metrics, score ensembling, and the loss-share diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ranking_from_scores",
    "rank_metrics",
    "ndcg",
    "ensemble_scores",
    "loss_share_diagnostic",
    "LossShareDiagnostic",
    "MetricsReport",
]


def ranking_from_scores(scores) -> list[int]:
    """Candidate indices by descending score; ties break on ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def rank_metrics(ranking, gt_index: int):
    """Reciprocal rank, hit@1/5/10, and the 1-based rank of the ground truth."""
    try:
        rank = list(ranking).index(gt_index) + 1
    except ValueError:
        raise ValueError(f"ground-truth index {gt_index} absent from ranking") from None
    rr = 1.0 / rank
    return rr, float(rank <= 1), float(rank <= 5), float(rank <= 10), float(rank)


def ndcg(ranking, relevance) -> float:
    """Normalized discounted cumulative gain at k = #(relevance > 0).

    With no relevant option at all, every ranking is ideal and the value
    is defined as 1.0.
    """
    if relevance is None:
        raise ValueError("ndcg requires a relevance vector")
    rel = np.asarray(relevance, dtype=np.float64)
    ranking = list(ranking)
    if len(rel) != len(ranking):
        raise ValueError(f"relevance length {len(rel)} does not match ranking length {len(ranking)}")
    if rel.min() < 0 or rel.max() > 1:
        raise ValueError("relevance values must lie in [0, 1]")
    k = int((rel > 0).sum())
    if k == 0:
        return 1.0
    dcg = sum(rel[ranking[i]] / math.log2(i + 2) for i in range(k))
    ideal = np.sort(rel)[::-1]
    idcg = sum(ideal[i] / math.log2(i + 2) for i in range(k))
    return dcg / idcg


def ensemble_scores(score_vectors) -> np.ndarray:
    """Elementwise sum of per-model score vectors over the same candidates."""
    vectors = [np.asarray(v, dtype=np.float64) for v in score_vectors]
    if not vectors:
        raise ValueError("ensemble of zero score vectors")
    length = len(vectors[0])
    for i, v in enumerate(vectors[1:], start=1):
        if len(v) != length:
            raise ValueError(f"score vector {i} has length {len(v)}, expected {length}")
    total = np.zeros(length)
    for v in vectors:
        total += v
    return total


@dataclass
class LossShareDiagnostic:
    """Cumulative normalized loss over score-margin bins at one temperature.

    ``easy_share`` is the exact share contributed by margins strictly below
    zero; the binned curve is for plotting.
    """

    tau: float
    bin_edges: list[float]
    cumulative: list[float]
    easy_share: float

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "bin_edges": self.bin_edges,
            "cumulative": self.cumulative,
            "easy_negative_share": self.easy_share,
        }


def loss_share_diagnostic(margins, tau: float, n_bins: int = 50) -> LossShareDiagnostic:
    """How the tempered listwise loss is distributed over score margins.

    Each non-ground-truth candidate contributes exp(margin / tau); shares
    are normalized so the curve ends at 1.0. Contributions are shifted by
    the max margin before exponentiation, which leaves shares unchanged
    but avoids overflow.
    """
    m = np.asarray(list(margins), dtype=np.float64)
    if m.size == 0:
        raise ValueError("loss share diagnostic needs at least one margin")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    w = np.exp((m - m.max()) / tau)
    total = w.sum()
    easy = float(w[m < 0].sum() / total)
    lo, hi = float(m.min()), float(m.max())
    if lo == hi:
        edges = np.array([lo, hi])
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    cumulative = [float(w[m <= e].sum() / total) for e in edges]
    return LossShareDiagnostic(tau, [float(e) for e in edges], cumulative, easy)


@dataclass
class MetricsReport:
    """Per-turn retrieval metrics averaged over a dataset."""

    ndcg: float
    mrr: float
    r1: float
    r5: float
    r10: float
    mean_rank: float
    turns: int
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def aggregate(cls, per_turn, diagnostics=None) -> "MetricsReport":
        """Average (ndcg, rr, hit1, hit5, hit10, rank) tuples over turns."""
        rows = list(per_turn)
        if not rows:
            raise ValueError("cannot aggregate zero turns")
        arr = np.asarray(rows, dtype=np.float64)
        means = arr.mean(axis=0)
        return cls(
            ndcg=float(means[0]),
            mrr=float(means[1]),
            r1=float(means[2]),
            r5=float(means[3]),
            r10=float(means[4]),
            mean_rank=float(means[5]),
            turns=len(rows),
            diagnostics=diagnostics or {},
        )

    def to_dict(self) -> dict:
        return {
            "ndcg": self.ndcg,
            "mrr": self.mrr,
            "r1": self.r1,
            "r5": self.r5,
            "r10": self.r10,
            "mean_rank": self.mean_rank,
            "turns": self.turns,
            "diagnostics": self.diagnostics,
        }
