"""Two-stage candidate ranking: listwise scoring, selection, re-scoring.

Stage one scores every candidate against the fused context embedding and
trains with a temperature-scaled listwise loss. Stage two re-encodes each
selected answer jointly with its question, learns a fresh image attention
per candidate, and re-scores with softmax cross entropy. Rank fusion puts
the re-scored subset ahead of everything else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import AttentionParams, MfbParams, attend, mfb_fuse, mfb_fuse_multi
from .metrics import ranking_from_scores
from .tensor import Tensor, concat, gather, logsumexp, matmul, mul, narrow, reshape, sub, tanh


@dataclass
class EncodedContext:
    """Everything stage one derives from one turn's question, history, image.

    m_q: question encoding [d]; U: history encodings [d x t];
    alpha_h / m_h: history attention weights and read-out; V: object
    features [d x n]; m_v: attended image vector; e_p: fused context [l].
    """

    m_q: Tensor
    U: Tensor
    alpha_h: Tensor
    m_h: Tensor
    V: Tensor
    m_v: Tensor
    e_p: Tensor


@dataclass
class StageScores:
    """Scores a turn accumulates on its way through both stages."""

    primary: np.ndarray
    selected: list[int] | None = None
    synergy: np.ndarray | None = None
    ranking: list[int] | None = None


def primary_score(e_p: Tensor, answer_encodings: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Dot-similarity scores: e_p . tanh(W m_a + b) for each candidate row."""
    proj = tanh(matmul(answer_encodings, W) + b)
    return matmul(proj, e_p)


def npair_temperature_loss(scores: Tensor, gt_index: int, tau: float) -> Tensor:
    """Listwise log-sum-exp of score margins against the ground truth.

    Dividing margins by tau < 1 shrinks the contribution of candidates
    already scored below the ground truth and amplifies those above it.
    The ground-truth term contributes exp(0), so the loss is nonnegative.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if scores.shape[0] < 2:
        raise ValueError(f"need at least two candidates, got {scores.shape[0]}")
    s_gt = gather(scores, [gt_index])
    return logsumexp(mul(sub(scores, s_gt), 1.0 / tau))


def select_candidates(
    scores: np.ndarray,
    n_select: int,
    m_pool: int,
    mode: str,
    gt_index: int | None = None,
    rng=None,
) -> list[int]:
    """Pick the stage-two candidate subset.

    Test mode takes the top n_select by score. Train mode samples
    n_select - 1 uniformly without replacement from the top m_pool
    (excluding the ground truth) and always includes the ground truth,
    even when it fell outside the pool. Output is sorted by descending
    score with ascending-index tie-break.
    """
    scores = np.asarray(scores, dtype=np.float64)
    C = len(scores)
    if not (1 <= n_select <= m_pool <= C):
        raise ValueError(f"need 1 <= N <= M <= C, got N={n_select} M={m_pool} C={C}")
    order = ranking_from_scores(scores)
    if mode == "test":
        return order[:n_select]
    if mode != "train":
        raise ValueError(f"unknown selection mode: {mode!r}")
    if gt_index is None:
        raise ValueError("train-mode selection requires the ground-truth index")
    if rng is None:
        raise ValueError("train-mode selection requires an rng")
    pool = [i for i in order[:m_pool] if i != gt_index]
    chosen = [gt_index]
    if n_select > 1:
        picks = rng.choice(len(pool), size=n_select - 1, replace=False)
        chosen.extend(pool[j] for j in sorted(picks))
    return sorted(chosen, key=lambda i: (-scores[i], i))


@dataclass
class SynergyParams:
    """Stage-two parameters: per-candidate image attention, fusion, scorer."""

    mfb_att: MfbParams
    att: AttentionParams
    mfb_out: MfbParams
    w_score: Tensor
    b_score: Tensor

    @classmethod
    def create(cls, d: int, k: int, l: int, rng, scale: float = 0.08) -> "SynergyParams":
        return cls(
            mfb_att=MfbParams.create(2 * d, d, k, l, rng, scale),
            att=AttentionParams.create(l, rng, scale),
            mfb_out=MfbParams.create(2 * d, d, k, l, rng, scale),
            w_score=Tensor(rng.uniform(-scale, scale, l), requires_grad=True),
            b_score=Tensor(np.zeros(1), requires_grad=True),
        )

    def parameters(self, prefix: str):
        yield from self.mfb_att.parameters(f"{prefix}.mfb_att")
        yield from self.att.parameters(f"{prefix}.att")
        yield from self.mfb_out.parameters(f"{prefix}.mfb_out")
        yield f"{prefix}.w_score", self.w_score
        yield f"{prefix}.b_score", self.b_score


def synergistic_score(qa_encodings: Tensor, m_h: Tensor, V: Tensor, p: SynergyParams) -> Tensor:
    """Re-score selected candidates from their joint question-answer encodings.

    ``qa_encodings`` is [N x d]; ``m_h`` is the attended history reused from
    stage one and ``V`` the shared object features. Every candidate learns
    its own image attention map before the final fusion and linear score.
    """
    n, d = qa_encodings.shape
    scores = []
    for j in range(n):
        m_b = reshape(narrow(qa_encodings, 0, j, j + 1), (d,))
        query = concat([m_b, m_h])
        z = mfb_fuse_multi(query, V, p.mfb_att)
        _, m_r = attend(z, V, p.att)
        e_r = mfb_fuse(query, m_r, p.mfb_out)
        scores.append(matmul(p.w_score, e_r) + p.b_score)
    return concat(scores)


def synergy_cross_entropy(scores: Tensor, labels) -> Tensor:
    """Softmax cross entropy of stage-two scores against a label distribution.

    Labels must be nonnegative and sum to one; a one-hot vector gives the
    hard case, fractional values the soft extension.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != scores.shape:
        raise ValueError(f"labels shape {y.shape} does not match scores shape {scores.shape}")
    if (y < 0).any():
        raise ValueError("labels must be nonnegative")
    if abs(y.sum() - 1.0) > 1e-6:
        raise ValueError(f"labels must sum to 1, got {y.sum()!r}")
    return sub(logsumexp(scores), matmul(scores, Tensor(y)))


def fuse_rankings(primary: np.ndarray, selected, synergy: np.ndarray) -> list[int]:
    """Final ranking: re-scored subset first, the rest in primary order.

    Selected candidates are ordered by descending synergy score and occupy
    the leading ranks; unselected candidates follow in descending primary
    order. Ties break on ascending candidate index.
    """
    primary = np.asarray(primary, dtype=np.float64)
    synergy = np.asarray(synergy, dtype=np.float64)
    selected = list(selected)
    C = len(primary)
    if len(synergy) != len(selected):
        raise ValueError(f"{len(synergy)} synergy scores for {len(selected)} selected candidates")
    if len(set(selected)) != len(selected):
        raise ValueError(f"selected indices overlap: {selected}")
    if selected and (min(selected) < 0 or max(selected) >= C):
        raise ValueError(f"selected index out of range for {C} candidates: {selected}")
    syn_by_idx = {idx: synergy[j] for j, idx in enumerate(selected)}
    head = sorted(selected, key=lambda i: (-syn_by_idx[i], i))
    tail = sorted((i for i in range(C) if i not in syn_by_idx), key=lambda i: (-primary[i], i))
    return head + tail
