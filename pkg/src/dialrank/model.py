"""Parameter container wiring encoders, fusion, and both ranking stages.

One Model instance holds every trainable tensor for either the
discriminative or the generative variant, keyed by a stable path so
checkpoints and the optimizer can address them. The per-turn pipeline
lives here: encode the context, score all candidates, and re-score a
selected subset.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .encoders import LstmParams, TextRole, Vocabulary, encode_text, encode_text_batch
from .fusion import AttentionParams, MfbParams, attend, mfb_fuse, mfb_fuse_multi
from .generative import DecoderParams, answer_log_prob
from .ranking import EncodedContext, SynergyParams, primary_score, synergistic_score
from .tensor import Tensor, concat, no_grad

INIT_SCALE = 0.08


class Model:
    def __init__(self, config: RunConfig, vocab: Vocabulary, rng=None):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.kind = config.model
        if rng is None:
            rng = np.random.default_rng([config.seed, 7])
        d, emb, k, l = config.d, config.emb_dim, config.k, config.l

        self.embedding = Tensor(
            rng.uniform(-INIT_SCALE, INIT_SCALE, (len(vocab), emb)), requires_grad=True
        )
        self.q_lstm = LstmParams(emb, d, TextRole.QUESTION.n_layers, rng, INIT_SCALE)
        self.h_lstm = LstmParams(emb, d, TextRole.HISTORY_ITEM.n_layers, rng, INIT_SCALE)
        self.mfb_h = MfbParams.create(d, d, k, l, rng, INIT_SCALE)
        self.att_h = AttentionParams.create(l, rng, INIT_SCALE)
        self.mfb_v = MfbParams.create(2 * d, d, k, l, rng, INIT_SCALE)
        self.att_v = AttentionParams.create(l, rng, INIT_SCALE)
        self.mfb_e = MfbParams.create(2 * d, d, k, l, rng, INIT_SCALE)

        if self.kind == "discriminative":
            self.ans_lstm = LstmParams(emb, d, TextRole.ANSWER.n_layers, rng, INIT_SCALE)
            self.fd_W = Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, (d, l)), requires_grad=True)
            self.fd_b = Tensor(np.zeros(l), requires_grad=True)
            self.decoder = None
        else:
            self.ans_lstm = None
            self.fd_W = None
            self.fd_b = None
            self.decoder = DecoderParams.create(emb, d, l, k, len(vocab), self.embedding, rng, INIT_SCALE)

        self.qa_lstm = LstmParams(emb, d, TextRole.QA_PAIR.n_layers, rng, INIT_SCALE)
        self.synergy = SynergyParams.create(d, k, l, rng, INIT_SCALE)

        self.params = dict(self._named_parameters())

    def _named_parameters(self):
        yield "embedding.table", self.embedding
        yield from self.q_lstm.parameters("q_lstm")
        yield from self.h_lstm.parameters("h_lstm")
        yield from self.mfb_h.parameters("mfb_h")
        yield from self.att_h.parameters("att_h")
        yield from self.mfb_v.parameters("mfb_v")
        yield from self.att_v.parameters("att_v")
        yield from self.mfb_e.parameters("mfb_e")
        if self.kind == "discriminative":
            yield from self.ans_lstm.parameters("ans_lstm")
            yield "f_d.W", self.fd_W
            yield "f_d.b", self.fd_b
        else:
            yield from self.decoder.parameters("decoder")
        yield from self.qa_lstm.parameters("qa_lstm")
        yield from self.synergy.parameters("synergy")

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) - set(arrays)
            extra = set(arrays) - set(self.params)
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in self.params.items():
            if p.data.shape != arrays[name].shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {arrays[name].shape} vs model {p.data.shape}"
                )
            p.data = arrays[name].astype(np.float64).copy()

    # per-turn pipeline ---------------------------------------------------

    def encode_context(self, question, history_items, V: Tensor) -> EncodedContext:
        """Run the stage-one encoder for one turn.

        ``history_items`` is the list of token sequences [caption,
        (q1 + a1), ...]; it always has at least the caption. ``V`` holds
        object features as columns [d x n].
        """
        if not history_items:
            raise ValueError("history must contain at least the caption")
        m_q = encode_text(question, TextRole.QUESTION, self.embedding, self.q_lstm)
        U_rows = encode_text_batch(history_items, TextRole.HISTORY_ITEM, self.embedding, self.h_lstm)
        U = U_rows.transpose_2d()  # [d x t] columns, one per history item
        z_h = mfb_fuse_multi(m_q, U, self.mfb_h)
        alpha_h, m_h = attend(z_h, U, self.att_h)
        query = concat([m_q, m_h])
        z_v = mfb_fuse_multi(query, V, self.mfb_v)
        _, m_v = attend(z_v, V, self.att_v)
        e_p = mfb_fuse(query, m_v, self.mfb_e)
        return EncodedContext(m_q=m_q, U=U, alpha_h=alpha_h, m_h=m_h, V=V, m_v=m_v, e_p=e_p)

    def encode_answers(self, candidates) -> Tensor:
        """Encode every candidate answer; [C x d]."""
        return encode_text_batch(candidates, TextRole.ANSWER, self.embedding, self.ans_lstm)

    def encode_qa_pairs(self, question, candidates) -> Tensor:
        """Encode question + answer concatenations for stage two; [N x d]."""
        pairs = [list(question) + list(c) for c in candidates]
        return encode_text_batch(pairs, TextRole.QA_PAIR, self.embedding, self.qa_lstm)

    def primary_scores(self, ctx: EncodedContext, candidates) -> Tensor:
        """Stage-one scores for all candidates of a turn; [C]."""
        if self.kind == "discriminative":
            return primary_score(ctx.e_p, self.encode_answers(candidates), self.fd_W, self.fd_b)
        scores = [answer_log_prob(c, ctx.m_q, ctx.e_p, self.decoder) for c in candidates]
        return concat([s.reshape((1,)) for s in scores])

    def primary_scores_np(self, ctx: EncodedContext, candidates) -> np.ndarray:
        with no_grad():
            return self.primary_scores(ctx, candidates).data.copy()

    def synergy_scores(self, ctx: EncodedContext, question, selected_candidates) -> Tensor:
        """Stage-two scores for the selected candidates; [N]."""
        qa = self.encode_qa_pairs(question, selected_candidates)
        return synergistic_score(qa, ctx.m_h, ctx.V, self.synergy)
