"""Sequence decoder that scores answers by their word probabilities.

The decoder LSTM starts from the question encoding and reads the previous
word at each step; the fused context embedding enters every step as a
fixed side input rather than initializing the state. Cumulative log
probability of an answer (including its END step) doubles as the stage-one
score, and beam search turns the same machinery into a candidate
generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import END, START, LstmParams, lstm_step
from .fusion import MfbParams, mfb_fuse
from .tensor import Tensor, add, gather, logsumexp, matmul, no_grad, reshape, softmax, sub


@dataclass
class DecoderParams:
    """Decoder LSTM, context fusion, and output projection to word space."""

    lstm: LstmParams
    mfb: MfbParams
    W_out: Tensor
    b_out: Tensor
    table: Tensor
    start_index: int = START
    end_index: int = END

    def __post_init__(self):
        if self.W_out.shape[1] != self.b_out.shape[0]:
            raise ValueError(
                f"output projection {self.W_out.shape} does not match bias {self.b_out.shape}"
            )
        if self.table.shape[0] != self.W_out.shape[1]:
            raise ValueError(
                f"output projection maps to {self.W_out.shape[1]} words but the embedding "
                f"table has {self.table.shape[0]} rows"
            )

    @property
    def vocab_size(self) -> int:
        return self.W_out.shape[1]

    @classmethod
    def create(cls, emb_dim: int, d: int, l: int, k: int, vocab_size: int, table: Tensor, rng,
               scale: float = 0.08) -> "DecoderParams":
        return cls(
            lstm=LstmParams(emb_dim, d, 1, rng, scale),
            mfb=MfbParams.create(d, l, k, l, rng, scale),
            W_out=Tensor(rng.uniform(-scale, scale, (l, vocab_size)), requires_grad=True),
            b_out=Tensor(np.zeros(vocab_size), requires_grad=True),
            table=table,
        )

    def parameters(self, prefix: str):
        yield from self.lstm.parameters(f"{prefix}.lstm")
        yield from self.mfb.parameters(f"{prefix}.mfb")
        yield f"{prefix}.W_out", self.W_out
        yield f"{prefix}.b_out", self.b_out


def _step_logits(h: Tensor, c: Tensor, w_prev: int, e_p: Tensor, p: DecoderParams):
    d = p.lstm.hidden_dim
    x = gather(p.table, np.array([w_prev], dtype=np.intp))
    W, b = p.lstm.layers[0]
    h2, c2 = lstm_step(x, h, c, W, b)
    fused = mfb_fuse(reshape(h2, (d,)), e_p, p.mfb)
    logits = add(matmul(fused, p.W_out), p.b_out)
    return logits, h2, c2


def decode_step(h: Tensor, c: Tensor, w_prev: int, e_p: Tensor, p: DecoderParams):
    """One decoding step: next-word distribution plus the new LSTM state.

    ``e_p`` must be the same tensor at every step of one answer; it is a
    per-turn constant, not part of the recurrent state.
    """
    logits, h2, c2 = _step_logits(h, c, w_prev, e_p, p)
    return softmax(logits, axis=0), h2, c2


def initial_state(h0: Tensor, p: DecoderParams):
    """Decoder start state: hidden from the question encoding, zero cell."""
    d = p.lstm.hidden_dim
    return reshape(h0, (1, d)), Tensor(np.zeros((1, d)))


def answer_log_prob(answer, h0: Tensor, e_p: Tensor, p: DecoderParams) -> Tensor:
    """Cumulative log probability of an answer, END step included.

    This is the candidate's stage-one score; negated for the ground truth
    it is the generative training loss.
    """
    answer = list(answer)
    if not answer:
        raise ValueError("cannot score an empty answer")
    h, c = initial_state(h0, p)
    total = None
    prev = p.start_index
    for target in answer + [p.end_index]:
        logits, h, c = _step_logits(h, c, prev, e_p, p)
        step = sub(gather(logits, [target]), logsumexp(logits))
        total = step if total is None else add(total, step)
        prev = target
    return reshape(total, ())


@dataclass
class BeamState:
    """Search frontier: open prefixes plus finished sequences.

    Partial sequences never contain END; complete ones end with it. Both
    lists stay sorted by cumulative log probability, best first.
    """

    partial: list = field(default_factory=list)  # (tokens, logp, h, c, prev)
    complete: list = field(default_factory=list)  # (tokens, logp)


def beam_search(h0: Tensor, e_p: Tensor, beam_width: int, max_len: int, p: DecoderParams):
    """Breadth-limited search for high-probability answers.

    Every step extends each open prefix with the whole vocabulary, keeps
    the beam_width best extensions by cumulative log probability, and
    retires those ending in END to the complete list. Prefixes still open
    at max_len are returned as-is. Result: up to beam_width
    (token tuple, log prob) pairs, best first; finished sequences include
    their trailing END.
    """
    if beam_width < 1:
        raise ValueError(f"beam width must be >= 1, got {beam_width}")
    if max_len < 1:
        raise ValueError(f"max length must be >= 1, got {max_len}")
    vocab = p.vocab_size
    with no_grad():
        h, c = initial_state(h0, p)
        state = BeamState(partial=[((), 0.0, h, c, p.start_index)])
        for _ in range(max_len):
            extensions = []
            for seq, lp, h, c, prev in state.partial:
                dist, h2, c2 = decode_step(h, c, prev, e_p, p)
                with np.errstate(divide="ignore"):
                    step_lp = np.log(dist.data)
                for tok in range(vocab):
                    extensions.append((seq + (tok,), lp + step_lp[tok], h2, c2, tok))
            extensions.sort(key=lambda e: (-e[1], e[0]))
            state.partial = []
            for seq, lp, h2, c2, tok in extensions[:beam_width]:
                if tok == p.end_index:
                    state.complete.append((seq, lp))
                else:
                    state.partial.append((seq, lp, h2, c2, tok))
            if not state.partial:
                break
        state.complete.extend((seq, lp) for seq, lp, _, _, _ in state.partial)
        state.complete.sort(key=lambda e: (-e[1], e[0]))
        return state.complete[:beam_width]
