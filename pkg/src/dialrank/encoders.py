"""Text side of the pipeline: vocabulary, shared embedding, role LSTMs.

Questions and history items run through two-layer LSTMs; answers and
question-answer pairs through one-layer LSTMs. All roles share one
embedding table. Padding is handled by tracking true lengths: the hidden
state stops updating once a sequence runs out of real tokens, so trailing
PAD never changes the final state.
"""

from __future__ import annotations

import enum
import json
from collections import Counter

import numpy as np

from .tensor import Tensor, concat, gather, matmul, mul, narrow, reshape, sigmoid, tanh

PAD_TOKEN = "PAD"
UNK_TOKEN = "UNK"
START_TOKEN = "START"
END_TOKEN = "END"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, START_TOKEN, END_TOKEN)
PAD, UNK, START, END = 0, 1, 2, 3


class Vocabulary:
    """Token/index table with fixed specials at indices 0..3."""

    def __init__(self, tokens, min_count: int):
        self.tokens = list(SPECIAL_TOKENS) + list(tokens)
        self.min_count = int(min_count)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @classmethod
    def build(cls, corpus, min_count: int) -> "Vocabulary":
        """Keep tokens whose frequency is strictly greater than min_count.

        Ordering is deterministic: frequency descending, then lexicographic.
        Reserved special strings are never counted.
        """
        counts = Counter()
        seen_any = False
        for seq in corpus:
            for tok in seq:
                seen_any = True
                if tok not in SPECIAL_TOKENS:
                    counts[tok] += 1
        if not seen_any:
            raise ValueError("cannot build a vocabulary from an empty corpus")
        kept = [t for t, c in counts.items() if c > min_count]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept, min_count)

    def encode(self, tokens) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, indices) -> list[str]:
        return [self.tokens[i] for i in indices]

    def to_json(self) -> str:
        # Specials are implicit at indices 0..3; only the tail is stored.
        return json.dumps({"tokens": self.tokens[len(SPECIAL_TOKENS) :], "min_count": self.min_count})

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(obj["tokens"], obj["min_count"])

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as f:
            return cls.from_json(f.read())


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class TextRole(enum.Enum):
    """Sequence roles with their LSTM depth and maximum length."""

    QUESTION = ("question", 2, 20)
    HISTORY_ITEM = ("history_item", 2, 40)
    ANSWER = ("answer", 1, 20)
    QA_PAIR = ("qa_pair", 1, 40)

    def __init__(self, label: str, n_layers: int, max_len: int):
        self.label = label
        self.n_layers = n_layers
        self.max_len = max_len


class LstmParams:
    """Stacked LSTM parameters, one fused gate matrix per layer.

    Layer i maps concat(input, hidden) through W_i [(in_i + d) x 4d] plus
    bias b_i [4d]; gate order is input, forget, cell, output.
    """

    def __init__(self, input_dim: int, hidden_dim: int, n_layers: int, rng=None, scale: float = 0.08):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.layers = []
        for i in range(n_layers):
            in_dim = input_dim if i == 0 else hidden_dim
            shape = (in_dim + hidden_dim, 4 * hidden_dim)
            if rng is None:
                w = np.zeros(shape)
            else:
                w = rng.uniform(-scale, scale, shape)
            self.layers.append(
                (Tensor(w, requires_grad=True), Tensor(np.zeros(4 * hidden_dim), requires_grad=True))
            )

    def parameters(self, prefix: str):
        for i, (w, b) in enumerate(self.layers):
            yield f"{prefix}.layer{i}.W", w
            yield f"{prefix}.layer{i}.b", b


def lstm_step(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor):
    """One LSTM cell update for a [B x in] input and [B x d] state."""
    d = h.shape[-1]
    z = matmul(concat([x, h], axis=1), W) + b
    i = sigmoid(narrow(z, 1, 0, d))
    f = sigmoid(narrow(z, 1, d, 2 * d))
    g = tanh(narrow(z, 1, 2 * d, 3 * d))
    o = sigmoid(narrow(z, 1, 3 * d, 4 * d))
    c2 = mul(f, c) + mul(i, g)
    h2 = mul(o, tanh(c2))
    return h2, c2


def run_lstm(tokens: np.ndarray, lengths: np.ndarray, table: Tensor, params: LstmParams) -> Tensor:
    """Encode a padded [B x T] token batch to final hidden states [B x d].

    ``lengths`` holds true lengths; steps beyond a row's length leave its
    state untouched, so the result equals encoding the unpadded sequence.
    """
    B, T = tokens.shape
    if T == 0:
        raise ValueError("cannot encode a zero-length batch")
    d = params.hidden_dim
    step_masks = []
    for t in range(T):
        m = (t < lengths).astype(np.float64)
        if m.all():
            step_masks.append(None)  # no padding active at this step
        else:
            step_masks.append((Tensor(m.reshape(B, 1)), Tensor((1.0 - m).reshape(B, 1))))
    layer_inputs = [gather(table, tokens[:, t]) for t in range(T)]
    h = None
    for W, b in params.layers:
        h = Tensor(np.zeros((B, d)))
        c = Tensor(np.zeros((B, d)))
        outs = []
        for t in range(T):
            h2, c2 = lstm_step(layer_inputs[t], h, c, W, b)
            if step_masks[t] is None:
                h, c = h2, c2
            else:
                m, im = step_masks[t]
                h = mul(m, h2) + mul(im, h)
                c = mul(m, c2) + mul(im, c)
            outs.append(h)
        layer_inputs = outs
    return h


def prepare_tokens(tokens, role: TextRole) -> list[int]:
    """Strip trailing PAD, truncate to the role's max length, and wrap
    answers with START/END."""
    toks = list(tokens)
    while toks and toks[-1] == PAD:
        toks.pop()
    toks = toks[: role.max_len]
    if not toks:
        raise ValueError(f"empty sequence after truncation for role {role.label}")
    if role is TextRole.ANSWER:
        toks = [START] + toks + [END]
    return toks


def encode_text(tokens, role: TextRole, table: Tensor, params: LstmParams) -> Tensor:
    """Encode one token sequence to the final top-layer hidden state [d]."""
    return reshape(encode_text_batch([tokens], role, table, params), (params.hidden_dim,))


def encode_text_batch(sequences, role: TextRole, table: Tensor, params: LstmParams) -> Tensor:
    """Encode several sequences of one role at once; returns [B x d]."""
    if params.n_layers != role.n_layers:
        raise ValueError(
            f"role {role.label} requires a {role.n_layers}-layer LSTM, got {params.n_layers} layers"
        )
    prepared = [prepare_tokens(seq, role) for seq in sequences]
    lengths = np.array([len(p) for p in prepared], dtype=np.intp)
    T = int(lengths.max())
    batch = np.full((len(prepared), T), PAD, dtype=np.intp)
    for r, p in enumerate(prepared):
        batch[r, : len(p)] = p
    return run_lstm(batch, lengths, table, params)


def embed_tokens(tokens, table: Tensor) -> Tensor:
    """Row-lookup of token indices in the shared embedding table."""
    return gather(table, np.asarray(list(tokens), dtype=np.intp))
