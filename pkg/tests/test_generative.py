"""Decoder probabilities, answer scoring, and beam search against oracles."""

import numpy as np
import pytest

from dialrank.encoders import LstmParams
from dialrank.fusion import MfbParams
from dialrank.generative import DecoderParams, answer_log_prob, beam_search, decode_step, initial_state
from dialrank.gradcheck import check_gradients
from dialrank.tensor import Tensor, mul, no_grad, tensor_sum


def make_decoder(vocab=3, emb=3, d=4, l=4, k=2, seed=0, end_index=None):
    rng = np.random.default_rng(seed)
    table = Tensor(rng.normal(size=(vocab, emb)) * 0.5, requires_grad=True)
    p = DecoderParams.create(emb, d, l, k, vocab, table, rng, scale=0.5)
    # toy vocabularies are smaller than the canonical START/END positions
    p.start_index = 0
    p.end_index = vocab - 1 if end_index is None else end_index
    return p, rng


def make_inputs(p, d=4, l=4, seed=1):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=d)), Tensor(rng.normal(size=l))


def enumerate_leaves(h0, e_p, p, max_len):
    """Every sequence the decoder can emit in max_len steps with its exact
    cumulative log probability: END-terminated ones plus open prefixes of
    full length. Depth-first expansion over the whole vocabulary."""
    results = []

    def walk(seq, lp, h, c, prev):
        if len(seq) == max_len:
            results.append((seq, lp))
            return
        dist, h2, c2 = decode_step(h, c, prev, e_p, p)
        with np.errstate(divide="ignore"):
            lps = np.log(dist.data)
        for tok in range(p.vocab_size):
            nxt = seq + (tok,)
            if tok == p.end_index:
                results.append((nxt, lp + lps[tok]))
            else:
                walk(nxt, lp + lps[tok], h2, c2, tok)

    with no_grad():
        h, c = initial_state(h0, p)
        walk((), 0.0, h, c, p.start_index)
    results.sort(key=lambda e: (-e[1], e[0]))
    return results


def greedy_decode(h0, e_p, p, max_len):
    with no_grad():
        h, c = initial_state(h0, p)
        seq, lp, prev = (), 0.0, p.start_index
        for _ in range(max_len):
            dist, h, c = decode_step(h, c, prev, e_p, p)
            tok = int(np.argmax(dist.data))
            seq += (tok,)
            lp += float(np.log(dist.data[tok]))
            if tok == p.end_index:
                break
            prev = tok
    return seq, lp


def simulate_beam(h0, e_p, p, width, max_len):
    """Step-by-step re-derivation of the pruning rule, kept independent of
    the production implementation."""
    with no_grad():
        h, c = initial_state(h0, p)
        frontier = [((), 0.0, h, c, p.start_index)]
        done = []
        for _ in range(max_len):
            if not frontier:
                break
            pool = []
            for seq, lp, h, c, prev in frontier:
                dist, h2, c2 = decode_step(h, c, prev, e_p, p)
                with np.errstate(divide="ignore"):
                    lps = np.log(dist.data)
                pool.extend((seq + (t,), lp + lps[t], h2, c2, t) for t in range(p.vocab_size))
            pool.sort(key=lambda e: (-e[1], e[0]))
            top = pool[:width]
            frontier = [e for e in top if e[4] != p.end_index]
            done.extend((e[0], e[1]) for e in top if e[4] == p.end_index)
        done.extend((e[0], e[1]) for e in frontier)
        done.sort(key=lambda e: (-e[1], e[0]))
        return done[:width]


class TestDecodeStep:
    def test_distribution_sums_to_one(self):
        for seed in range(10):
            p, _ = make_decoder(vocab=5, seed=seed)
            h0, e_p = make_inputs(p, seed=seed + 100)
            h, c = initial_state(h0, p)
            dist, _, _ = decode_step(h, c, p.start_index, e_p, p)
            assert dist.data.sum() == pytest.approx(1.0, abs=1e-9)
            assert (dist.data > 0).all()

    def test_zero_projection_gives_uniform(self):
        p, _ = make_decoder(vocab=6)
        p.W_out.data[:] = 0.0
        p.b_out.data[:] = 0.0
        h0, e_p = make_inputs(p)
        h, c = initial_state(h0, p)
        dist, _, _ = decode_step(h, c, p.start_index, e_p, p)
        np.testing.assert_allclose(dist.data, np.full(6, 1 / 6), atol=1e-15)

    def test_context_vector_constant_across_steps(self):
        # answer_log_prob must feed the identical context tensor into every
        # step: replaying decode_step with that same tensor reproduces it.
        p, _ = make_decoder()
        h0, e_p = make_inputs(p)
        answer = [0, 1, 0]
        total = answer_log_prob(answer, h0, e_p, p).item()
        with no_grad():
            h, c = initial_state(h0, p)
            replay, prev = 0.0, p.start_index
            for target in answer + [p.end_index]:
                dist, h, c = decode_step(h, c, prev, e_p, p)
                replay += float(np.log(dist.data[target]))
                prev = target
        assert total == pytest.approx(replay, abs=1e-12)

    def test_gradient(self):
        p, rng = make_decoder(seed=3)
        h0 = Tensor(np.random.default_rng(4).normal(size=4), requires_grad=True)
        e_p = Tensor(np.random.default_rng(5).normal(size=4), requires_grad=True)
        w = Tensor(np.random.default_rng(6).normal(size=3))
        wrt = [h0, e_p, p.table, p.W_out, p.b_out, p.mfb.U, p.mfb.V] + [
            t for _, t in p.lstm.parameters("lstm")
        ]

        def f():
            h, c = initial_state(h0, p)
            dist, _, _ = decode_step(h, c, 1, e_p, p)
            return tensor_sum(mul(dist, w))

        assert check_gradients(f, wrt) < 1e-6


class TestAnswerLogProb:
    def test_forced_path_scores_zero(self):
        # A one-token vocabulary puts probability 1 on the target path at
        # every step regardless of parameters, so the log prob is exactly 0.
        p, _ = make_decoder(vocab=1, seed=2)
        h0, e_p = make_inputs(p)
        assert answer_log_prob([0], h0, e_p, p).item() == pytest.approx(0.0, abs=1e-12)
        assert answer_log_prob([0, 0, 0], h0, e_p, p).item() == pytest.approx(0.0, abs=1e-12)

    def test_dominant_bias_drives_probability_to_one(self):
        p, _ = make_decoder(vocab=3)
        h0, e_p = make_inputs(p)
        p.W_out.data[:] = 0.0
        p.b_out.data[:] = 0.0
        p.b_out.data[1] = 500.0
        with no_grad():
            h, c = initial_state(h0, p)
            dist, _, _ = decode_step(h, c, p.start_index, e_p, p)
        assert dist.data[1] == pytest.approx(1.0)

    def test_empty_answer_rejected(self):
        p, _ = make_decoder()
        h0, e_p = make_inputs(p)
        with pytest.raises(ValueError, match="empty answer"):
            answer_log_prob([], h0, e_p, p)

    def test_monotone_nonincreasing_in_extension(self):
        p, _ = make_decoder(vocab=4, seed=7)
        h0, e_p = make_inputs(p, seed=8)
        base = answer_log_prob([0, 1], h0, e_p, p).item()
        longer = answer_log_prob([0, 1, 2], h0, e_p, p).item()
        # extending by one token adds log p(tok) + changes only the END
        # position; compare against the prefix *without* its END step.
        with no_grad():
            h, c = initial_state(h0, p)
            prefix_lp, prev = 0.0, p.start_index
            for target in [0, 1]:
                dist, h, c = decode_step(h, c, prev, e_p, p)
                prefix_lp += float(np.log(dist.data[target]))
                prev = target
        assert longer <= prefix_lp + 1e-12
        assert base <= prefix_lp + 1e-12

    def test_probability_mass_at_most_one(self):
        # all END-free answers up to length 3, END appended by the scorer
        p, _ = make_decoder(vocab=3, seed=9)
        h0, e_p = make_inputs(p, seed=10)
        tokens = [t for t in range(3) if t != p.end_index]
        total = 0.0
        for length in (1, 2, 3):
            for answer in np.stack(np.meshgrid(*([tokens] * length)), axis=-1).reshape(-1, length):
                total += float(np.exp(answer_log_prob(list(answer), h0, e_p, p).item()))
        assert total <= 1.0 + 1e-9

    def test_gradient_of_generative_loss(self):
        p, _ = make_decoder(seed=11)
        h0 = Tensor(np.random.default_rng(12).normal(size=4), requires_grad=True)
        e_p = Tensor(np.random.default_rng(13).normal(size=4), requires_grad=True)
        wrt = [h0, e_p, p.table, p.W_out, p.b_out, p.mfb.U, p.mfb.V] + [
            t for _, t in p.lstm.parameters("lstm")
        ]
        err = check_gradients(lambda: -answer_log_prob([0, 1], h0, e_p, p), wrt)
        assert err < 1e-6


class TestBeamSearch:
    def test_beam_one_is_greedy(self):
        for seed in range(8):
            p, _ = make_decoder(vocab=4, seed=seed)
            h0, e_p = make_inputs(p, seed=seed + 50)
            result = beam_search(h0, e_p, 1, 5, p)
            assert len(result) == 1
            assert result[0][0] == greedy_decode(h0, e_p, p, 5)[0]
            assert result[0][1] == pytest.approx(greedy_decode(h0, e_p, p, 5)[1], abs=1e-12)

    def test_huge_beam_equals_exhaustive_enumeration(self):
        for seed in range(6):
            p, _ = make_decoder(vocab=3, seed=seed)
            h0, e_p = make_inputs(p, seed=seed + 60)
            max_len = 4
            width = 3**max_len
            got = beam_search(h0, e_p, width, max_len, p)
            expected = enumerate_leaves(h0, e_p, p, max_len)[:width]
            assert [s for s, _ in got] == [s for s, _ in expected]
            np.testing.assert_allclose([l for _, l in got], [l for _, l in expected], atol=1e-12)

    def test_small_beams_match_independent_simulation(self):
        for width in (1, 2, 5):
            for seed in range(5):
                p, _ = make_decoder(vocab=4, seed=seed)
                h0, e_p = make_inputs(p, seed=seed + 70)
                got = beam_search(h0, e_p, width, 4, p)
                sim = simulate_beam(h0, e_p, p, width, 4)
                assert [s for s, _ in got] == [s for s, _ in sim]
                np.testing.assert_allclose([l for _, l in got], [l for _, l in sim], atol=1e-12)

    def test_returned_scores_match_enumeration_values(self):
        p, _ = make_decoder(vocab=3, seed=20)
        h0, e_p = make_inputs(p, seed=21)
        leaves = dict(enumerate_leaves(h0, e_p, p, 4))
        for seq, lp in beam_search(h0, e_p, 4, 4, p):
            assert seq in leaves
            assert lp == pytest.approx(leaves[seq], abs=1e-12)

    def test_complete_sequences_end_with_end_and_no_interior_end(self):
        p, _ = make_decoder(vocab=3, seed=22)
        h0, e_p = make_inputs(p, seed=23)
        for seq, _ in beam_search(h0, e_p, 6, 5, p):
            if p.end_index in seq:
                assert seq[-1] == p.end_index
                assert p.end_index not in seq[:-1]

    def test_best_score_nondecreasing_in_width(self):
        p, _ = make_decoder(vocab=4, seed=24)
        h0, e_p = make_inputs(p, seed=25)
        best = [beam_search(h0, e_p, w, 4, p)[0][1] for w in (1, 2, 3, 5, 10, 50)]
        assert all(a <= b + 1e-12 for a, b in zip(best, best[1:]))

    def test_results_sorted_descending(self):
        p, _ = make_decoder(vocab=4, seed=26)
        h0, e_p = make_inputs(p, seed=27)
        scores = [lp for _, lp in beam_search(h0, e_p, 8, 4, p)]
        assert scores == sorted(scores, reverse=True)

    def test_invalid_arguments(self):
        p, _ = make_decoder()
        h0, e_p = make_inputs(p)
        with pytest.raises(ValueError, match="beam width"):
            beam_search(h0, e_p, 0, 4, p)
        with pytest.raises(ValueError, match="max length"):
            beam_search(h0, e_p, 2, 0, p)
