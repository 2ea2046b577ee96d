"""Span head: scoring, loss closed forms, and decoding vs brute-force
enumeration oracles."""

import math

import numpy as np
import pytest

from sebertnets import span as S
from sebertnets import tensor as T
from sebertnets.errors import ContractError, DecodeError
from sebertnets.tensor import Tensor

from gradcheck import check_grads

RNG = np.random.default_rng(77)


def logits_1d(start, end, valid):
    return S.SpanLogits(Tensor(np.asarray(start, dtype=np.float64)),
                        Tensor(np.asarray(end, dtype=np.float64)),
                        np.asarray(valid, dtype=bool))


def ref_log_probs(x, valid):
    x = np.where(valid, np.asarray(x, dtype=np.float64), -np.inf)
    m = x.max()
    return x - (m + np.log(np.exp(x - m).sum()))


def brute_force_pairs(start, end, valid, max_span_len):
    """Every valid (s, e) pair with joint log-prob, unordered."""
    lp_s = ref_log_probs(start, valid)
    lp_e = ref_log_probs(end, valid)
    n = len(lp_s)
    out = []
    for s in range(n):
        for e in range(s, n):
            if valid[s] and valid[e] and e - s < max_span_len:
                out.append((lp_s[s] + lp_e[e], s, e))
    return out


def brute_force_top1(start, end, valid, max_span_len):
    pairs = brute_force_pairs(start, end, valid, max_span_len)
    if not pairs:
        return None
    return min(pairs, key=lambda p: (-p[0], p[1], p[2]))


class TestValidMask:
    def test_layout_arithmetic(self):
        # CLS + 5 text + SEP + 3 type + SEP: text occupies 1..5
        v = S.valid_mask(11, (1, 5))
        assert v.tolist() == [False] + [True] * 5 + [False] * 5

    def test_bad_span(self):
        with pytest.raises(ContractError):
            S.valid_mask(4, (1, 4))


class TestScore:
    def test_zero_weights_uniform(self):
        rng = np.random.default_rng(0)
        params = S.init_head_params(6, rng, dtype=np.float64)
        params["w_start"].data[:] = 0.0
        params["w_end"].data[:] = 0.0
        h = Tensor(rng.standard_normal((5, 6)))
        valid = np.array([False, True, True, True, False])
        out = S.score(h, params, valid)
        np.testing.assert_array_equal(out.start_logits.data, 0.0)
        p = T.masked_softmax(out.start_logits, valid).data
        np.testing.assert_allclose(p[valid], 1 / 3, rtol=1e-7)

    def test_batched_shape(self):
        rng = np.random.default_rng(1)
        params = S.init_head_params(6, rng)
        h = Tensor(rng.standard_normal((2, 5, 6)).astype(np.float32))
        valid = np.ones((2, 5), dtype=bool)
        out = S.score(h, params, valid)
        assert out.start_logits.shape == (2, 5)
        single = S.score(Tensor(h.data[0]), params, valid[0])
        np.testing.assert_allclose(single.start_logits.data,
                                   out.start_logits.data[0], rtol=1e-6)

    def test_gradients_through_score_and_loss(self):
        rng = np.random.default_rng(2)
        valid = np.array([False, True, True, True, False])

        def build(h, ws, bs, we, be):
            params = {"w_start": ws, "b_start": bs, "w_end": we, "b_end": be}
            logits = S.score(h, params, valid)
            return S.span_loss(logits, (1, 3))

        check_grads(build, [rng.standard_normal((5, 4)),
                            rng.standard_normal((4, 1)), np.zeros(1),
                            rng.standard_normal((4, 1)), np.zeros(1)])


class TestSpanLoss:
    def test_sharp_one_hot_gives_near_zero(self):
        start = np.full(6, -40.0)
        end = np.full(6, -40.0)
        start[2] = 40.0
        end[4] = 40.0
        valid = np.array([False, True, True, True, True, False])
        loss = S.span_loss(logits_1d(start, end, valid), (2, 4))
        assert 0.0 <= float(loss.data) < 1e-9

    def test_uniform_gives_two_log_v(self):
        valid = np.array([False] + [True] * 7 + [False])
        loss = S.span_loss(logits_1d(np.zeros(9), np.zeros(9), valid), (3, 5))
        np.testing.assert_allclose(float(loss.data), 2 * math.log(7), rtol=1e-14)

    def test_random_case_vs_straight_line_reference(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(4, 12))
            valid = np.zeros(n, dtype=bool)
            valid[1:n - 1] = True
            start = rng.standard_normal(n) * 3
            end = rng.standard_normal(n) * 3
            gold_s = int(rng.integers(1, n - 1))
            gold_e = int(rng.integers(gold_s, n - 1))
            loss = float(S.span_loss(logits_1d(start, end, valid),
                                     (gold_s, gold_e)).data)
            expect = -(ref_log_probs(start, valid)[gold_s]
                       + ref_log_probs(end, valid)[gold_e])
            np.testing.assert_allclose(loss, expect, rtol=1e-12)

    def test_batched_is_mean(self):
        valid = np.array([[False, True, True], [False, True, True]])
        start = np.array([[0.0, 1.0, 2.0], [0.0, -1.0, 0.5]])
        end = np.array([[0.0, 0.3, 0.1], [0.0, 2.0, -0.2]])
        lb = S.SpanLogits(Tensor(start), Tensor(end), valid)
        golds = np.array([[1, 2], [2, 2]])
        batched = float(S.span_loss(lb, golds).data)
        singles = [float(S.span_loss(lb.example(i), tuple(golds[i])).data)
                   for i in range(2)]
        np.testing.assert_allclose(batched, np.mean(singles), rtol=1e-12)

    def test_gold_outside_valid_raises(self):
        valid = np.array([False, True, True, False])
        with pytest.raises(ContractError):
            S.span_loss(logits_1d(np.zeros(4), np.zeros(4), valid), (0, 2))
        with pytest.raises(ContractError):
            S.span_loss(logits_1d(np.zeros(4), np.zeros(4), valid), (1, 3))


class TestDecodeTop1:
    def setup_method(self):
        self.cfg = S.RecallConfig(k=5, max_span_len=30)
        self.text = "ABCDEFGH"
        self.span = (1, 8)

    def peaked(self, n, s_pos, e_pos):
        start = np.zeros(n)
        end = np.zeros(n)
        start[s_pos] = 9.0
        end[e_pos] = 9.0
        valid = np.zeros(n, dtype=bool)
        valid[1:9] = True
        return logits_1d(start, end, valid)

    def test_forward_peaks(self):
        c = S.decode_top1(self.peaked(10, 2, 4), self.text, self.span, self.cfg)
        assert (c.start, c.end) == (2, 4)
        assert c.entity_text == "BCD"

    def test_reversed_peaks_resolve_to_brute_force(self):
        lg = self.peaked(10, 4, 2)
        c = S.decode_top1(lg, self.text, self.span, self.cfg)
        sc, s, e = brute_force_top1(lg.start_logits.data, lg.end_logits.data,
                                    lg.valid, 30)
        assert (c.start, c.end) == (s, e) != (4, 2)
        np.testing.assert_allclose(c.score, sc, rtol=1e-12)

    def test_single_valid_position(self):
        valid = np.zeros(6, dtype=bool)
        valid[3] = True
        c = S.decode_top1(logits_1d(np.zeros(6), np.zeros(6), valid),
                          "ABCDEF", (1, 4), S.RecallConfig())
        assert (c.start, c.end) == (3, 3)

    def test_no_valid_position_raises(self):
        with pytest.raises(DecodeError):
            S.decode_top1(logits_1d(np.zeros(4), np.zeros(4),
                                    np.zeros(4, dtype=bool)),
                          "AB", (1, 2), S.RecallConfig())

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(2, 21))
            valid = rng.random(n) < 0.7
            if not valid.any():
                valid[int(rng.integers(n))] = True
            start = rng.standard_normal(n) * 2
            end = rng.standard_normal(n) * 2
            msl = int(rng.integers(1, 8))
            cfg = S.RecallConfig(k=3, max_span_len=msl)
            text = "x" * n
            lg = logits_1d(start, end, valid)
            got = S.decode_top1(lg, text, (0, n - 1), cfg)
            sc, s, e = brute_force_top1(start, end, valid, msl)
            assert (got.start, got.end) == (s, e)
            np.testing.assert_allclose(got.score, sc, rtol=1e-12)

    def test_tie_break_smaller_start_then_end(self):
        # all-equal logits: every pair ties; expect the first valid (s, s)
        valid = np.array([False, True, True, True])
        c = S.decode_top1(logits_1d(np.zeros(4), np.zeros(4), valid),
                          "ABC", (1, 3), S.RecallConfig())
        assert (c.start, c.end) == (1, 1)


class TestDecodeMultichannel:
    def make(self, start, end, valid):
        return logits_1d(start, end, valid)

    def test_k1_equals_top1(self):
        rng = np.random.default_rng(5)
        for channels in (frozenset({S.JOINT_TOPK}),
                         frozenset({S.INDEPENDENT_NBEST}),
                         S.ALL_CHANNELS, frozenset()):
            n = 8
            valid = np.ones(n, dtype=bool)
            lg = self.make(rng.standard_normal(n), rng.standard_normal(n), valid)
            cfg = S.RecallConfig(k=1, channels=channels)
            out = S.decode_multichannel(lg, "y" * n, (0, n - 1), cfg)
            top1 = S.decode_top1(lg, "y" * n, (0, n - 1), cfg)
            assert out == [top1]

    def test_two_peaks_both_recalled(self):
        n = 12
        start = np.full(n, -6.0)
        end = np.full(n, -6.0)
        start[2], end[3] = 8.0, 8.0    # peak A: span (2,3)
        start[7], end[8] = 7.5, 7.5    # peak B: span (7,8)
        valid = np.zeros(n, dtype=bool)
        valid[1:11] = True
        text = "abcdefghij"
        cfg = S.RecallConfig(k=3, channels=S.ALL_CHANNELS)
        out = S.decode_multichannel(self.make(start, end, valid), text, (1, 10), cfg)
        spans = {(c.start, c.end) for c in out}
        assert (2, 3) in spans and (7, 8) in spans

    def test_dedup_keeps_best_scored_span_per_text(self):
        # same char at two positions: spans (1,1) and (3,3) share text "a"
        text = "aba"
        start = np.array([0.0, 5.0, 0.0, 4.0, 0.0])
        end = np.array([0.0, 5.0, 0.0, 4.0, 0.0])
        valid = np.array([False, True, True, True, False])
        cfg = S.RecallConfig(k=5, channels=S.ALL_CHANNELS)
        out = S.decode_multichannel(self.make(start, end, valid), text, (1, 3), cfg)
        texts = [c.entity_text for c in out]
        assert len(texts) == len(set(texts))
        a_cands = [c for c in out if c.entity_text == "a"]
        assert len(a_cands) == 1 and (a_cands[0].start, a_cands[0].end) == (1, 1)

    def test_sorted_distinct_bounded(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n = int(rng.integers(3, 16))
            valid = rng.random(n) < 0.8
            if not valid.any():
                valid[0] = True
            lg = self.make(rng.standard_normal(n) * 2, rng.standard_normal(n) * 2,
                           valid)
            k = int(rng.integers(1, 7))
            cfg = S.RecallConfig(k=k, max_span_len=5, channels=S.ALL_CHANNELS)
            out = S.decode_multichannel(lg, "z" * n, (0, n - 1), cfg)
            assert 1 <= len(out) <= k
            scores = [c.score for c in out]
            assert scores == sorted(scores, reverse=True)
            texts = [c.entity_text for c in out]
            assert len(texts) == len(set(texts))
            for c in out:
                assert c.end - c.start < 5 and valid[c.start] and valid[c.end]

    def test_prefix_property_growing_k(self):
        rng = np.random.default_rng(7)
        for channels in (frozenset({S.JOINT_TOPK}), S.ALL_CHANNELS):
            for _ in range(30):
                n = int(rng.integers(4, 14))
                valid = np.ones(n, dtype=bool)
                lg = self.make(rng.standard_normal(n) * 2,
                               rng.standard_normal(n) * 2, valid)
                prev = None
                for k in range(1, 8):
                    cfg = S.RecallConfig(k=k, max_span_len=6, channels=channels)
                    out = S.decode_multichannel(lg, "w" * n, (0, n - 1), cfg)
                    if prev is not None:
                        assert out[:len(prev)] == prev
                    prev = out

    def test_unknown_channel_rejected(self):
        with pytest.raises(ContractError):
            S.RecallConfig(channels=frozenset({"magic"}))

    def test_config_validation(self):
        with pytest.raises(ContractError):
            S.RecallConfig(k=0)
        with pytest.raises(ContractError):
            S.RecallConfig(max_span_len=0)
