"""Span head: start/end position scoring over the text region, the
training loss, and decoding.

Decoding is joint: a candidate (s, e) scores log p_start(s) + log
p_end(e), maximized over valid pairs with s <= e and width below
``max_span_len``. Top-1 serves the baseline variants; the multi-channel
decoder adds a joint top-k channel and an independent n-best channel,
merges, dedups by surface text, and returns a ranked list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DecodeError, ShapeError
from .tensor import Tensor

JOINT_TOPK = "joint_topk"
INDEPENDENT_NBEST = "independent_nbest"
ALL_CHANNELS = frozenset((JOINT_TOPK, INDEPENDENT_NBEST))


@dataclass
class SpanLogits:
    """Per-position start/end scores plus the validity mask (True exactly
    on text-region positions). Fields are [S] for one example or [B, S]
    for a batch."""
    start_logits: Tensor
    end_logits: Tensor
    valid: np.ndarray

    def __post_init__(self):
        if self.start_logits.shape != self.end_logits.shape:
            raise ShapeError(f"start logits {self.start_logits.shape} and end logits "
                             f"{self.end_logits.shape} do not match")
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.start_logits.shape:
            raise ShapeError(f"valid mask {self.valid.shape} does not match logits "
                             f"{self.start_logits.shape}")

    def example(self, i: int) -> "SpanLogits":
        """Detached single-example view of a batched SpanLogits."""
        return SpanLogits(Tensor(self.start_logits.data[i]),
                          Tensor(self.end_logits.data[i]), self.valid[i])


@dataclass(frozen=True)
class SpanCandidate:
    """Inclusive span with its joint log-probability and surface text."""
    start: int
    end: int
    score: float
    entity_text: str


@dataclass(frozen=True)
class RecallConfig:
    k: int = 5
    max_span_len: int = 30
    channels: frozenset = frozenset((JOINT_TOPK,))

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")
        if self.max_span_len < 1:
            raise ContractError(f"max_span_len must be >= 1, got {self.max_span_len}")
        object.__setattr__(self, "channels", frozenset(self.channels))
        bad = self.channels - ALL_CHANNELS
        if bad:
            raise ContractError(f"unknown channels {sorted(bad)}; "
                                f"known: {sorted(ALL_CHANNELS)}")


def valid_mask(length: int, text_span: tuple[int, int]) -> np.ndarray:
    """Boolean vector marking the inclusive text region of one layout."""
    first, last = int(text_span[0]), int(text_span[1])
    if not 0 <= first <= last < length:
        raise ContractError(f"text span ({first}, {last}) does not fit length {length}")
    out = np.zeros(length, dtype=bool)
    out[first:last + 1] = True
    return out


def init_head_params(width: int, rng: np.random.Generator,
                     dtype=np.float32) -> dict[str, Tensor]:
    bound = 1.0 / math.sqrt(width)
    def w():
        return Tensor(rng.uniform(-bound, bound, (width, 1)).astype(dtype),
                      requires_grad=True)
    def b():
        return Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
    return {"w_start": w(), "b_start": b(), "w_end": w(), "b_end": b()}


def score(h: Tensor, params: dict[str, Tensor], valid: np.ndarray) -> SpanLogits:
    """Apply the two affine position scorers to [.., S, width] states."""
    if h.ndim not in (2, 3):
        raise ShapeError(f"span head input must be [S, width] or [B, S, width], "
                         f"got shape {h.shape}")
    width = params["w_start"].shape[0]
    if h.shape[-1] != width:
        raise ShapeError(f"span head width {width} does not match input {h.shape}")
    lead = h.shape[:-1]
    def affine(which):
        out = T.add_bias(T.matmul(h, params[f"w_{which}"]), params[f"b_{which}"])
        return T.reshape(out, lead)
    return SpanLogits(affine("start"), affine("end"), np.asarray(valid, dtype=bool))


def span_loss(logits: SpanLogits, gold) -> Tensor:
    """Sum of start and end cross-entropies under masked softmax; the
    batched form averages over the batch. ``gold`` is (start, end) for a
    single example or an integer array [B, 2]."""
    g = np.asarray(gold)
    batched = logits.start_logits.ndim == 2
    if batched:
        if g.shape != (logits.start_logits.shape[0], 2):
            raise ContractError(f"gold must be [B, 2] for batched logits, got {g.shape}")
        rows = np.arange(g.shape[0])
        if (g < 0).any() or not (logits.valid[rows, g[:, 0]].all()
                                 and logits.valid[rows, g[:, 1]].all()):
            raise ContractError("a gold position lies outside the valid text region")
        starts, ends = g[:, 0], g[:, 1]
    else:
        if g.shape != (2,):
            raise ContractError(f"gold must be (start, end), got shape {g.shape}")
        s, e = int(g[0]), int(g[1])
        if s < 0 or e < 0 or not (logits.valid[s] and logits.valid[e]):
            raise ContractError(f"gold ({s}, {e}) lies outside the valid text region")
        starts, ends = s, e
    p_start = T.masked_softmax(logits.start_logits, logits.valid)
    p_end = T.masked_softmax(logits.end_logits, logits.valid)
    return T.add(T.cross_entropy(p_start, starts), T.cross_entropy(p_end, ends))


def _log_probs(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """fp64 masked log-softmax; masked positions are -inf."""
    x = np.where(valid, logits.astype(np.float64), -np.inf)
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    return x - lse


def _require_single(logits: SpanLogits) -> None:
    if logits.start_logits.ndim != 1:
        raise ContractError("decoding works on single examples; "
                            "slice a batch with .example(i)")


def _span_text(text: str, text_span, s: int, e: int) -> str:
    first = int(text_span[0])
    return text[s - first:e - first + 1]


def decode_top1(logits: SpanLogits, text: str, text_span,
                cfg: RecallConfig) -> SpanCandidate:
    """Best valid (s, e) pair by joint log-probability; ties go to the
    smaller start, then the smaller end."""
    _require_single(logits)
    if not logits.valid.any():
        raise DecodeError("no valid position to decode")
    lp_s = _log_probs(logits.start_logits.data, logits.valid)
    lp_e = _log_probs(logits.end_logits.data, logits.valid)
    n = lp_s.shape[0]
    best = None
    for s in range(n):
        if not logits.valid[s]:
            continue
        top = min(s + cfg.max_span_len, n)
        for e in range(s, top):
            if not logits.valid[e]:
                continue
            sc = lp_s[s] + lp_e[e]
            if best is None or sc > best[0]:
                best = (sc, s, e)
    if best is None:
        raise DecodeError("no valid (start, end) pair to decode")
    sc, s, e = best
    return SpanCandidate(start=s, end=e, score=float(sc),
                         entity_text=_span_text(text, text_span, s, e))


def _joint_pairs(lp_s, lp_e, valid, cfg) -> list[tuple[float, int, int]]:
    """Every valid (s, e) pair with its joint score. The channel stream is
    enumerated in full regardless of k: candidate rank must not depend on
    k, or growing k could remove previously returned candidates."""
    n = lp_s.shape[0]
    pairs = []
    for s in range(n):
        if not valid[s]:
            continue
        top = min(s + cfg.max_span_len, n)
        for e in range(s, top):
            if valid[e]:
                pairs.append((lp_s[s] + lp_e[e], s, e))
    return pairs


def _independent_nbest(lp_s, lp_e, valid, cfg) -> list[tuple[float, int, int]]:
    """Pair the i-th best start with the i-th best end for every rank i
    (full stream, see _joint_pairs); swap-repair reversed pairs, drop
    over-wide ones. Scores describe the emitted span, post-repair."""
    idx = np.flatnonzero(valid)
    starts = sorted(idx, key=lambda i: (-lp_s[i], i))
    ends = sorted(idx, key=lambda i: (-lp_e[i], i))
    out = []
    for i in range(len(idx)):
        s, e = int(starts[i]), int(ends[i])
        if s > e:
            s, e = e, s
        if e - s >= cfg.max_span_len:
            continue
        out.append((lp_s[s] + lp_e[e], s, e))
    return out


def decode_multichannel(logits: SpanLogits, text: str, text_span,
                        cfg: RecallConfig) -> list[SpanCandidate]:
    """Ranked candidate list (length <= k): enabled channels are merged
    with decode_top1's result, deduplicated by entity text keeping the
    best-scored span, and sorted by descending score."""
    _require_single(logits)
    top1 = decode_top1(logits, text, text_span, cfg)
    lp_s = _log_probs(logits.start_logits.data, logits.valid)
    lp_e = _log_probs(logits.end_logits.data, logits.valid)

    pool: list[tuple[float, int, int]] = [(top1.score, top1.start, top1.end)]
    if JOINT_TOPK in cfg.channels:
        pool.extend(_joint_pairs(lp_s, lp_e, logits.valid, cfg))
    if INDEPENDENT_NBEST in cfg.channels:
        pool.extend(_independent_nbest(lp_s, lp_e, logits.valid, cfg))

    best_by_text: dict[str, tuple[float, int, int]] = {}
    for sc, s, e in pool:
        txt = _span_text(text, text_span, s, e)
        prev = best_by_text.get(txt)
        # prefer higher score, then the lexicographically smaller span
        if prev is None or (-sc, s, e) < (-prev[0], prev[1], prev[2]):
            best_by_text[txt] = (sc, s, e)

    ranked = sorted(((sc, s, e, txt) for txt, (sc, s, e) in best_by_text.items()),
                    key=lambda r: (-r[0], r[1], r[2]))
    return [SpanCandidate(start=s, end=e, score=float(sc), entity_text=txt)
            for sc, s, e, txt in ranked[:cfg.k]]
