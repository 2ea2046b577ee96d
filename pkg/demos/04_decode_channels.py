"""How span decoding turns position scores into ranked entity candidates.

Start/end logits are hand-crafted so the behavior is easy to follow: one
dominant span plus a competitive runner-up that only the rank-paired
channel surfaces. The k=1 result is always rank one of the merged list,
and growing k only ever appends.
"""

import numpy as np

from sebertnets.span import (
    ALL_CHANNELS,
    RecallConfig,
    SpanLogits,
    decode_multichannel,
    decode_top1,
    valid_mask,
)
from sebertnets.tensor import Tensor

text = "甲乙丙丁戊己庚"
first, last = 1, 7  # token positions of the text region, [CLS] at 0
valid = valid_mask(9, (first, last))

start = np.full(9, -4.0)
end = np.full(9, -4.0)
start[2], end[3] = 3.0, 3.0    # dominant span: tokens 2..3 -> "乙丙"
start[5], end[6] = 2.2, 2.4    # runner-up:      tokens 5..6 -> "戊己"
logits = SpanLogits(Tensor(start), Tensor(end), valid)

top1 = decode_top1(logits, text, (first, last),
                   RecallConfig(k=1, max_span_len=5))
print(f"top-1: {top1.entity_text!r} span=({top1.start},{top1.end}) "
      f"score={top1.score:.3f}")

for k in (1, 3, 5):
    cfg = RecallConfig(k=k, max_span_len=5, channels=ALL_CHANNELS)
    cands = decode_multichannel(logits, text, (first, last), cfg)
    row = ", ".join(f"{c.entity_text!r}@{c.score:.2f}" for c in cands)
    print(f"k={k}: {row}")

# the single-channel configuration is what the non-hierarchical variants
# use; it ranks joint pairs only
joint_only = decode_multichannel(logits, text, (first, last),
                                 RecallConfig(k=3, max_span_len=5))
print(f"joint channel only, k=3: {[c.entity_text for c in joint_only]}")
