"""Top-k evaluation over ranked candidate lists.

An example counts correct at k when a gold entity string appears among
its top-k predicted strings (exact match after the same text scrubbing
applied at ingestion). Precision divides by the number of examples with
at least one prediction, recall by the number with gold annotations,
and F1 is the harmonic mean, taken as 0 when both are 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .data import scrub_text
from .errors import ContractError

MATCH_ANY = "any"
MATCH_ALL = "all"
_MATCH_MODES = (MATCH_ANY, MATCH_ALL)


def f1(p: float, r: float) -> float:
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ContractError(f"p={p} r={r} must lie in [0, 1]")
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


@dataclass(frozen=True)
class EvalReport:
    """Per-k counts and scores for k = 1..K."""

    k_max: int
    identified: int
    annotated: int
    correct: tuple[int, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]

    def as_json_dict(self) -> dict:
        return {
            "identified": self.identified,
            "annotated": self.annotated,
            "top_k": [
                {
                    "k": k,
                    "correct": self.correct[k - 1],
                    "p": self.precision[k - 1],
                    "r": self.recall[k - 1],
                    "f1": self.f1[k - 1],
                }
                for k in range(1, self.k_max + 1)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_json_dict(), ensure_ascii=False)

    def render_table(self) -> str:
        lines = [
            f"identified={self.identified} annotated={self.annotated}",
            f"{'k':>3} {'correct':>8} {'P':>8} {'R':>8} {'F1':>8}",
        ]
        for k in range(1, self.k_max + 1):
            lines.append(
                f"{k:>3} {self.correct[k - 1]:>8} "
                f"{self.precision[k - 1]:>8.4f} {self.recall[k - 1]:>8.4f} "
                f"{self.f1[k - 1]:>8.4f}"
            )
        return "\n".join(lines)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def evaluate(predictions: Mapping[str, Sequence[str]],
             gold: Mapping[str, Iterable[str]],
             k_max: int = 5,
             match_mode: str = MATCH_ANY) -> EvalReport:
    """Score ranked predictions against gold entity sets.

    ``gold`` defines the id universe; a prediction id outside it is a
    contract error. ``match_mode`` 'any' counts an example correct at k
    when any gold string is in the top k, 'all' when every gold string
    is.
    """
    if k_max < 1:
        raise ContractError(f"k_max must be >= 1, got {k_max}")
    if match_mode not in _MATCH_MODES:
        raise ContractError(
            f"match_mode must be one of {_MATCH_MODES}, got {match_mode!r}"
        )
    unknown = set(predictions) - set(gold)
    if unknown:
        raise ContractError(
            f"prediction ids not in the gold set: {sorted(unknown)[:5]}"
        )

    identified = 0
    annotated = 0
    correct = [0] * k_max
    for ex_id in gold:
        gold_set = {scrub_text(e) for e in gold[ex_id]}
        gold_set.discard("")
        preds = [scrub_text(p) for p in predictions.get(ex_id, ())]
        if preds:
            identified += 1
        if gold_set:
            annotated += 1
        if not gold_set or not preds:
            continue
        for k in range(1, k_max + 1):
            top = set(preds[:k])
            if match_mode == MATCH_ANY:
                hit = bool(gold_set & top)
            else:
                hit = gold_set <= top
            if hit:
                correct[k - 1] += 1

    precision = tuple(_ratio(c, identified) for c in correct)
    recall = tuple(_ratio(c, annotated) for c in correct)
    scores = tuple(f1(p, r) for p, r in zip(precision, recall))
    return EvalReport(
        k_max=k_max,
        identified=identified,
        annotated=annotated,
        correct=tuple(correct),
        precision=precision,
        recall=recall,
        f1=scores,
    )
