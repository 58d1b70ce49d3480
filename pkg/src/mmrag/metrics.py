"""Evaluation suite for interleaved answers.

Set metrics (recall / precision / F1) compare the image-id sets of predicted
and reference placements. The order score combines set overlap with a
normalized weighted edit distance between the image orderings; the position
score grades each sentence slot. ROUGE-L covers text quality, and two
LLM-judge metrics (relevance, per-image position) cover what no closed form
can. The overall score averages F1, relevance, an embedding-similarity proxy
for BERTScore, ROUGE-L, and (when order matters) the order score.

Empty-reference conventions are aligned across metrics: both sides empty
scores 1.0, an empty prediction against a non-empty reference scores 0.0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from typing import AbstractSet, Mapping, Sequence

from .errors import (
    EmptyGroundTruth,
    JudgeParseError,
    LengthMismatch,
    MissingComponent,
)
from .insertion import interleaved_text
from .model import (
    EMPTY,
    ImageAsset,
    MultimodalAnswer,
    PlacementSequence,
    Query,
)
from .prompts import POSITION_JUDGE, RELEVANCE_JUDGE, render
from .providers import ChatProvider, ChatRequest
from .retrieval import EmbeddingProvider, cosine


# --- set metrics ---------------------------------------------------------------


def recall(pred_images: AbstractSet[str], gt_images: AbstractSet[str]) -> float:
    """|pred ∩ gt| / |gt|; empty reference scores 1.0 only for an empty prediction."""
    if not gt_images:
        return 1.0 if not pred_images else 0.0
    return len(set(pred_images) & set(gt_images)) / len(gt_images)


def precision(pred_images: AbstractSet[str], gt_images: AbstractSet[str]) -> float:
    if not pred_images:
        return 1.0 if not gt_images else 0.0
    return len(set(pred_images) & set(gt_images)) / len(pred_images)


def f_score(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


def f1(pred_images: AbstractSet[str], gt_images: AbstractSet[str]) -> float:
    return f_score(precision(pred_images, gt_images), recall(pred_images, gt_images))


# --- order score ----------------------------------------------------------------


@dataclass(frozen=True)
class EditCostConfig:
    """Operation costs for the weighted edit distance.

    p1: insert an image the answer is missing; p2: delete an extra image;
    p3: substitute a wrong image in place. The constraints p1 > p2 > p3 > 0
    and p >= p1 keep the final score inside [0, 1].
    """

    p1: float = 1.0
    p2: float = 0.8
    p3: float = 0.5
    p: float = 1.0

    def __post_init__(self) -> None:
        if not (self.p1 > self.p2 > self.p3 > 0):
            raise ValueError(
                f"edit costs must satisfy p1 > p2 > p3 > 0, got "
                f"({self.p1}, {self.p2}, {self.p3})"
            )
        if self.p < self.p1:
            raise ValueError(f"normalizer p must be >= p1, got p={self.p} < p1={self.p1}")


DEFAULT_EDIT_COSTS = EditCostConfig()


def weighted_edit_distance(
    gt_seq: Sequence[str], pred_seq: Sequence[str], costs: EditCostConfig = DEFAULT_EDIT_COSTS
) -> float:
    """Minimum total cost transforming pred_seq into gt_seq.

    O(len(gt) * len(pred)) dynamic program over prefixes: insertion of a
    missing image costs p1, deletion of an extra one p2, substitution p3,
    and aligned equal images cost nothing.
    """
    n, m = len(gt_seq), len(pred_seq)
    previous = [j * costs.p2 for j in range(m + 1)]
    for i in range(1, n + 1):
        current = [i * costs.p1] + [0.0] * m
        for j in range(1, m + 1):
            align = 0.0 if gt_seq[i - 1] == pred_seq[j - 1] else costs.p3
            current[j] = min(
                previous[j] + costs.p1,      # insert gt[i-1]
                current[j - 1] + costs.p2,   # delete pred[j-1]
                previous[j - 1] + align,     # keep or substitute
            )
        previous = current
    return previous[m]


def order_score(
    gt_seq: Sequence[str],
    pred_seq: Sequence[str],
    costs: EditCostConfig = DEFAULT_EDIT_COSTS,
) -> float:
    """Set overlap scaled by the normalized edit-distance penalty:
    (|gt ∩ pred| / n) * (1 - min(dist/n, p) / p)."""
    n = len(gt_seq)
    if n == 0:
        raise EmptyGroundTruth("order score undefined for an empty reference ordering")
    overlap = len(set(gt_seq) & set(pred_seq)) / n
    distance = weighted_edit_distance(gt_seq, pred_seq, costs)
    penalty = min(distance / n, costs.p) / costs.p
    return overlap * (1.0 - penalty)


# --- position score ---------------------------------------------------------------


def position_score(gt: PlacementSequence, pred: PlacementSequence) -> float:
    """Per-slot comparison: 1 for an exact match (including EMPTY = EMPTY),
    0.5 for a right image in the wrong slot, 0 otherwise.

    Both sides all-EMPTY scores 1; an all-EMPTY prediction against a
    non-empty reference scores 0. EMPTY never counts as a member of the
    reference image set.
    """
    if len(gt) != len(pred):
        raise LengthMismatch(
            f"sequences must share the sentence count: {len(gt)} vs {len(pred)}"
        )
    gt_images = {slot for slot in gt.slots if slot is not EMPTY}
    pred_empty = all(slot is EMPTY for slot in pred.slots)
    if pred_empty:
        return 1.0 if not gt_images else 0.0
    total = 0.0
    for predicted, reference in zip(pred.slots, gt.slots):
        if predicted == reference:
            total += 1.0
        elif predicted is not EMPTY and predicted in gt_images:
            total += 0.5
    return total / len(gt)


# --- ROUGE-L -----------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        current = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[len(b)]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F-measure with beta = 1 over lowercase alphanumeric tokens."""
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)


# --- embedding similarity (BERTScore stand-in) --------------------------------------


def embedding_similarity(candidate: str, reference: str, embedder: EmbeddingProvider) -> float:
    """Cosine of provider embeddings, clamped to [0, 1].

    A judge-free proxy for learned text-similarity scores so the overall
    metric stays computable offline; not interchangeable with published
    BERTScore numbers.
    """
    vectors = embedder.embed([candidate, reference])
    return max(0.0, min(1.0, cosine(vectors[0], vectors[1])))


# --- judge metrics -------------------------------------------------------------------

REL_NORM_OFFSET = "offset"  # (s - 1) / 4: maps 1 -> 0, 5 -> 1
REL_NORM_RATIO = "ratio"    # s / 5

_RELEVANCE_TAG_RE = re.compile(r"<relevance_score>\s*([1-5])\s*</relevance_score>")
_POSITION_TAG_RE = re.compile(r"<img_(\d+)_score>\s*([01])\s*</img_\1_score>")


def _judge_bindings(
    answer: MultimodalAnswer, query: Query, assets: Mapping[str, ImageAsset]
) -> dict[str, object]:
    image_ids = answer.image_ids()
    contexts = [assets[i].context_line() if i in assets else "" for i in image_ids]
    captions = [(assets[i].caption or "") if i in assets else "" for i in image_ids]
    import json

    return {
        "query_str": query.text,
        "answer_str": interleaved_text(answer),
        "context_str_list": json.dumps(contexts, ensure_ascii=False),
        "caption_str_list": json.dumps(captions, ensure_ascii=False),
        "image_number": len(image_ids),
    }


def judge_relevance(
    answer: MultimodalAnswer,
    query: Query,
    assets: Mapping[str, ImageAsset],
    judge: ChatProvider,
    norm: str = REL_NORM_OFFSET,
    max_attempts: int = 3,
) -> float:
    """1-5 relevance judgment normalized to [0, 1].

    Undefined (ValueError) for answers without images; the caller skips such
    samples. Raises JudgeParseError when no parsable score arrives within
    max_attempts re-asks.
    """
    if not answer.image_ids():
        raise ValueError("relevance is undefined for an answer without images")
    if norm not in (REL_NORM_OFFSET, REL_NORM_RATIO):
        raise ValueError(f"unknown relevance normalization {norm!r}")
    prompt = render(RELEVANCE_JUDGE, _judge_bindings(answer, query, assets))
    last_reply = ""
    for _ in range(max_attempts):
        request = ChatRequest.user(prompt, model=judge.model, temperature=0.0)
        last_reply = judge.complete(request).text
        match = _RELEVANCE_TAG_RE.search(last_reply)
        if match:
            score = int(match.group(1))
            return (score - 1) / 4.0 if norm == REL_NORM_OFFSET else score / 5.0
    raise JudgeParseError(
        f"no <relevance_score> tag after {max_attempts} attempts; last reply: "
        f"{last_reply[:200]!r}"
    )


def judge_position(
    answer: MultimodalAnswer,
    query: Query,
    assets: Mapping[str, ImageAsset],
    judge: ChatProvider,
    max_attempts: int = 3,
) -> float:
    """Mean of per-image 0/1 position judgments, first occurrences only."""
    image_ids = answer.image_ids()
    if not image_ids:
        raise ValueError("position judging is undefined for an answer without images")
    # placeholder index of the first occurrence of each unique image
    first_occurrence: dict[str, int] = {}
    for k, image_id in enumerate(image_ids, start=1):
        first_occurrence.setdefault(image_id, k)
    wanted = set(first_occurrence.values())

    prompt = render(POSITION_JUDGE, _judge_bindings(answer, query, assets))
    last_reply = ""
    for _ in range(max_attempts):
        request = ChatRequest.user(prompt, model=judge.model, temperature=0.0)
        last_reply = judge.complete(request).text
        scores = {int(m.group(1)): int(m.group(2)) for m in _POSITION_TAG_RE.finditer(last_reply)}
        if wanted <= set(scores):
            return sum(scores[k] for k in wanted) / len(wanted)
    raise JudgeParseError(
        f"missing <img_k_score> tags after {max_attempts} attempts; last reply: "
        f"{last_reply[:200]!r}"
    )


# --- overall -----------------------------------------------------------------------


def overall(
    f1_value: float | None,
    rel: float | None,
    bert_sim: float | None,
    rouge: float | None,
    ord_value: float | None = None,
) -> float:
    """Mean of F1, relevance, embedding similarity, and ROUGE-L, with the
    order score folded in when order information exists."""
    named = {"f1": f1_value, "rel": rel, "bert_sim": bert_sim, "rouge_l": rouge}
    missing = [name for name, value in named.items() if value is None]
    if missing:
        raise MissingComponent(missing)
    components = [f1_value, rel, bert_sim, rouge]
    if ord_value is not None:
        components.append(ord_value)
    return sum(components) / len(components)


@dataclass(frozen=True)
class MetricReport:
    """Per-answer metric values, all in [0, 1]; None marks
    metrics that do not apply to the sample."""

    rec: float | None = None
    prec: float | None = None
    f1: float | None = None
    ord: float | None = None
    pos: float | None = None
    rel: float | None = None
    rouge_l: float | None = None
    bert_sim: float | None = None
    ovr: float | None = None

    def to_json(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_FIELDS = tuple(f.name for f in fields(MetricReport))


def aggregate_reports(reports: Sequence[MetricReport]) -> dict[str, float | None]:
    """Field-wise mean over the reports where the field is present."""
    out: dict[str, float | None] = {}
    for name in METRIC_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = sum(values) / len(values) if values else None
    return out
