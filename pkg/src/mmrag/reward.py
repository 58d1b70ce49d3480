"""Rule-based reward oracle for placement rollouts.

Scores a raw model completion against ground truth: a binary format gate on
the ``<think>/<answer>`` structure, image recall over the reference set,
per-slot position accuracy, their alpha-blend, and the total. Every failure
mode is a score, never an exception, so a trainer can feed arbitrary
completions straight through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet, Iterable, Mapping, Sequence

from .errors import UnknownSample
from .insertion import parse_inserter_output
from .model import DatasetSample, GroundTruth, ordered_images, to_sequence


@dataclass(frozen=True)
class RewardConfig:
    """alpha blends recall against position accuracy in the answer reward."""

    alpha: float = 0.8

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RolloutScore:
    """Reward components for one completion.

    Invariants: r_format = 0 forces r_answer = r_total = 0, and
    r_total = r_format + r_answer exactly.
    """

    r_format: int
    r_rec: float
    r_pos: float
    r_answer: float
    r_total: float
    warnings: tuple[str, ...] = ()
    malformed_reason: str | None = None

    def to_json(self) -> dict[str, object]:
        out: dict[str, object] = {
            "r_format": self.r_format,
            "r_rec": self.r_rec,
            "r_pos": self.r_pos,
            "r_answer": self.r_answer,
            "r_total": self.r_total,
        }
        if self.warnings:
            out["warnings"] = list(self.warnings)
        if self.malformed_reason is not None:
            out["malformed_reason"] = self.malformed_reason
        return out


def score_rollout(
    raw_completion: str,
    gt: GroundTruth,
    valid_ids: AbstractSet[str],
    cfg: RewardConfig = RewardConfig(),
) -> RolloutScore:
    """Score one completion against one sample's ground truth.

    The format gate checks output structure only; entries dropped during
    normalization (unknown ids, out-of-range indices, duplicate targets)
    keep the gate open and instead depress recall and position accuracy.
    """
    sentence_count = len(gt.sentences)
    parsed = parse_inserter_output(raw_completion, valid_ids, sentence_count)
    if not parsed.well_formed:
        return RolloutScore(
            0, 0.0, 0.0, 0.0, 0.0, parsed.warnings, parsed.malformed_reason
        )
    predicted = to_sequence(parsed.placements(), sentence_count)
    reference = gt.sequence
    pred_ids = set(ordered_images(predicted))
    gt_ids = set(ordered_images(reference))
    if gt_ids:
        r_rec = len(pred_ids & gt_ids) / len(gt_ids)
    else:
        # defensive: training data always has at least one positive image
        r_rec = 1.0 if not pred_ids else 0.0
    matches = sum(1 for a, b in zip(predicted.slots, reference.slots) if a == b)
    r_pos = matches / sentence_count
    r_answer = cfg.alpha * r_rec + (1.0 - cfg.alpha) * r_pos
    return RolloutScore(1, r_rec, r_pos, r_answer, 1.0 + r_answer, parsed.warnings)


@dataclass(frozen=True)
class BatchEntry:
    """One slot of a batch result: a score, or a per-item error."""

    sample_id: str
    score: RolloutScore | None
    error: str | None = None

    def to_json(self) -> dict[str, object]:
        out: dict[str, object] = {"sample_id": self.sample_id}
        if self.score is not None:
            out.update(self.score.to_json())
        if self.error is not None:
            out["error"] = self.error
        return out


def score_batch(
    rollouts: Sequence[tuple[str, str]],
    dataset: Mapping[str, DatasetSample],
    cfg: RewardConfig = RewardConfig(),
) -> list[BatchEntry]:
    """Score (completion, sample_id) pairs in order.

    Unknown sample ids become per-item error entries; the batch continues.
    """
    entries: list[BatchEntry] = []
    for raw, sample_id in rollouts:
        sample = dataset.get(sample_id)
        if sample is None:
            entries.append(BatchEntry(sample_id, None, "unknown_sample"))
            continue
        score = score_rollout(raw, sample.ground_truth(), sample.valid_image_ids(), cfg)
        entries.append(BatchEntry(sample_id, score))
    return entries


def group_stats(entries: Iterable[BatchEntry]) -> dict[str, dict[str, float]]:
    """Per-sample mean/std of r_total, for trainer-side advantage
    normalization. Population std (ddof 0)."""
    groups: dict[str, list[float]] = {}
    for entry in entries:
        if entry.score is not None:
            groups.setdefault(entry.sample_id, []).append(entry.score.r_total)
    stats: dict[str, dict[str, float]] = {}
    for sample_id, totals in groups.items():
        mean = sum(totals) / len(totals)
        variance = sum((t - mean) ** 2 for t in totals) / len(totals)
        stats[sample_id] = {
            "mean": mean,
            "std": math.sqrt(variance),
            "count": float(len(totals)),
        }
    return stats


def gt_as_completion(gt: GroundTruth) -> str:
    """Serialize ground truth in the canonical reasoning-tagged completion
    form; scoring it must yield the maximum total reward."""
    import json

    placements = gt.placements.as_dict()
    return (
        "<think>reference placements</think>"
        f"<answer>{json.dumps(placements, ensure_ascii=False)}</answer>"
    )


def require_sample(dataset: Mapping[str, DatasetSample], sample_id: str) -> DatasetSample:
    sample = dataset.get(sample_id)
    if sample is None:
        raise UnknownSample(f"no sample with id {sample_id!r}")
    return sample
