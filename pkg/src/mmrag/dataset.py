"""Dataset construction: distractor sampling, difficulty terciles, splits,
ingestion adapters, and the canonical-schema linter.

Sampling keeps a strict positive:negative candidate ratio (1:1 by default),
mixing hard distractors (query-similar by embedding) with uniformly drawn
random ones. All randomness is seeded per sample, so equal seeds produce
byte-identical datasets.
"""

from __future__ import annotations

import csv
import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientCorpus, JudgeParseError, SchemaError, UnknownSource
from .model import (
    DIFFICULTIES,
    DatasetSample,
    GroundTruth,
    ImageAsset,
    Query,
    SentenceMap,
    image_catalog,
    sample_from_json,
)
from .prompts import DIFFICULTY_JUDGE, render
from .providers import ChatProvider, ChatRequest
from .retrieval import EmbeddingProvider, cosine

WEB_SOURCES = frozenset({"wit", "web", "wiki"})
NON_WEB_SOURCES = frozenset({"arxiv", "recipe", "manual"})

EASY, MEDIUM, HARD = DIFFICULTIES


@dataclass(frozen=True)
class SampleBuilderConfig:
    negative_ratio: float = 1.0
    hard_fraction: float = 0.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class DifficultyTier:
    tier: str
    mean_judge_score: float

    def __post_init__(self) -> None:
        if self.tier not in DIFFICULTIES:
            raise ValueError(f"tier must be one of {DIFFICULTIES}")


def build_sample(
    query: Query,
    gt: GroundTruth,
    image_corpus: Sequence[ImageAsset],
    embedder: EmbeddingProvider,
    cfg: SampleBuilderConfig = SampleBuilderConfig(),
    difficulty: str | None = None,
    source: str | None = None,
) -> DatasetSample:
    """Assemble one sample: all positives plus an equal number of distractors.

    Hard distractors are the non-positive corpus images most similar to the
    query (by embedding of their caption/context text); the rest are drawn
    uniformly at random. The candidate list is shuffled deterministically.
    """
    catalog = image_catalog(image_corpus)
    positive_ids = [image_id for image_id, _ in gt.placements.items()]
    if not positive_ids:
        raise ValueError(f"query {query.id!r} has no positive images")
    missing = [i for i in positive_ids if i not in catalog]
    if missing:
        raise InsufficientCorpus(f"corpus lacks positive images {missing}")
    positives = [catalog[i] for i in positive_ids]

    pool = sorted(
        (asset for asset in image_corpus if asset.id not in set(positive_ids)),
        key=lambda asset: asset.id,
    )
    n_negatives = int(round(cfg.negative_ratio * len(positives)))
    if len(pool) < n_negatives:
        raise InsufficientCorpus(
            f"corpus has {len(pool)} non-positive images, need {n_negatives}"
        )

    n_hard = int(cfg.hard_fraction * n_negatives)
    rng = random.Random(f"{cfg.rng_seed}:{query.id}")

    hard: list[ImageAsset] = []
    if n_hard:
        query_vector = embedder.embed([query.text])[0]
        texts = [asset.matching_text() or asset.id for asset in pool]
        vectors = embedder.embed(texts)
        ranked = sorted(
            zip(pool, vectors),
            key=lambda pair: (-cosine(query_vector, pair[1]), pair[0].id),
        )
        hard = [asset for asset, _ in ranked[:n_hard]]
    remainder = [asset for asset in pool if asset not in hard]
    randoms = rng.sample(remainder, n_negatives - n_hard)

    candidates = positives + hard + randoms
    rng.shuffle(candidates)
    return DatasetSample(
        id=query.id,
        query=query.text,
        sentences=gt.sentences,
        images=tuple(candidates),
        gt_placements=gt.placements,
        difficulty=difficulty,
        source=source,
    )


# --- difficulty stratification -------------------------------------------------

_DIFFICULTY_TAG_RE = re.compile(r"<difficulty_score>\s*([1-5])\s*</difficulty_score>")


def _judge_difficulty(
    sample: DatasetSample, judge: ChatProvider, max_attempts: int = 3
) -> int:
    prompt = render(
        DIFFICULTY_JUDGE,
        {"question": sample.query, "answer_str": sample.sentences.joined()},
    )
    last_reply = ""
    for _ in range(max_attempts):
        request = ChatRequest.user(prompt, model=judge.model, temperature=0.0)
        last_reply = judge.complete(request).text
        match = _DIFFICULTY_TAG_RE.search(last_reply)
        if match:
            return int(match.group(1))
    raise JudgeParseError(
        f"no <difficulty_score> tag after {max_attempts} attempts; last reply: "
        f"{last_reply[:200]!r}"
    )


def _minmax_normalize(scores: Sequence[float]) -> list[float]:
    low, high = min(scores), max(scores)
    if high == low:
        return [0.5] * len(scores)  # constant judge carries no signal
    return [(s - low) / (high - low) for s in scores]


def assign_tiers(means: Sequence[float]) -> list[str]:
    """Tercile thresholds over the corpus distribution: top third easy,
    bottom third hard. Equal thresholds collapse everything to medium."""
    t1 = float(np.quantile(means, 1 / 3))
    t2 = float(np.quantile(means, 2 / 3))
    return [EASY if m > t2 else HARD if m < t1 else MEDIUM for m in means]


def stratify_difficulty(
    samples: Sequence[DatasetSample],
    judges: Sequence[ChatProvider],
    max_attempts: int = 3,
) -> tuple[list[DatasetSample], list[DifficultyTier], list[str]]:
    """Tri-judge difficulty scoring: each judge rates every sample 1-5, per-judge
    scores are min-max normalized over the corpus, averaged per sample, and
    cut into terciles.

    Returns (samples with difficulty set, per-sample tiers, flagged sample
    ids). A sample whose judging fails lands in the medium tier and is
    flagged rather than dropped.
    """
    if len(samples) < 3:
        raise ValueError("difficulty stratification needs at least 3 samples")
    if not judges:
        raise ValueError("at least one judge is required")

    flagged: list[str] = []
    per_judge: list[list[float]] = []
    failed: set[int] = set()
    for judge in judges:
        scores: list[float] = []
        for position, sample in enumerate(samples):
            try:
                scores.append(float(_judge_difficulty(sample, judge, max_attempts)))
            except JudgeParseError:
                failed.add(position)
                scores.append(3.0)  # placeholder; tier is forced to medium below
        per_judge.append(_minmax_normalize(scores))

    means = [
        sum(scores[position] for scores in per_judge) / len(per_judge)
        for position in range(len(samples))
    ]
    tiers = assign_tiers(means)
    for position in sorted(failed):
        tiers[position] = MEDIUM
        flagged.append(samples[position].id)

    updated = [
        DatasetSample(
            id=s.id,
            query=s.query,
            sentences=s.sentences,
            images=s.images,
            gt_placements=s.gt_placements,
            difficulty=tier,
            source=s.source,
        )
        for s, tier in zip(samples, tiers)
    ]
    tier_records = [DifficultyTier(tier, mean) for tier, mean in zip(tiers, means)]
    return updated, tier_records, flagged


# --- split protocols -------------------------------------------------------------

FULL_SOURCE = "full_source"
WEB_FOCUSED = "web_focused"


def split(
    samples: Sequence[DatasetSample], protocol: str, seed: int
) -> tuple[list[DatasetSample], list[DatasetSample]]:
    """Split into (train, eval) under one of the two protocols.

    full_source: seeded 50/50, stratified by difficulty tier so both halves
    keep a uniform difficulty distribution. web_focused: 80/20 within each of
    the web sources (wit/web/wiki); everything from the non-web sources goes
    to eval only.
    """
    if protocol == FULL_SOURCE:
        groups: dict[str, list[DatasetSample]] = {}
        for sample in samples:
            groups.setdefault(sample.difficulty or "unknown", []).append(sample)
        train: list[DatasetSample] = []
        evaluation: list[DatasetSample] = []
        for tier in sorted(groups):
            members = list(groups[tier])
            random.Random(f"{seed}:{tier}").shuffle(members)
            cut = len(members) // 2
            train.extend(members[:cut])
            evaluation.extend(members[cut:])
        return _in_input_order(samples, train), _in_input_order(samples, evaluation)

    if protocol == WEB_FOCUSED:
        by_source: dict[str, list[DatasetSample]] = {}
        for sample in samples:
            source = (sample.source or "").lower()
            if not source:
                raise UnknownSource(f"sample {sample.id!r} has no source label")
            if source not in WEB_SOURCES and source not in NON_WEB_SOURCES:
                raise UnknownSource(f"sample {sample.id!r} has unknown source {source!r}")
            by_source.setdefault(source, []).append(sample)
        train = []
        evaluation = []
        for source in sorted(by_source):
            members = list(by_source[source])
            if source in NON_WEB_SOURCES:
                evaluation.extend(members)
                continue
            random.Random(f"{seed}:{source}").shuffle(members)
            cut = int(0.8 * len(members))
            train.extend(members[:cut])
            evaluation.extend(members[cut:])
        return _in_input_order(samples, train), _in_input_order(samples, evaluation)

    raise ValueError(f"unknown split protocol {protocol!r}")


def _in_input_order(
    samples: Sequence[DatasetSample], subset: Iterable[DatasetSample]
) -> list[DatasetSample]:
    chosen = {sample.id for sample in subset}
    return [sample for sample in samples if sample.id in chosen]


# --- canonical-schema linter -------------------------------------------------------


@dataclass(frozen=True)
class LintIssue:
    line: int
    sample_id: str
    rule: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"line {self.line} [{self.rule}] {self.sample_id}: {self.message}"


def lint_dataset(path: str | Path) -> list[LintIssue]:
    """Check every core invariant of the canonical JSONL schema.

    Returns issues instead of raising so callers can report all of them;
    an empty list means the file is clean.
    """
    issues: list[LintIssue] = []
    seen_ids: set[str] = set()

    def issue(line: int, sample_id: str, rule: str, message: str, severity: str = "error"):
        issues.append(LintIssue(line, sample_id, rule, message, severity))

    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                issue(line_no, "?", "valid_json", str(exc))
                continue
            sample_id = str(obj.get("id", "?"))
            if not sample_id or sample_id == "?":
                issue(line_no, sample_id, "id_nonempty", "missing or empty id")
                continue
            if sample_id in seen_ids:
                issue(line_no, sample_id, "id_unique", "duplicate sample id")
            seen_ids.add(sample_id)

            if not str(obj.get("query", "")).strip():
                issue(line_no, sample_id, "query_nonempty", "missing or empty query")

            sentence_count = 0
            try:
                sentences = SentenceMap.from_dict(obj.get("sentences", {}))
                sentence_count = len(sentences)
            except (SchemaError, ValueError) as exc:
                issue(line_no, sample_id, "sentences_contiguous", str(exc))

            image_ids: set[str] = set()
            for entry in obj.get("images", []):
                entry_id = str(entry.get("id", "")) if isinstance(entry, dict) else ""
                if not entry_id:
                    issue(line_no, sample_id, "image_id_nonempty", "image without id")
                    continue
                if entry_id in image_ids:
                    issue(line_no, sample_id, "image_id_unique", f"duplicate image {entry_id!r}")
                image_ids.add(entry_id)
                if isinstance(entry, dict) and not any(
                    str(entry.get(k) or "").strip()
                    for k in ("caption", "context_above", "context_below")
                ):
                    issue(
                        line_no,
                        sample_id,
                        "image_metadata_present",
                        f"image {entry_id!r} has neither caption nor context "
                        "(rule-based matching inapplicable)",
                        severity="warning",
                    )

            placements = obj.get("gt_placements", {})
            targets: set[int] = set()
            if isinstance(placements, dict):
                for image_id, target in placements.items():
                    if image_id not in image_ids:
                        issue(
                            line_no,
                            sample_id,
                            "placement_image_known",
                            f"placement references unknown image {image_id!r}",
                        )
                    if isinstance(target, bool) or not isinstance(target, int):
                        issue(
                            line_no,
                            sample_id,
                            "placement_target_integer",
                            f"placement {image_id!r} -> {target!r} is not an integer",
                        )
                        continue
                    if sentence_count and not 1 <= target <= sentence_count:
                        issue(
                            line_no,
                            sample_id,
                            "placement_target_in_range",
                            f"placement {image_id!r} -> {target} outside 1..{sentence_count}",
                        )
                    if target in targets:
                        issue(
                            line_no,
                            sample_id,
                            "placement_target_unique",
                            f"two placements target sentence {target}",
                        )
                    targets.add(target)
            else:
                issue(line_no, sample_id, "placements_object", "gt_placements must be an object")

            difficulty = obj.get("difficulty")
            if difficulty is not None and difficulty not in DIFFICULTIES:
                issue(
                    line_no,
                    sample_id,
                    "difficulty_valid",
                    f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}",
                )
    return issues


# --- ingestion adapters -------------------------------------------------------------


def from_benchmark_json(path: str | Path) -> list[DatasetSample]:
    """Ingest a benchmark-style JSON file: a list of records with ``id``,
    ``question``/``query``, pre-split ``sentences`` (or a plain ``answer``),
    an ``images`` list, and ``placements``/``gt_placements``."""
    from .generation import split_sentences

    with open(path, encoding="utf-8") as handle:
        records = json.load(handle)
    if not isinstance(records, list):
        raise SchemaError("benchmark JSON must be a list of records")
    samples = []
    for record in records:
        obj = dict(record)
        obj.setdefault("id", obj.get("qid"))
        obj.setdefault("query", obj.get("question"))
        if "sentences" not in obj:
            answer = obj.get("answer")
            if not answer:
                raise SchemaError(f"record {obj.get('id')!r} has neither sentences nor answer")
            obj["sentences"] = split_sentences(str(answer)).to_dict()
        obj.setdefault("gt_placements", obj.get("placements", {}))
        samples.append(sample_from_json(obj))
    return samples


def from_csv_with_manifest(
    samples_csv: str | Path, image_manifest: str | Path
) -> list[DatasetSample]:
    """Ingest a CSV of samples plus a JSONL image manifest.

    CSV columns: id, query, answer, and optionally difficulty, source.
    Manifest lines: {"sample_id", "id", "uri", "caption", "context_above",
    "context_below", "position"} where position is the 1-based sentence index
    for ground-truth images (absent for distractors).
    """
    from .generation import split_sentences

    images_by_sample: dict[str, list[dict]] = {}
    with open(image_manifest, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            entry = json.loads(line)
            images_by_sample.setdefault(str(entry["sample_id"]), []).append(entry)

    samples = []
    with open(samples_csv, encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            sample_id = row["id"]
            entries = images_by_sample.get(sample_id, [])
            images = [
                {
                    "id": e["id"],
                    "uri": e.get("uri", ""),
                    "caption": e.get("caption"),
                    "context_above": e.get("context_above"),
                    "context_below": e.get("context_below"),
                }
                for e in entries
            ]
            placements = {
                e["id"]: int(e["position"]) for e in entries if e.get("position") is not None
            }
            obj = {
                "id": sample_id,
                "query": row["query"],
                "sentences": split_sentences(row["answer"]).to_dict(),
                "images": images,
                "gt_placements": placements,
            }
            if row.get("difficulty"):
                obj["difficulty"] = row["difficulty"]
            if row.get("source"):
                obj["source"] = row["source"]
            samples.append(sample_from_json(obj))
    return samples
