"""Image selection/placement strategies and answer merging.

Three interchangeable strategies produce a placement map:

* prompt-based insertion (reasoning-tagged or bare-dict styles),
* rule-based max-weight bipartite matching of sentences to images,
* one-pass interleaved generation parsed back into text + placements.

This module also owns the tolerant parser for ``<think>/<answer>``
completions. Malformation is a status, never an exception: a broken
completion degrades to "no images inserted" with diagnostics, mirroring how
the reward gate scores it as 0 rather than erroring.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from typing import AbstractSet, Mapping, Sequence

from scipy.optimize import linear_sum_assignment

from .errors import UnknownImage
from .generation import normalize_whitespace, split_sentences
from .model import (
    ImageAsset,
    ImageBlock,
    MultimodalAnswer,
    PlacementMap,
    Query,
    SentenceMap,
    TextBlock,
)
from .prompts import INSERT_BASE, INSERT_R1, render
from .providers import ChatProvider, ChatRequest
from .retrieval import EmbeddingProvider, cosine

STYLE_R1 = "r1"
STYLE_BASE = "base"

WELL_FORMED = "well_formed"

# malformed_reason codes
MISSING_THINK = "missing_think"
MULTIPLE_THINK = "multiple_think"
MISSING_ANSWER = "missing_answer"
MULTIPLE_ANSWER = "multiple_answer"
TAG_ORDER = "tag_order"
UNPARSABLE_DICT = "unparsable_dict"


@dataclass(frozen=True)
class InserterOutput:
    """Parse result for one inserter completion.

    ``well_formed`` reflects structural validity only (tags present, ordered,
    payload parses as a flat string->int dict). Entries dropped by
    normalization leave it True; they surface in ``warnings``.
    """

    raw: str
    think: str | None
    answer_dict: PlacementMap | None
    well_formed: bool
    malformed_reason: str | None = None
    warnings: tuple[str, ...] = ()

    @property
    def parse_status(self) -> str:
        if self.well_formed:
            return WELL_FORMED
        return f"malformed:{self.malformed_reason}"

    def placements(self) -> PlacementMap:
        return self.answer_dict if self.answer_dict is not None else PlacementMap()


def _coerce_index(value: object) -> int | None:
    """Accept ints and integer-valued strings; reject bools, floats, rest."""
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value.strip())
        except ValueError:
            return None
    return None


def parse_placement_payload(payload: str) -> dict[str, int] | None:
    """Tolerantly parse a dict literal: JSON, single quotes, Python style,
    optional trailing commas. Returns None when the payload is not a flat
    string->int map."""
    text = payload.strip()
    if not text:
        return None
    parsed: object | None = None
    try:
        parsed = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        try:
            parsed = ast.literal_eval(text)
        except (ValueError, SyntaxError, MemoryError, RecursionError):
            return None
    if not isinstance(parsed, dict):
        return None
    result: dict[str, int] = {}
    for key, value in parsed.items():
        if not isinstance(key, str):
            return None
        index = _coerce_index(value)
        if index is None:
            return None
        result[key] = index
    return result


def _normalize_entries(
    entries: Mapping[str, int], valid_ids: AbstractSet[str], sentence_count: int
) -> tuple[PlacementMap, list[str]]:
    """Drop unknown ids, out-of-range indices, and duplicate targets
    (first key in textual order wins). Drops are warnings, not errors."""
    warnings: list[str] = []
    kept: list[tuple[str, int]] = []
    taken: set[int] = set()
    for image_id, index in entries.items():
        if image_id not in valid_ids:
            warnings.append(f"unknown_image:{image_id}")
            continue
        if not 1 <= index <= sentence_count:
            warnings.append(f"out_of_range:{image_id}->{index}")
            continue
        if index in taken:
            warnings.append(f"duplicate_target:{image_id}->{index}")
            continue
        if any(existing == image_id for existing, _ in kept):
            warnings.append(f"duplicate_image:{image_id}")
            continue
        kept.append((image_id, index))
        taken.add(index)
    return PlacementMap(tuple(kept)), warnings


def parse_inserter_output(
    raw: str, valid_ids: AbstractSet[str], sentence_count: int
) -> InserterOutput:
    """Parse a reasoning-tagged completion. Never raises on any input.

    Well-formed means exactly one ``<think>...</think>`` block followed by
    exactly one ``<answer>...</answer>`` block whose payload parses as a flat
    dict. Surrounding prose is tolerated; duplicated or out-of-order tags are
    not.
    """
    if not isinstance(raw, str):
        raw = str(raw)

    def malformed(reason: str) -> InserterOutput:
        return InserterOutput(raw, None, None, False, reason)

    counts = {tag: raw.count(tag) for tag in ("<think>", "</think>", "<answer>", "</answer>")}
    if counts["<think>"] == 0 or counts["</think>"] == 0:
        return malformed(MISSING_THINK)
    if counts["<think>"] > 1 or counts["</think>"] > 1:
        return malformed(MULTIPLE_THINK)
    if counts["<answer>"] == 0 or counts["</answer>"] == 0:
        return malformed(MISSING_ANSWER)
    if counts["<answer>"] > 1 or counts["</answer>"] > 1:
        return malformed(MULTIPLE_ANSWER)
    think_open = raw.index("<think>")
    think_close = raw.index("</think>")
    answer_open = raw.index("<answer>")
    answer_close = raw.index("</answer>")
    if not think_open < think_close < answer_open < answer_close:
        return malformed(TAG_ORDER)

    think = raw[think_open + len("<think>") : think_close]
    payload = raw[answer_open + len("<answer>") : answer_close]
    entries = parse_placement_payload(payload)
    if entries is None:
        return InserterOutput(raw, think, None, False, UNPARSABLE_DICT)
    placements, warnings = _normalize_entries(entries, valid_ids, sentence_count)
    return InserterOutput(raw, think, placements, True, None, tuple(warnings))


def _balanced_braces(text: str, start: int) -> int | None:
    """Index one past the brace closing the one opened at `start`, tracking
    quoted strings so braces inside them are ignored."""
    depth = 0
    quote: str | None = None
    i = start
    while i < len(text):
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return None


def parse_base_output(
    raw: str, valid_ids: AbstractSet[str], sentence_count: int
) -> InserterOutput:
    """Parse a bare-dict completion (no reasoning tags expected)."""
    if not isinstance(raw, str):
        raw = str(raw)
    start = raw.find("{")
    while start != -1:
        end = _balanced_braces(raw, start)
        if end is None:
            break
        entries = parse_placement_payload(raw[start:end])
        if entries is not None:
            placements, warnings = _normalize_entries(entries, valid_ids, sentence_count)
            return InserterOutput(raw, None, placements, True, None, tuple(warnings))
        start = raw.find("{", start + 1)
    return InserterOutput(raw, None, None, False, UNPARSABLE_DICT)


def format_sentence_dict(sentences: SentenceMap) -> str:
    """Sentence map rendered as the prompt's ground-truth answer dict."""
    inner = ", ".join(
        f"{index}: {json.dumps(text, ensure_ascii=False)}" for index, text in sentences.items()
    )
    return "{" + inner + "}"


def candidate_info(candidates: Sequence[ImageAsset]) -> str:
    """Render candidate images for the ``{imgs_info}`` prompt slot,
    deterministically ordered by image id."""
    sections: list[str] = []
    for asset in sorted(candidates, key=lambda a: a.id):
        lines = [f"Image ID: {asset.id}"]
        if asset.caption and asset.caption.strip():
            lines.append(f"Caption: {asset.caption.strip()}")
        if (asset.context_above and asset.context_above.strip()) or (
            asset.context_below and asset.context_below.strip()
        ):
            lines.append(f"Context: {asset.context_line()}")
        sections.append("\n".join(lines))
    return "\n\n".join(sections)


def insert_prompt_based(
    query: Query,
    sentences: SentenceMap,
    candidates: Sequence[ImageAsset],
    provider: ChatProvider,
    style: str = STYLE_R1,
    temperature: float = 0.0,
    max_tokens: int | None = None,
) -> tuple[PlacementMap, InserterOutput]:
    """Ask a chat model where to insert which images.

    Malformed output degrades to an empty placement map plus diagnostics; the
    pipeline run continues.
    """
    if style not in (STYLE_R1, STYLE_BASE):
        raise ValueError(f"style must be {STYLE_R1!r} or {STYLE_BASE!r}, got {style!r}")
    template = INSERT_R1 if style == STYLE_R1 else INSERT_BASE
    prompt = render(
        template,
        {
            "question": query.text,
            "ground_truth_dict": format_sentence_dict(sentences),
            "imgs_info": candidate_info(candidates),
        },
    )
    request = ChatRequest.user(
        prompt, model=provider.model, temperature=temperature, max_tokens=max_tokens
    )
    response = provider.complete(request)
    valid_ids = frozenset(asset.id for asset in candidates)
    if style == STYLE_R1:
        output = parse_inserter_output(response.text, valid_ids, len(sentences))
    else:
        output = parse_base_output(response.text, valid_ids, len(sentences))
    return output.placements(), output


def match_weights(
    sentences: SentenceMap,
    candidates: Sequence[ImageAsset],
    embedder: EmbeddingProvider,
) -> list[list[float]]:
    """Cosine weight matrix W[sentence][image] for rule-based matching."""
    for asset in candidates:
        if asset.matching_text() is None:
            raise ValueError(
                f"image {asset.id!r} has neither caption nor context; "
                "rule-based matching is inapplicable"
            )
    texts = [text for _, text in sentences.items()]
    texts += [asset.matching_text() or "" for asset in candidates]
    vectors = embedder.embed(texts)
    sentence_vectors = vectors[: len(sentences)]
    image_vectors = vectors[len(sentences) :]
    return [
        [cosine(sv, iv) for iv in image_vectors]
        for sv in sentence_vectors
    ]


def insert_rule_based(
    sentences: SentenceMap,
    candidates: Sequence[ImageAsset],
    embedder: EmbeddingProvider,
    threshold: float = 0.5,
) -> PlacementMap:
    """Max-weight one-to-one assignment of images to sentences.

    Builds the sentence-by-image cosine matrix, solves the rectangular
    assignment problem, then keeps only matched pairs whose weight clears the
    threshold. The result is a matching: at most one image per sentence and
    one sentence per image. Raising the threshold can only shrink it.
    """
    if not candidates:
        return PlacementMap()
    import numpy as np

    weights = np.asarray(match_weights(sentences, candidates, embedder))
    rows, cols = linear_sum_assignment(weights, maximize=True)
    kept = [
        (candidates[col].id, int(row) + 1)
        for row, col in zip(rows, cols)
        if weights[row, col] >= threshold
    ]
    kept.sort(key=lambda pair: pair[1])
    return PlacementMap(tuple(kept))


# --- one-pass interleaved output ---------------------------------------------

_PLACEHOLDER_RE = re.compile(r"<(img_\d+|image\d+|[A-Za-z0-9_\-]+)>")


@dataclass(frozen=True)
class SingleShotParse:
    text: str
    placements: PlacementMap
    warnings: tuple[str, ...] = ()


def _placeholder_id(token: str, valid_ids: AbstractSet[str]) -> str | None:
    """Resolve a placeholder token to an image id, or None when the token is
    not placeholder syntax at all (leave such text alone)."""
    if token in valid_ids:
        return token
    match = re.fullmatch(r"img_(\d+)", token)
    if match:
        return f"image{match.group(1)}"
    if re.fullmatch(r"image\d+", token):
        return token
    return None


def parse_single_shot(
    interleaved: str, valid_ids: AbstractSet[str]
) -> SingleShotParse:
    """Recover (pure text, placements) from a one-pass interleaved answer.

    Placeholders ``<img_N>``, ``<imageN>``, or ``<id>`` for a known id are
    stripped; each image maps to the sentence immediately preceding its
    placeholder (index 1 when none precedes). Unknown image ids are stripped
    and warned about; other angle-bracketed text is left untouched.
    """
    warnings: list[str] = []
    text_parts: list[str] = []
    markers: list[tuple[str, int]] = []  # (image id, offset into normalized text)
    cursor = 0
    for match in _PLACEHOLDER_RE.finditer(interleaved):
        image_id = _placeholder_id(match.group(1), valid_ids)
        if image_id is None:
            continue
        text_parts.append(interleaved[cursor : match.start()])
        offset = len(normalize_whitespace("".join(text_parts)))
        if image_id in valid_ids:
            markers.append((image_id, offset))
        else:
            warnings.append(f"unknown_image:{image_id}")
        cursor = match.end()
    if not markers and not warnings:
        return SingleShotParse(interleaved, PlacementMap(), ())
    text_parts.append(interleaved[cursor:])
    pure = normalize_whitespace("".join(text_parts))
    if not markers:
        return SingleShotParse(pure, PlacementMap(), tuple(warnings))

    ends: list[int] = []
    if pure:
        position = 0
        for _, sentence in split_sentences(pure).items():
            position += len(sentence)
            ends.append(position)
            position += 1  # the joining space

    kept: list[tuple[str, int]] = []
    taken: set[int] = set()
    for image_id, offset in markers:
        preceding = sum(1 for end in ends if end <= offset)
        index = min(max(preceding, 1), len(ends)) if ends else 1
        if any(existing == image_id for existing, _ in kept):
            warnings.append(f"duplicate_image:{image_id}")
            continue
        if index in taken:
            warnings.append(f"duplicate_target:{image_id}->{index}")
            continue
        kept.append((image_id, index))
        taken.add(index)
    kept.sort(key=lambda pair: pair[1])
    return SingleShotParse(pure, PlacementMap(tuple(kept)), tuple(warnings))


# --- merging ------------------------------------------------------------------


def merge(
    answer_text: str,
    sentences: SentenceMap,
    placements: PlacementMap,
    assets: Mapping[str, ImageAsset],
) -> MultimodalAnswer:
    """Interleave sentences with their placed images.

    Consecutive sentences without images coalesce into one text block;
    stripping the image blocks reproduces the sentence-joined answer exactly.
    """
    del answer_text  # the sentence map is the authoritative split of it
    for image_id, index in placements.items():
        if image_id not in assets:
            raise UnknownImage(f"placement references unknown image {image_id!r}")
        if index > len(sentences):
            raise ValueError(
                f"placement {image_id!r} -> {index} exceeds the {len(sentences)} sentences"
            )
    by_index = {index: image_id for image_id, index in placements.items()}
    blocks: list[TextBlock | ImageBlock] = []
    run: list[str] = []
    for index, sentence in sentences.items():
        run.append(sentence)
        if index in by_index:
            blocks.append(TextBlock(" ".join(run)))
            run = []
            blocks.append(ImageBlock(by_index[index]))
    if run:
        blocks.append(TextBlock(" ".join(run)))
    return MultimodalAnswer(tuple(blocks))


def answer_to_markdown(
    answer: MultimodalAnswer, assets: Mapping[str, ImageAsset]
) -> str:
    """Serialize a merged answer as Markdown with image links."""
    parts: list[str] = []
    for block in answer.blocks:
        if isinstance(block, TextBlock):
            parts.append(block.text)
        else:
            asset = assets.get(block.image_id)
            if asset is None:
                raise UnknownImage(f"no asset for image {block.image_id!r}")
            parts.append(f"![{asset.id}]({asset.uri})")
    return "\n\n".join(parts)


def interleaved_text(answer: MultimodalAnswer) -> str:
    """Answer rendered with ``<img_k>`` placeholders in occurrence order, the
    form the judge prompts describe."""
    parts: list[str] = []
    counter = 0
    for block in answer.blocks:
        if isinstance(block, TextBlock):
            parts.append(block.text)
        else:
            counter += 1
            parts.append(f"<img_{counter}>")
    return " ".join(parts)


def single_shot_text(answer: MultimodalAnswer) -> str:
    """Answer rendered with ``<image_id>`` placeholders, the grammar
    parse_single_shot reads back."""
    parts: list[str] = []
    for block in answer.blocks:
        if isinstance(block, TextBlock):
            parts.append(block.text)
        else:
            parts.append(f"<{block.image_id}>")
    return " ".join(parts)


@dataclass(frozen=True)
class InsertionTrace:
    """Per-sample record of what the inserter saw and decided."""

    strategy: str
    raw_output: str
    parse_status: str
    warnings: tuple[str, ...]
    placements: PlacementMap

    def to_json(self) -> dict[str, object]:
        return {
            "strategy": self.strategy,
            "raw_output": self.raw_output,
            "parse_status": self.parse_status,
            "warnings": list(self.warnings),
            "placements": self.placements.as_dict(),
        }
