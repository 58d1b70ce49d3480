"""Core domain types for interleaved text-and-image answers.

An image-placement decision has two interchangeable views:

* a *placement map*: image id -> 1-based index of the sentence after which
  the image appears, and
* a *placement sequence*: one slot per sentence holding an image id or
  ``EMPTY``.

``to_sequence`` expands a map into a sequence; ``placements_from_sequence``
inverts it. All types here are immutable after construction and safe to
share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Union

from .errors import DuplicateTarget, SchemaError

# Slot content meaning "no image after this sentence". Serialized fixtures
# spell it "∅"; in memory it is None.
EMPTY = None
EMPTY_TOKEN = "∅"

DIFFICULTIES = ("easy", "medium", "hard")


def _require_nonempty(value: str, what: str) -> None:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"{what} must be a non-empty string")


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self) -> None:
        _require_nonempty(self.id, "query id")
        _require_nonempty(self.text, f"query {self.id!r} text")


@dataclass(frozen=True)
class DocumentChunk:
    id: str
    text: str
    image_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _require_nonempty(self.id, "document id")
        _require_nonempty(self.text, f"document {self.id!r} text")
        object.__setattr__(self, "image_ids", tuple(self.image_ids))


@dataclass(frozen=True)
class ImageAsset:
    """An image reference plus the text metadata used to reason about it.

    Pixels are never touched; ``uri`` is opaque. At least one of caption /
    context_above / context_below must be present for similarity-based
    matching to be applicable (``matching_text`` returns None otherwise).
    """

    id: str
    uri: str
    caption: str | None = None
    context_above: str | None = None
    context_below: str | None = None

    def __post_init__(self) -> None:
        _require_nonempty(self.id, "image id")

    def matching_text(self) -> str | None:
        """Text standing in for the image in similarity computations.

        Caption if present, contexts otherwise, caption followed by contexts
        when both exist: captions carry the denser signal, contexts add
        recall.
        """
        parts: list[str] = []
        if self.caption and self.caption.strip():
            parts.append(self.caption.strip())
        contexts = " ".join(
            c.strip() for c in (self.context_above, self.context_below) if c and c.strip()
        )
        if contexts:
            parts.append(contexts)
        return " ".join(parts) if parts else None

    def context_line(self) -> str:
        """The image rendered in ``[context_above] <img> [context_bottom]`` form."""
        above = (self.context_above or "").strip()
        below = (self.context_below or "").strip()
        return f"{above} <img> {below}".strip()


def image_catalog(assets: Iterable[ImageAsset]) -> dict[str, ImageAsset]:
    """Index assets by id, rejecting duplicates."""
    catalog: dict[str, ImageAsset] = {}
    for asset in assets:
        if asset.id in catalog:
            raise ValueError(f"duplicate image id {asset.id!r}")
        catalog[asset.id] = asset
    return catalog


@dataclass(frozen=True)
class SentenceMap:
    """The sentences of an answer, indexed 1..m with no gaps."""

    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise ValueError("a sentence map must contain at least one sentence")
        for index, text in enumerate(self.sentences, start=1):
            if not isinstance(text, str) or not text.strip():
                raise ValueError(f"sentence {index} is empty")

    def __len__(self) -> int:
        return len(self.sentences)

    def __getitem__(self, index: int) -> str:
        if not 1 <= index <= len(self.sentences):
            raise IndexError(f"sentence index {index} outside 1..{len(self.sentences)}")
        return self.sentences[index - 1]

    def items(self) -> Iterator[tuple[int, str]]:
        return enumerate(self.sentences, start=1)

    def joined(self) -> str:
        return " ".join(self.sentences)

    @classmethod
    def from_dict(cls, mapping: Mapping[Union[int, str], str]) -> "SentenceMap":
        try:
            pairs = sorted((int(key), value) for key, value in mapping.items())
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"sentence indices must be integers: {exc}") from exc
        indices = [index for index, _ in pairs]
        if indices != list(range(1, len(pairs) + 1)):
            raise SchemaError(f"sentence indices must run 1..m without gaps, got {indices}")
        return cls(tuple(value for _, value in pairs))

    def to_dict(self) -> dict[str, str]:
        return {str(index): text for index, text in self.items()}


@dataclass(frozen=True)
class PlacementMap:
    """image id -> index of the sentence the image is inserted after.

    Construction enforces the invariants: ids unique, indices >= 1, and no
    two ids sharing a sentence. Raw model output may violate them; the
    insertion parser normalizes before building one of these.
    """

    entries: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((i, j) for i, j in self.entries))
        seen_ids: set[str] = set()
        seen_targets: set[int] = set()
        for image_id, index in self.entries:
            _require_nonempty(image_id, "image id")
            if isinstance(index, bool) or not isinstance(index, int) or index < 1:
                raise ValueError(
                    f"placement for {image_id!r} must be a sentence index >= 1, got {index!r}"
                )
            if image_id in seen_ids:
                raise ValueError(f"image {image_id!r} placed twice")
            if index in seen_targets:
                raise DuplicateTarget(f"two images target sentence {index}")
            seen_ids.add(image_id)
            seen_targets.add(index)

    @classmethod
    def of(cls, mapping: Mapping[str, int]) -> "PlacementMap":
        return cls(tuple(mapping.items()))

    def as_dict(self) -> dict[str, int]:
        return dict(self.entries)

    def items(self) -> tuple[tuple[str, int], ...]:
        return self.entries

    def image_ids(self) -> tuple[str, ...]:
        return tuple(image_id for image_id, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, image_id: str) -> bool:
        return any(i == image_id for i, _ in self.entries)

    def get(self, image_id: str) -> int | None:
        for i, j in self.entries:
            if i == image_id:
                return j
        return None


@dataclass(frozen=True)
class PlacementSequence:
    """Per-sentence slots: slot j holds the image after sentence j, or EMPTY."""

    slots: tuple[str | None, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", tuple(self.slots))

    def __len__(self) -> int:
        return len(self.slots)


def to_sequence(placements: PlacementMap, sentence_count: int) -> PlacementSequence:
    """Expand a placement map into one slot per sentence.

    Indices outside [1, sentence_count] are a caller bug (upstream
    normalization drops them) and raise ValueError.
    """
    if sentence_count < 0:
        raise ValueError("sentence count must be >= 0")
    slots: list[str | None] = [EMPTY] * sentence_count
    for image_id, index in placements.items():
        if not 1 <= index <= sentence_count:
            raise ValueError(
                f"placement {image_id!r} -> {index} outside 1..{sentence_count}"
            )
        if slots[index - 1] is not EMPTY:
            raise DuplicateTarget(
                f"sentence {index} targeted by both {slots[index - 1]!r} and {image_id!r}"
            )
        slots[index - 1] = image_id
    return PlacementSequence(tuple(slots))


def ordered_images(sequence: PlacementSequence) -> tuple[str, ...]:
    """Non-EMPTY slots in slot order, duplicates preserved."""
    return tuple(slot for slot in sequence.slots if slot is not EMPTY)


def placements_from_sequence(sequence: PlacementSequence) -> PlacementMap:
    """Inverse of to_sequence for sequences with distinct non-EMPTY slots."""
    return PlacementMap(
        tuple(
            (slot, index)
            for index, slot in enumerate(sequence.slots, start=1)
            if slot is not EMPTY
        )
    )


def sequence_to_tokens(sequence: PlacementSequence) -> list[str]:
    """Serialized fixture form: image ids with EMPTY spelled as "∅"."""
    return [EMPTY_TOKEN if slot is EMPTY else slot for slot in sequence.slots]


def sequence_from_tokens(tokens: Iterable[str]) -> PlacementSequence:
    return PlacementSequence(
        tuple(EMPTY if token == EMPTY_TOKEN else token for token in tokens)
    )


@dataclass(frozen=True)
class TextBlock:
    text: str

    def __post_init__(self) -> None:
        _require_nonempty(self.text, "text block")


@dataclass(frozen=True)
class ImageBlock:
    image_id: str

    def __post_init__(self) -> None:
        _require_nonempty(self.image_id, "image block id")


Block = Union[TextBlock, ImageBlock]


@dataclass(frozen=True)
class MultimodalAnswer:
    """The merged answer: ordered text runs interleaved with image references."""

    blocks: tuple[Block, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        previous: Block | None = None
        for block in self.blocks:
            if (
                isinstance(block, ImageBlock)
                and isinstance(previous, ImageBlock)
                and block.image_id == previous.image_id
            ):
                raise ValueError(f"image {block.image_id!r} repeated in adjacent blocks")
            previous = block

    def text(self) -> str:
        return " ".join(b.text for b in self.blocks if isinstance(b, TextBlock))

    def image_ids(self) -> tuple[str, ...]:
        return tuple(b.image_id for b in self.blocks if isinstance(b, ImageBlock))


@dataclass(frozen=True)
class GroundTruth:
    """Reference sentences and placements for one sample."""

    sentences: SentenceMap
    placements: PlacementMap

    def __post_init__(self) -> None:
        to_sequence(self.placements, len(self.sentences))  # validates ranges

    @property
    def sequence(self) -> PlacementSequence:
        return to_sequence(self.placements, len(self.sentences))

    @property
    def ordered_images(self) -> tuple[str, ...]:
        return ordered_images(self.sequence)


@dataclass(frozen=True)
class DatasetSample:
    """One evaluation/training sample in the canonical schema."""

    id: str
    query: str
    sentences: SentenceMap
    images: tuple[ImageAsset, ...]
    gt_placements: PlacementMap
    difficulty: str | None = None
    source: str | None = None

    def __post_init__(self) -> None:
        _require_nonempty(self.id, "sample id")
        _require_nonempty(self.query, f"sample {self.id!r} query")
        object.__setattr__(self, "images", tuple(self.images))
        catalog = image_catalog(self.images)
        for image_id, index in self.gt_placements.items():
            if image_id not in catalog:
                raise SchemaError(
                    f"sample {self.id!r}: placement references unknown image {image_id!r}"
                )
            if not 1 <= index <= len(self.sentences):
                raise SchemaError(
                    f"sample {self.id!r}: placement {image_id!r} -> {index} outside "
                    f"1..{len(self.sentences)}"
                )
        if self.difficulty is not None and self.difficulty not in DIFFICULTIES:
            raise SchemaError(
                f"sample {self.id!r}: difficulty must be one of {DIFFICULTIES}, "
                f"got {self.difficulty!r}"
            )

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(self.sentences, self.gt_placements)

    def image_catalog(self) -> dict[str, ImageAsset]:
        return image_catalog(self.images)

    def valid_image_ids(self) -> frozenset[str]:
        return frozenset(asset.id for asset in self.images)

    def as_query(self) -> Query:
        return Query(self.id, self.query)


# --- canonical JSONL schema -------------------------------------------------
#
# One object per line:
#   {"id": ..., "query": ..., "sentences": {"1": ...}, "images": [{...}],
#    "gt_placements": {"image3": 2}, "difficulty": "easy|medium|hard",
#    "source": "wit"}        (difficulty and source optional)


def _image_from_json(obj: object, sample_id: str) -> ImageAsset:
    if not isinstance(obj, dict):
        raise SchemaError(f"sample {sample_id!r}: image entries must be objects")
    try:
        return ImageAsset(
            id=obj["id"],
            uri=obj.get("uri", ""),
            caption=obj.get("caption"),
            context_above=obj.get("context_above"),
            context_below=obj.get("context_below"),
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"sample {sample_id!r}: bad image entry: {exc}") from exc


def sample_from_json(obj: Mapping[str, object]) -> DatasetSample:
    for key in ("id", "query", "sentences", "images", "gt_placements"):
        if key not in obj:
            raise SchemaError(f"sample object missing required key {key!r}")
    sample_id = str(obj["id"])
    sentences = SentenceMap.from_dict(obj["sentences"])  # type: ignore[arg-type]
    images = tuple(_image_from_json(entry, sample_id) for entry in obj["images"])  # type: ignore[union-attr]
    placements_obj = obj["gt_placements"]
    if not isinstance(placements_obj, Mapping):
        raise SchemaError(f"sample {sample_id!r}: gt_placements must be an object")
    try:
        placements = PlacementMap.of(
            {str(k): int(v) for k, v in placements_obj.items()}
        )
    except (TypeError, ValueError, DuplicateTarget) as exc:
        raise SchemaError(f"sample {sample_id!r}: bad gt_placements: {exc}") from exc
    difficulty = obj.get("difficulty")
    source = obj.get("source")
    try:
        return DatasetSample(
            id=sample_id,
            query=str(obj["query"]),
            sentences=sentences,
            images=images,
            gt_placements=placements,
            difficulty=None if difficulty is None else str(difficulty),
            source=None if source is None else str(source),
        )
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def sample_to_json(sample: DatasetSample) -> dict[str, object]:
    images = []
    for asset in sample.images:
        entry: dict[str, object] = {"id": asset.id, "uri": asset.uri}
        if asset.caption is not None:
            entry["caption"] = asset.caption
        if asset.context_above is not None:
            entry["context_above"] = asset.context_above
        if asset.context_below is not None:
            entry["context_below"] = asset.context_below
        images.append(entry)
    obj: dict[str, object] = {
        "id": sample.id,
        "query": sample.query,
        "sentences": sample.sentences.to_dict(),
        "images": images,
        "gt_placements": sample.gt_placements.as_dict(),
    }
    if sample.difficulty is not None:
        obj["difficulty"] = sample.difficulty
    if sample.source is not None:
        obj["source"] = sample.source
    return obj


def load_samples(path: str | Path) -> list[DatasetSample]:
    """Read a canonical JSONL dataset, enforcing unique sample ids."""
    samples: list[DatasetSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            sample = sample_from_json(obj)
            if sample.id in seen:
                raise SchemaError(f"{path}:{line_no}: duplicate sample id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
    return samples


def dump_samples(samples: Iterable[DatasetSample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample_to_json(sample), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def index_samples(samples: Iterable[DatasetSample]) -> dict[str, DatasetSample]:
    index: dict[str, DatasetSample] = {}
    for sample in samples:
        if sample.id in index:
            raise SchemaError(f"duplicate sample id {sample.id!r}")
        index[sample.id] = sample
    return index
