import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmrag.model import (
    DatasetSample,
    ImageAsset,
    PlacementMap,
    SentenceMap,
)
from mmrag.retrieval import EmbeddingProvider


class StaticEmbeddingProvider(EmbeddingProvider):
    """Maps exact texts to fixed vectors; unseen texts are an error."""

    name = "static"

    def __init__(self, table: dict[str, list[float]]):
        self.table = dict(table)

    @property
    def fingerprint(self) -> str:
        return f"static:{len(self.table)}"

    def embed(self, texts):
        return [np.asarray(self.table[text], dtype=np.float64) for text in texts]


_WORDS = (
    "copper", "kettle", "meadow", "signal", "harbor", "lantern", "walnut",
    "ribbon", "glacier", "furnace", "compass", "valley", "marble", "forest",
)

_SOURCES = ("wit", "web", "wiki", "arxiv", "recipe", "manual")


def make_sample(
    sample_id: str,
    rng: random.Random,
    n_sentences: int | None = None,
    n_positives: int | None = None,
    source: str | None = None,
    difficulty: str | None = None,
) -> DatasetSample:
    m = n_sentences if n_sentences is not None else rng.randint(2, 6)
    sentences = SentenceMap(
        tuple(
            f"Sentence {j} about {rng.choice(_WORDS)} {rng.choice(_WORDS)} stands here."
            for j in range(1, m + 1)
        )
    )
    max_pos = min(m, 3)
    p = n_positives if n_positives is not None else rng.randint(1, max_pos)
    targets = sorted(rng.sample(range(1, m + 1), p))
    positives = [
        ImageAsset(
            id=f"{sample_id}-img{k}",
            uri=f"file:///assets/{sample_id}-img{k}.png",
            caption=f"{rng.choice(_WORDS)} {rng.choice(_WORDS)} photo {k}",
        )
        for k in range(p)
    ]
    distractors = [
        ImageAsset(
            id=f"{sample_id}-neg{k}",
            uri=f"file:///assets/{sample_id}-neg{k}.png",
            caption=f"{rng.choice(_WORDS)} {rng.choice(_WORDS)} distractor {k}",
        )
        for k in range(p)
    ]
    images = positives + distractors
    rng.shuffle(images)
    placements = PlacementMap.of(
        {asset.id: target for asset, target in zip(positives, targets)}
    )
    return DatasetSample(
        id=sample_id,
        query=f"What does {sample_id} say about {rng.choice(_WORDS)}?",
        sentences=sentences,
        images=tuple(images),
        gt_placements=placements,
        difficulty=difficulty,
        source=source,
    )


def make_synthetic_dataset(n: int, seed: int = 0) -> list[DatasetSample]:
    rng = random.Random(seed)
    return [
        make_sample(
            f"s{i:04d}",
            rng,
            source=_SOURCES[i % len(_SOURCES)],
            difficulty=("easy", "medium", "hard")[i % 3],
        )
        for i in range(n)
    ]


@pytest.fixture
def small_dataset():
    return make_synthetic_dataset(10, seed=7)
