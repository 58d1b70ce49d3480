"""Multimodal RAG toolkit: retrieval, text generation, image insertion,
merging, the evaluation metric suite, and a rollout reward service."""

__version__ = "0.1.0"

from .errors import MmragError
from .model import (
    EMPTY,
    DatasetSample,
    DocumentChunk,
    GroundTruth,
    ImageAsset,
    MultimodalAnswer,
    PlacementMap,
    PlacementSequence,
    Query,
    SentenceMap,
    load_samples,
    ordered_images,
    to_sequence,
)
from .reward import RewardConfig, RolloutScore, score_batch, score_rollout

__all__ = [
    "EMPTY",
    "DatasetSample",
    "DocumentChunk",
    "GroundTruth",
    "ImageAsset",
    "MmragError",
    "MultimodalAnswer",
    "PlacementMap",
    "PlacementSequence",
    "Query",
    "RewardConfig",
    "RolloutScore",
    "SentenceMap",
    "__version__",
    "load_samples",
    "ordered_images",
    "score_batch",
    "score_rollout",
    "to_sequence",
]
