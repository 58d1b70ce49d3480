"""Regenerate the trainer-client test fixtures.

Writes dataset.jsonl (20 samples), rollouts.jsonl (300 items), and
expected.jsonl (reference scores at alpha 0.8, computed by the scoring
library the service wraps). Deterministic; outputs are committed.

Run from this directory: python3 generate.py
"""

import json
import random
from pathlib import Path

from mmrag.model import (
    DatasetSample,
    ImageAsset,
    PlacementMap,
    SentenceMap,
    dump_samples,
    index_samples,
)
from mmrag.reward import RewardConfig, gt_as_completion, score_batch

HERE = Path(__file__).parent

WORDS = ("copper", "kettle", "meadow", "signal", "harbor", "lantern", "walnut", "ribbon")


def build_samples(n: int, seed: int) -> list[DatasetSample]:
    rng = random.Random(seed)
    samples = []
    for i in range(n):
        m = rng.randint(2, 5)
        sentences = SentenceMap(
            tuple(
                f"Sentence {j} about {rng.choice(WORDS)} {rng.choice(WORDS)} stands."
                for j in range(1, m + 1)
            )
        )
        n_pos = rng.randint(1, min(m, 3))
        targets = sorted(rng.sample(range(1, m + 1), n_pos))
        positives = [
            ImageAsset(f"t{i}img{k}", f"file:///t{i}img{k}.png", caption=f"photo {k}")
            for k in range(n_pos)
        ]
        negatives = [
            ImageAsset(f"t{i}neg{k}", f"file:///t{i}neg{k}.png", caption=f"filler {k}")
            for k in range(n_pos)
        ]
        images = positives + negatives
        rng.shuffle(images)
        samples.append(
            DatasetSample(
                id=f"t{i:03d}",
                query=f"What does sample {i} say about {rng.choice(WORDS)}?",
                sentences=sentences,
                images=tuple(images),
                gt_placements=PlacementMap.of(
                    {img.id: t for img, t in zip(positives, targets)}
                ),
            )
        )
    return samples


def build_rollouts(samples, per_sample: int, seed: int) -> list[dict]:
    rng = random.Random(seed)
    rollouts = []
    for sample in samples:
        gt = sample.ground_truth()
        ids = sorted(sample.valid_image_ids())
        variants = [
            gt_as_completion(gt),
            "<think>t</think><answer>{}</answer>",
            f'<think>t</think><answer>{json.dumps({ids[0]: 1})}</answer>',
            f'<think>t</think><answer>{json.dumps({ids[-1]: len(sample.sentences)})}</answer>',
            "no tags whatsoever",
            "<answer>{}</answer>",
        ]
        for _ in range(per_sample):
            rollouts.append(
                {"sample_id": sample.id, "completion": rng.choice(variants)}
            )
    return rollouts


def main() -> None:
    samples = build_samples(20, seed=420)
    dump_samples(samples, HERE / "dataset.jsonl")
    rollouts = build_rollouts(samples, per_sample=15, seed=421)
    assert len(rollouts) == 300
    with open(HERE / "rollouts.jsonl", "w", encoding="utf-8") as handle:
        for rollout in rollouts:
            handle.write(json.dumps(rollout, sort_keys=True) + "\n")
    index = index_samples(samples)
    entries = score_batch(
        [(r["completion"], r["sample_id"]) for r in rollouts],
        index,
        RewardConfig(alpha=0.8),
    )
    with open(HERE / "expected.jsonl", "w", encoding="utf-8") as handle:
        for rollout, entry in zip(rollouts, entries):
            score = entry.score
            handle.write(
                json.dumps(
                    {
                        "sample_id": rollout["sample_id"],
                        "r_format": score.r_format,
                        "r_rec": score.r_rec,
                        "r_pos": score.r_pos,
                        "r_answer": score.r_answer,
                        "r_total": score.r_total,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print("wrote dataset.jsonl, rollouts.jsonl, expected.jsonl")


if __name__ == "__main__":
    main()
