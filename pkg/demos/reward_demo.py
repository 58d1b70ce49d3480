"""Score rollouts locally and over HTTP, showing how each reward component
reacts to format breaks, wrong picks, and wrong slots.

Run: python3 demos/reward_demo.py
"""

import httpx

from mmrag.model import (
    GroundTruth,
    ImageAsset,
    PlacementMap,
    SentenceMap,
    DatasetSample,
)
from mmrag.reward import RewardConfig, score_rollout
from mmrag.service import BackgroundServer

sentences = SentenceMap(
    ("Fit the spout first.", "Then tighten the base ring.", "Polish it.")
)
gt = GroundTruth(sentences, PlacementMap.of({"image1": 1, "image2": 2}))
valid_ids = {"image1", "image2", "image3"}

rollouts = {
    "perfect": '<think>ok</think><answer>{"image1": 1, "image2": 2}</answer>',
    "right images, one wrong slot": '<think>ok</think><answer>{"image1": 1, "image2": 3}</answer>',
    "distractor picked": '<think>ok</think><answer>{"image3": 1}</answer>',
    "nothing inserted": "<think>ok</think><answer>{}</answer>",
    "broken format": 'The answer is {"image1": 1}',
}

print(f"{'rollout':32} {'fmt':>3} {'rec':>5} {'pos':>5} {'answer':>6} {'total':>5}")
for name, completion in rollouts.items():
    s = score_rollout(completion, gt, valid_ids, RewardConfig(alpha=0.8))
    print(
        f"{name:32} {s.r_format:>3} {s.r_rec:>5.2f} {s.r_pos:>5.2f} "
        f"{s.r_answer:>6.3f} {s.r_total:>5.2f}"
    )

print("\n== same scores over the HTTP service ==")
sample = DatasetSample(
    id="demo",
    query="How do I assemble the kettle?",
    sentences=sentences,
    images=(
        ImageAsset("image1", "u", caption="spout"),
        ImageAsset("image2", "u", caption="base ring"),
        ImageAsset("image3", "u", caption="unrelated"),
    ),
    gt_placements=gt.placements,
)
with BackgroundServer({"demo": sample}) as base_url:
    with httpx.Client() as client:
        print("health:", client.get(f"{base_url}/v1/health").json())
        body = client.post(
            f"{base_url}/v1/score",
            json={
                "items": [
                    {"sample_id": "demo", "completion": completion}
                    for completion in rollouts.values()
                ],
                "alpha": 0.8,
            },
        ).json()
        for name, score in zip(rollouts, body["scores"]):
            print(f"{name:32} r_total={score['r_total']}")
