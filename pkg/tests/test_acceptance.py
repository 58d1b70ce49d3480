"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned in the assertions, not configurable.
"""

import itertools
import json
import random
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import httpx
import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from conftest import StaticEmbeddingProvider, make_synthetic_dataset
from inserter_cases import CASES
from mmrag.cli import main, sweep_alpha_rows
from mmrag.insertion import insert_rule_based, parse_inserter_output
from mmrag.metrics import (
    EditCostConfig,
    f_score,
    f1,
    order_score,
    position_score,
    weighted_edit_distance,
)
from mmrag.model import (
    EMPTY,
    DatasetSample,
    ImageAsset,
    PlacementMap,
    PlacementSequence,
    SentenceMap,
    dump_samples,
    index_samples,
)
from mmrag.reward import RewardConfig, gt_as_completion, score_batch, score_rollout
from mmrag.service import BackgroundServer
from oracles import edit_distance_by_alignment, exhaustive_assignment_total


def _report(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


# --- 1. edit-distance oracle equivalence ------------------------------------------


def test_edit_distance_oracle_equivalence():
    started = time.monotonic()
    alphabet = "ABC"
    sequences = [
        list(seq)
        for length in range(4)
        for seq in itertools.product(alphabet, repeat=length)
    ]
    assert len(sequences) == 40  # 1 + 3 + 9 + 27 -> 1600 pairs
    configs = [
        EditCostConfig(1.0, 0.8, 0.5, 1.0),
        EditCostConfig(2.0, 1.5, 1.0, 2.5),
        EditCostConfig(1.0, 0.9, 0.2, 1.2),
    ]
    checked = 0
    for costs in configs:
        for gt_seq in sequences:
            for pred_seq in sequences:
                dp = weighted_edit_distance(gt_seq, pred_seq, costs)
                oracle = edit_distance_by_alignment(
                    gt_seq, pred_seq, costs.p1, costs.p2, costs.p3
                )
                assert dp == oracle, (gt_seq, pred_seq, costs)
                checked += 1
    elapsed = time.monotonic() - started
    assert checked == 3 * 1600
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    _report(
        f"edit-distance DP == exhaustive oracle on {checked} pairs "
        f"({elapsed:.2f}s < 10s)"
    )


# --- 2. worked-example fixtures -----------------------------------------------------


def test_worked_example_fixtures():
    assert order_score(["A", "B", "C"], ["A", "C"]) == pytest.approx(4 / 9, abs=1e-9)
    assert order_score(["A", "B"], ["B", "A"]) == pytest.approx(0.5, abs=1e-9)
    gt = PlacementSequence(("A", EMPTY, "B"))
    pred = PlacementSequence(("A", "B", EMPTY))
    assert position_score(gt, pred) == 0.5
    assert f_score(1.0, 0.5) == pytest.approx(2 / 3, abs=1e-12)
    _report("worked-example fixtures (order 4/9 and 0.5, position 0.5, F1 2/3)")


# --- 3. reward identities -------------------------------------------------------------


def _random_rollout_pair(rng: random.Random):
    images = [f"img{k}" for k in range(5)]
    m = rng.randint(1, 6)
    placements = {}
    taken = set()
    for image in rng.sample(images, rng.randint(0, min(m, 4))):
        index = rng.randint(1, m)
        if index not in taken:
            placements[image] = index
            taken.add(index)
    sentences = SentenceMap(tuple(f"Fact number {j} stands." for j in range(1, m + 1)))
    from mmrag.model import GroundTruth

    gt = GroundTruth(sentences, PlacementMap.of(placements))

    roll = rng.random()
    if roll < 0.55:
        pred = {
            image: rng.randint(1, m + 2)
            for image in rng.sample(images + ["ghost"], rng.randint(0, 5))
        }
        completion = f"<think>r</think><answer>{json.dumps(pred)}</answer>"
    elif roll < 0.7:
        completion = f"<answer>{json.dumps({images[0]: 1})}</answer>"
    elif roll < 0.85:
        completion = "<think>r</think><answer>not a dict</answer>"
    else:
        completion = "".join(
            rng.choice("<think></answer>{}:,'\" abcimge123") for _ in range(rng.randint(0, 60))
        )
    return gt, set(images), completion


def test_reward_identities_randomized():
    rng = random.Random(20240817)
    alphas = (0.0, 0.25, 0.5, 0.75, 1.0)
    for _ in range(1000):
        gt, valid_ids, completion = _random_rollout_pair(rng)
        for alpha in alphas:
            score = score_rollout(completion, gt, valid_ids, RewardConfig(alpha=alpha))
            assert score.r_total == score.r_format + score.r_answer
            if score.r_format == 0:
                assert score.r_total == 0.0
            else:
                expected = alpha * score.r_rec + (1 - alpha) * score.r_pos
                assert abs(score.r_answer - expected) <= 1e-12
    _report("reward identities on 1000 randomized pairs x 5 alphas")


def test_ground_truth_rollout_is_maximal():
    dataset = make_synthetic_dataset(200, seed=101)
    for sample in dataset:
        gt = sample.ground_truth()
        score = score_rollout(gt_as_completion(gt), gt, sample.valid_image_ids())
        assert score.r_total == 2.0, sample.id
    _report("ground-truth-as-rollout scores r_total == 2 on all 200 samples")


# --- 4. parser robustness ---------------------------------------------------------------


def test_parser_fuzz_10k():
    rng = random.Random(0xFEED)
    for i in range(10_000):
        length = rng.randint(0, 400)
        raw = bytes(rng.randrange(256) for _ in range(length)).decode(
            "utf-8", errors="replace"
        )
        output = parse_inserter_output(raw, {"image1", "image2"}, 5)
        assert output.well_formed in (True, False)
    _report("parser fuzz: 10000 random byte strings, zero crashes")


def test_parser_fixture_suite():
    assert len(CASES) >= 50
    for name, raw, valid_ids, m, well_formed, reason, placements, warnings in CASES:
        output = parse_inserter_output(raw, valid_ids, m)
        assert output.well_formed == well_formed, name
        assert output.malformed_reason == reason, name
        assert output.placements().as_dict() == placements, name
        assert list(output.warnings) == warnings, name
    _report(f"parser fixture suite: {len(CASES)} hand-labeled cases exact")


# --- 5. matching optimality ---------------------------------------------------------------


def test_hungarian_matches_exhaustive_enumeration():
    rng = np.random.default_rng(7)
    for trial in range(500):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, 5))
        weights = rng.random((rows, cols))
        row_idx, col_idx = linear_sum_assignment(weights, maximize=True)
        hungarian_total = float(weights[row_idx, col_idx].sum())
        oracle_total = exhaustive_assignment_total(weights.tolist())
        assert abs(hungarian_total - oracle_total) <= 1e-9, trial
    _report("Hungarian == exhaustive enumeration on 500 random matrices <= 4x4")


def _diagonal_corpus(n_samples: int):
    """Samples whose sentence/caption embeddings are basis vectors: the
    positive for sentence j is e_j, distractors are orthogonal to all
    sentences."""
    rng = random.Random(31)
    samples = []
    for i in range(n_samples):
        m = rng.randint(2, 4)
        n_pos = rng.randint(1, m)
        dim = m + 2
        table = {}
        sentences = []
        for j in range(1, m + 1):
            text = f"Sample {i} sentence {j} stands."
            sentences.append(text)
            table[text] = [1.0 if k == j - 1 else 0.0 for k in range(dim)]
        images = []
        placements = {}
        for j in rng.sample(range(1, m + 1), n_pos):
            caption = f"sample {i} positive caption {j}"
            image_id = f"d{i}pos{j}"
            table[caption] = [1.0 if k == j - 1 else 0.0 for k in range(dim)]
            images.append(ImageAsset(image_id, "u", caption=caption))
            placements[image_id] = j
        for d in range(n_pos):
            caption = f"sample {i} distractor caption {d}"
            table[caption] = [1.0 if k == m + (d % 2) else 0.0 for k in range(dim)]
            images.append(ImageAsset(f"d{i}neg{d}", "u", caption=caption))
        sample = DatasetSample(
            id=f"diag{i}",
            query=f"Query {i}?",
            sentences=SentenceMap(tuple(sentences)),
            images=tuple(images),
            gt_placements=PlacementMap.of(placements),
        )
        samples.append((sample, StaticEmbeddingProvider(table)))
    return samples


def test_rule_based_perfect_on_diagonal_corpus():
    corpus = _diagonal_corpus(20)
    for sample, embedder in corpus:
        placements = insert_rule_based(
            sample.sentences, list(sample.images), embedder, threshold=0.5
        )
        pred = frozenset(placements.image_ids())
        gt = frozenset(sample.gt_placements.image_ids())
        assert f1(pred, gt) == 1.0, sample.id
        assert placements.as_dict() == sample.gt_placements.as_dict(), sample.id
    _report("rule-based inserter F1 == 1.0 on 20-sample diagonal corpus")


# --- 6. pipeline determinism ------------------------------------------------------------


@pytest.fixture(scope="module")
def fixture_dataset_50(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture50")
    path = root / "dataset.jsonl"
    dump_samples(make_synthetic_dataset(50, seed=50), path)
    return path


def _fingerprint(directory: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(directory)): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


def _run_and_evaluate(dataset: Path, root: Path, name: str, workers: int) -> dict[str, bytes]:
    run_dir = root / name / "run"
    eval_dir = root / name / "eval"
    config = {
        "dataset": str(dataset),
        "strategy": "m2io",
        "k": 2,
        "seed": 11,
        "output_dir": str(run_dir),
        "workers": workers,
    }
    config_path = root / f"{name}.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    assert main(["run", "--config", str(config_path)]) == 0
    assert (
        main(
            [
                "evaluate",
                "--dataset", str(dataset),
                "--answers", str(run_dir),
                "--out", str(eval_dir),
                "--ord",
            ]
        )
        == 0
    )
    return {**_fingerprint(run_dir), **{f"eval/{k}": v for k, v in _fingerprint(eval_dir).items()}}


def test_pipeline_determinism(fixture_dataset_50, tmp_path):
    first = _run_and_evaluate(fixture_dataset_50, tmp_path, "a", workers=1)
    second = _run_and_evaluate(fixture_dataset_50, tmp_path, "b", workers=1)
    eight = _run_and_evaluate(fixture_dataset_50, tmp_path, "c", workers=8)
    assert first == second, "reruns differ"
    assert first == eight, "worker count changed outputs"
    _report("pipeline run+evaluate byte-identical across reruns and 1 vs 8 workers")


def test_identity_evaluation_prints_hundred(fixture_dataset_50, tmp_path, capsys):
    code = main(
        [
            "evaluate",
            "--dataset", str(fixture_dataset_50),
            "--identity",
            "--ord",
            "--out", str(tmp_path / "identity"),
        ]
    )
    assert code == 0
    table = (tmp_path / "identity" / "metrics.md").read_text()
    header = [c.strip() for c in table.splitlines()[2].strip("|").split("|")]
    row = [c.strip() for c in table.splitlines()[-1].strip("|").split("|")]
    by_column = dict(zip(header, row))
    for column in ("Rec", "F1", "Ord", "Pos"):
        assert by_column[column] == "100.0", (column, by_column)
    capsys.readouterr()
    _report("identity evaluation prints Rec/F1/Ord/Pos = 100.0")


# --- 7. alpha-sweep structure --------------------------------------------------------------


def test_alpha_sweep_structure(fixture_dataset_50, tmp_path):
    samples = make_synthetic_dataset(50, seed=50)
    rollouts_path = tmp_path / "rollouts.jsonl"
    rng = random.Random(5)
    with open(rollouts_path, "w", encoding="utf-8") as handle:
        for sample in samples:
            gt = sample.ground_truth()
            ids = sorted(sample.valid_image_ids())
            variants = [
                gt_as_completion(gt),
                "<think>t</think><answer>{}</answer>",
                f'<think>t</think><answer>{json.dumps({ids[0]: 1})}</answer>',
                "no tags at all",
            ]
            for completion in rng.sample(variants, 3):
                handle.write(
                    json.dumps({"sample_id": sample.id, "completion": completion}) + "\n"
                )
    alphas = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0]
    rows = sweep_alpha_rows(rollouts_path, fixture_dataset_50, alphas)
    rec_column = {row["mean_r_rec"] for row in rows}
    assert len(rec_column) == 1, "r_rec must be alpha-independent"
    pos_column = {row["mean_r_pos"] for row in rows}
    assert len(pos_column) == 1
    by_alpha = {row["alpha"]: row for row in rows}
    assert abs(by_alpha[1.0]["mean_r_answer"] - by_alpha[1.0]["mean_r_rec"]) <= 1e-12
    assert abs(by_alpha[0.0]["mean_r_answer"] - by_alpha[0.0]["mean_r_pos"]) <= 1e-12
    out_csv = tmp_path / "sweep.csv"
    assert (
        main(
            [
                "sweep-alpha",
                "--rollouts", str(rollouts_path),
                "--dataset", str(fixture_dataset_50),
                "--alphas", ",".join(str(a) for a in alphas),
                "--out", str(out_csv),
            ]
        )
        == 0
    )
    assert len(out_csv.read_text().strip().splitlines()) == len(alphas) + 1
    _report("alpha sweep: constant r_rec column; endpoints match r_rec/r_pos to 1e-12")


# --- 8. reward service conformance -----------------------------------------------------------


@pytest.fixture(scope="module")
def service_dataset():
    return index_samples(make_synthetic_dataset(40, seed=77))


@pytest.fixture(scope="module")
def live_service(service_dataset):
    with BackgroundServer(service_dataset, RewardConfig()) as base_url:
        yield base_url


def _make_items(dataset, count, seed=0):
    rng = random.Random(seed)
    samples = list(dataset.values())
    items = []
    for i in range(count):
        sample = samples[i % len(samples)]
        kind = rng.random()
        if kind < 0.4:
            completion = gt_as_completion(sample.ground_truth())
        elif kind < 0.6:
            completion = "<think>t</think><answer>{}</answer>"
        elif kind < 0.8:
            ids = sorted(sample.valid_image_ids())
            completion = f'<think>t</think><answer>{json.dumps({ids[0]: 1})}</answer>'
        else:
            completion = "broken output"
        items.append({"sample_id": sample.id, "completion": completion})
    return items


def test_service_batch_equals_local(live_service, service_dataset):
    items = _make_items(service_dataset, 256, seed=3)
    with httpx.Client(timeout=30.0) as client:
        response = client.post(f"{live_service}/v1/score", json={"items": items})
    assert response.status_code == 200
    remote = response.json()["scores"]
    assert len(remote) == 256
    local = score_batch(
        [(item["completion"], item["sample_id"]) for item in items], service_dataset
    )
    for got, entry in zip(remote, local):
        expected = entry.score
        assert got["r_format"] == expected.r_format
        for field in ("r_rec", "r_pos", "r_answer", "r_total"):
            assert got[field] == getattr(expected, field), field
    _report("service: 256-item HTTP batch equals local score_batch field-for-field")


def test_service_sustained_concurrency(live_service, service_dataset):
    requests = [
        _make_items(service_dataset, 8, seed=1000 + i) for i in range(1000)
    ]
    expected = [
        [
            entry.score.r_total
            for entry in score_batch(
                [(item["completion"], item["sample_id"]) for item in batch],
                service_dataset,
            )
        ]
        for batch in requests
    ]

    def call(batch):
        with httpx.Client(timeout=30.0) as client:
            body = client.post(f"{live_service}/v1/score", json={"items": batch}).json()
        return [score["r_total"] for score in body["scores"]]

    with ThreadPoolExecutor(max_workers=32) as pool:
        results = list(pool.map(call, requests))
    divergent = sum(1 for got, want in zip(results, expected) if got != want)
    assert divergent == 0
    _report("service: 1000 requests x 32 concurrent clients, zero score divergence")


def test_service_latency_p99(live_service, service_dataset):
    items = _make_items(service_dataset, 64, seed=9)
    durations = []
    with httpx.Client(timeout=30.0) as client:
        for _ in range(5):  # warmup
            client.post(f"{live_service}/v1/score", json={"items": items})
        for _ in range(200):
            started = time.perf_counter()
            response = client.post(f"{live_service}/v1/score", json={"items": items})
            durations.append(time.perf_counter() - started)
            assert response.status_code == 200
    p99 = sorted(durations)[int(0.99 * len(durations)) - 1]
    assert p99 < 0.050, f"p99 {p99 * 1000:.1f}ms"
    _report(f"service: p99 latency {p99 * 1000:.1f}ms < 50ms per 64-item batch")
