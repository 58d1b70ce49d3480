import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import StaticEmbeddingProvider
from mmrag.errors import (
    EmptyGroundTruth,
    JudgeParseError,
    LengthMismatch,
    MissingComponent,
)
from mmrag.insertion import merge
from mmrag.metrics import (
    DEFAULT_EDIT_COSTS,
    EditCostConfig,
    MetricReport,
    aggregate_reports,
    embedding_similarity,
    f1,
    f_score,
    judge_position,
    judge_relevance,
    order_score,
    overall,
    position_score,
    precision,
    recall,
    rouge_l,
    weighted_edit_distance,
)
from mmrag.model import EMPTY, ImageAsset, PlacementMap, PlacementSequence, Query, SentenceMap
from mmrag.providers import ScriptedChatProvider
from oracles import (
    edit_distance_by_alignment,
    lcs_by_enumeration,
    position_score_by_cases,
)


class TestSetMetrics:
    def test_recall_formula(self):
        assert recall({"A"}, {"A", "B"}) == 0.5

    def test_recall_both_empty(self):
        assert recall(set(), set()) == 1.0

    def test_recall_with_false_positive(self):
        assert recall({"A", "C"}, {"A", "B"}) == 0.5

    def test_precision_and_f1(self):
        assert precision({"A", "B", "C"}, {"A", "B"}) == pytest.approx(2 / 3)
        assert f1({"A", "B", "C"}, {"A", "B"}) == pytest.approx(0.8)

    def test_f_score_worked_example(self):
        assert f_score(1.0, 0.5) == pytest.approx(2 / 3, abs=1e-12)

    def test_identity_scores_one(self):
        assert f1({"A", "B"}, {"A", "B"}) == 1.0

    def test_empty_prediction_against_empty_reference(self):
        assert precision(set(), set()) == 1.0
        assert f1(set(), set()) == 1.0

    @given(
        st.frozensets(st.sampled_from("ABCDE"), max_size=5),
        st.frozensets(st.sampled_from("ABCDE"), max_size=5),
    )
    def test_f1_bounds(self, pred, gt):
        p, r, f = precision(pred, gt), recall(pred, gt), f1(pred, gt)
        assert 0.0 <= f <= 1.0
        assert f <= min(2 * p, 2 * r) + 1e-12
        if pred and gt:
            assert (f == 0.0) == (not pred & gt)


class TestEditCosts:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            EditCostConfig(p1=0.5, p2=0.8, p3=0.2)
        with pytest.raises(ValueError):
            EditCostConfig(p1=1.0, p2=0.8, p3=0.5, p=0.9)

    def test_defaults_valid(self):
        assert DEFAULT_EDIT_COSTS.p1 == 1.0


class TestOrderScore:
    def test_identity(self):
        assert order_score(["A", "B"], ["A", "B"]) == 1.0

    def test_swap_worked_example(self):
        assert order_score(["A", "B"], ["B", "A"]) == pytest.approx(0.5, abs=1e-9)

    def test_missing_image_worked_example(self):
        assert order_score(["A", "B", "C"], ["A", "C"]) == pytest.approx(4 / 9, abs=1e-9)

    def test_empty_reference_raises(self):
        with pytest.raises(EmptyGroundTruth):
            order_score([], ["A"])

    def test_empty_prediction_scores_zero(self):
        assert order_score(["A", "B"], []) == 0.0

    def test_dp_matches_alignment_oracle_exhaustively(self):
        alphabet = "ABC"
        sequences = [
            list(seq)
            for length in range(0, 4)
            for seq in itertools.product(alphabet, repeat=length)
        ]
        costs = DEFAULT_EDIT_COSTS
        for gt_seq in sequences:
            for pred_seq in sequences:
                expected = edit_distance_by_alignment(
                    gt_seq, pred_seq, costs.p1, costs.p2, costs.p3
                )
                actual = weighted_edit_distance(gt_seq, pred_seq, costs)
                assert actual == pytest.approx(expected, abs=1e-12), (gt_seq, pred_seq)

    def test_scale_consistency(self):
        gt_seq, pred_seq = ["A", "B", "C"], ["B", "A"]
        base = order_score(gt_seq, pred_seq, EditCostConfig(1.0, 0.8, 0.5, 1.2))
        for factor in (0.5, 2.0, 7.0):
            scaled = order_score(
                gt_seq,
                pred_seq,
                EditCostConfig(1.0 * factor, 0.8 * factor, 0.5 * factor, 1.2 * factor),
            )
            assert scaled == pytest.approx(base, abs=1e-9)

    @given(
        st.lists(st.sampled_from("ABCD"), min_size=1, max_size=5),
        st.lists(st.sampled_from("ABCD"), max_size=5),
    )
    def test_range(self, gt_seq, pred_seq):
        assert 0.0 <= order_score(gt_seq, pred_seq) <= 1.0


class TestPositionScore:
    def test_identity(self):
        seq = PlacementSequence(("A", EMPTY, "B"))
        assert position_score(seq, seq) == 1.0

    def test_empty_prediction_nonempty_reference(self):
        gt = PlacementSequence(("A", EMPTY, "B"))
        pred = PlacementSequence((EMPTY, EMPTY, EMPTY))
        assert position_score(gt, pred) == 0.0

    def test_worked_example(self):
        gt = PlacementSequence(("A", EMPTY, "B"))
        pred = PlacementSequence(("A", "B", EMPTY))
        assert position_score(gt, pred) == 0.5

    def test_both_empty(self):
        empty = PlacementSequence((EMPTY, EMPTY))
        assert position_score(empty, empty) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            position_score(PlacementSequence(("A",)), PlacementSequence(("A", EMPTY)))

    def test_matches_case_oracle_for_all_three_slot_predictions(self):
        gt_slots = ("A", EMPTY, "B")
        gt = PlacementSequence(gt_slots)
        options = ["A", "B", "C", EMPTY]
        for slots in itertools.product(options, repeat=3):
            pred = PlacementSequence(slots)
            assert position_score(gt, pred) == pytest.approx(
                position_score_by_cases(gt_slots, slots)
            ), slots

    def test_monotone_in_slot_corrections(self):
        rng = random.Random(5)
        options = ["A", "B", "C", None]
        for _ in range(200):
            m = rng.randint(1, 5)
            gt_slots = tuple(rng.choice(options) for _ in range(m))
            pred_slots = list(rng.choice(options) for _ in range(m))
            gt = PlacementSequence(gt_slots)
            before = position_score(gt, PlacementSequence(tuple(pred_slots)))
            wrong = [j for j in range(m) if pred_slots[j] != gt_slots[j]]
            if not wrong:
                continue
            j = rng.choice(wrong)
            fixed = list(pred_slots)
            fixed[j] = gt_slots[j]
            after = position_score(gt, PlacementSequence(tuple(fixed)))
            assert after >= before - 1e-12


class TestRougeL:
    def test_identical(self):
        assert rouge_l("The cat sat.", "The cat sat.") == 1.0

    def test_disjoint(self):
        assert rouge_l("alpha beta", "gamma delta") == 0.0

    def test_worked_example(self):
        assert rouge_l("the cat sat", "the cat ran fast") == pytest.approx(4 / 7, abs=1e-12)

    def test_tokenization_case_and_punctuation(self):
        assert rouge_l("The CAT, sat!", "the cat sat") == 1.0

    def test_symmetric_for_equal_lengths(self):
        assert rouge_l("a b c", "a c d") == rouge_l("a c d", "a b c")

    @given(
        st.lists(st.sampled_from(["cat", "dog", "sun", "sky"]), min_size=1, max_size=5),
        st.lists(st.sampled_from(["cat", "dog", "sun", "sky"]), min_size=1, max_size=5),
    )
    @settings(max_examples=100)
    def test_lcs_matches_enumeration_oracle(self, cand_tokens, ref_tokens):
        from mmrag.metrics import _lcs_length

        assert _lcs_length(cand_tokens, ref_tokens) == lcs_by_enumeration(
            cand_tokens, ref_tokens
        )


class TestEmbeddingSimilarity:
    def test_identity_is_one(self):
        embedder = StaticEmbeddingProvider({"same": [1, 2, 3]})
        assert embedding_similarity("same", "same", embedder) == pytest.approx(1.0)

    def test_clamped_to_non_negative(self):
        embedder = StaticEmbeddingProvider({"a": [1, 0], "b": [-1, 0]})
        assert embedding_similarity("a", "b", embedder) == 0.0


def _judged_answer():
    sentences = SentenceMap(("A pillar stands.", "A gate opens."))
    assets = {
        "image1": ImageAsset("image1", "u", caption="pillar", context_above="ctx"),
        "image2": ImageAsset("image2", "u", caption="gate"),
    }
    answer = merge(
        sentences.joined(), sentences, PlacementMap.of({"image1": 1, "image2": 2}), assets
    )
    return answer, Query("q1", "What stands?"), assets


class TestJudgeRelevance:
    def test_top_of_scale(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(["Good.\n<relevance_score>5</relevance_score>"])
        assert judge_relevance(answer, query, assets, judge) == 1.0

    def test_mid_scale_offset_normalization(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(["Ok.\n<relevance_score>3</relevance_score>"])
        assert judge_relevance(answer, query, assets, judge) == 0.5

    def test_ratio_normalization(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(["Ok.\n<relevance_score>3</relevance_score>"])
        assert judge_relevance(answer, query, assets, judge, norm="ratio") == pytest.approx(0.6)

    def test_parse_error_after_three_attempts(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(["no tag", "still none", "nope"])
        with pytest.raises(JudgeParseError):
            judge_relevance(answer, query, assets, judge)
        assert len(judge.requests) == 3

    def test_reask_recovers(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(["bad", "<relevance_score>4</relevance_score>"])
        assert judge_relevance(answer, query, assets, judge) == 0.75

    def test_no_images_is_undefined(self):
        sentences = SentenceMap(("A.",))
        answer = merge("A.", sentences, PlacementMap(), {})
        with pytest.raises(ValueError):
            judge_relevance(answer, Query("q", "q?"), {}, ScriptedChatProvider([]))


class TestJudgePosition:
    def test_all_ones(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(
            ["r1\n<img_1_score>1</img_1_score>\nr2\n<img_2_score>1</img_2_score>"]
        )
        assert judge_position(answer, query, assets, judge) == 1.0

    def test_mean_of_zero_and_one(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(
            ["<img_1_score>1</img_1_score><img_2_score>0</img_2_score>"]
        )
        assert judge_position(answer, query, assets, judge) == 0.5

    def test_missing_tag_is_parse_error(self):
        answer, query, assets = _judged_answer()
        judge = ScriptedChatProvider(["<img_1_score>1</img_1_score>"] * 3)
        with pytest.raises(JudgeParseError):
            judge_position(answer, query, assets, judge)

    def test_duplicate_image_first_occurrence_only(self):
        # blocks: img A after s1 and again after s3; judge scores slots 1 and 2,
        # only the first occurrence of A counts.
        from mmrag.model import ImageBlock, MultimodalAnswer, TextBlock

        answer = MultimodalAnswer(
            (
                TextBlock("S1."),
                ImageBlock("A"),
                TextBlock("S2."),
                ImageBlock("B"),
                TextBlock("S3."),
                ImageBlock("A"),
            )
        )
        assets = {
            "A": ImageAsset("A", "u", caption="a"),
            "B": ImageAsset("B", "u", caption="b"),
        }
        judge = ScriptedChatProvider(
            [
                "<img_1_score>1</img_1_score>"
                "<img_2_score>0</img_2_score>"
                "<img_3_score>0</img_3_score>"
            ]
        )
        score = judge_position(answer, Query("q", "q?"), assets, judge)
        assert score == 0.5  # mean over first occurrences of A (1) and B (0)


class TestOverall:
    def test_all_ones(self):
        assert overall(1.0, 1.0, 1.0, 1.0) == 1.0

    def test_four_way_mean(self):
        assert overall(0.8, 1.0, 0.9, 0.7) == pytest.approx(0.85)

    def test_five_way_mean_with_order(self):
        assert overall(0.8, 1.0, 0.9, 0.7, 0.5) == pytest.approx(0.78)

    def test_missing_component(self):
        with pytest.raises(MissingComponent) as excinfo:
            overall(0.8, None, 0.9, 0.7)
        assert "rel" in str(excinfo.value)


class TestAggregate:
    def test_field_wise_mean_skips_missing(self):
        reports = [
            MetricReport(rec=1.0, f1=0.5, ord=None),
            MetricReport(rec=0.0, f1=1.0, ord=0.4),
        ]
        aggregate = aggregate_reports(reports)
        assert aggregate["rec"] == 0.5
        assert aggregate["f1"] == 0.75
        assert aggregate["ord"] == 0.4
        assert aggregate["rel"] is None
