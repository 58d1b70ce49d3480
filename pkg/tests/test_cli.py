import json
from pathlib import Path

import pytest

from conftest import make_synthetic_dataset
from mmrag.cli import main
from mmrag.model import dump_samples, load_samples
from mmrag.reward import gt_as_completion


@pytest.fixture
def dataset_path(tmp_path):
    samples = make_synthetic_dataset(8, seed=13)
    path = tmp_path / "dataset.jsonl"
    dump_samples(samples, path)
    return path


@pytest.fixture
def config_path(tmp_path, dataset_path):
    config = {
        "dataset": str(dataset_path),
        "strategy": "m2io",
        "k": 2,
        "seed": 3,
        "output_dir": str(tmp_path / "run"),
        "use_gt_answer": True,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def _run_dir_fingerprint(run_dir: Path) -> dict[str, str]:
    out = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(run_dir))] = path.read_bytes().hex()
    return out


class TestRun:
    def test_run_writes_manifest_and_answers(self, config_path, tmp_path, capsys):
        assert main(["run", "--config", str(config_path)]) == 0
        run_dir = tmp_path / "run"
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["samples"] == 8
        assert manifest["failures"] == []
        answers = (run_dir / "answers.jsonl").read_text().strip().splitlines()
        assert len(answers) == 8
        assert len(list((run_dir / "traces").glob("*.json"))) == 8

    def test_rerun_is_byte_identical(self, config_path, tmp_path):
        assert main(["run", "--config", str(config_path)]) == 0
        first = _run_dir_fingerprint(tmp_path / "run")
        assert main(["run", "--config", str(config_path)]) == 0
        second = _run_dir_fingerprint(tmp_path / "run")
        assert first == second

    def test_workers_do_not_change_outputs(self, config_path, tmp_path):
        assert main(["run", "--config", str(config_path), "--workers", "1"]) == 0
        one = _run_dir_fingerprint(tmp_path / "run")
        assert main(["run", "--config", str(config_path), "--workers", "8"]) == 0
        eight = _run_dir_fingerprint(tmp_path / "run")
        assert one == eight

    def test_rule_based_makes_no_inserter_calls(self, tmp_path, dataset_path):
        config = {
            "dataset": str(dataset_path),
            "strategy": "rule_based",
            "output_dir": str(tmp_path / "rb"),
            "use_gt_answer": True,
        }
        path = tmp_path / "rb.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        assert main(["run", "--config", str(path)]) == 0
        for trace_path in (tmp_path / "rb" / "traces").glob("*.json"):
            trace = json.loads(trace_path.read_text())
            assert trace["strategy"] == "rule_based"
            assert trace["raw_output"] == ""

    def test_cassette_replay_reproduces_recorded_run(self, tmp_path, dataset_path):
        def config_for(mode, out_name):
            providers = {
                "generator": {
                    "type": "cassette",
                    "path": str(tmp_path / "gen.json"),
                    "mode": mode,
                    "inner": {"type": "mock"} if mode == "record" else None,
                },
                "inserter": {
                    "type": "cassette",
                    "path": str(tmp_path / "ins.json"),
                    "mode": mode,
                    "inner": {"type": "mock"} if mode == "record" else None,
                },
            }
            config = {
                "dataset": str(dataset_path),
                "strategy": "m2io",
                "output_dir": str(tmp_path / out_name),
                "providers": providers,
            }
            path = tmp_path / f"{out_name}.json"
            path.write_text(json.dumps(config), encoding="utf-8")
            return path

        assert main(["run", "--config", str(config_for("record", "recorded"))]) == 0
        assert main(["run", "--config", str(config_for("replay", "replayed"))]) == 0
        for name in ("answers.jsonl",):
            recorded = (tmp_path / "recorded" / name).read_bytes()
            replayed = (tmp_path / "replayed" / name).read_bytes()
            assert recorded == replayed
        recorded_traces = sorted((tmp_path / "recorded" / "traces").glob("*.json"))
        for trace_path in recorded_traces:
            twin = tmp_path / "replayed" / "traces" / trace_path.name
            assert trace_path.read_bytes() == twin.read_bytes()

    def test_bad_config_exits_one(self, tmp_path, dataset_path):
        config = {"dataset": str(dataset_path), "strategy": "quantum"}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        assert main(["run", "--config", str(path)]) == 1

    def test_usage_error_exits_one(self):
        assert main(["run"]) == 1


class TestEvaluate:
    def test_identity_scores_hundred(self, dataset_path, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(
            [
                "evaluate",
                "--dataset", str(dataset_path),
                "--identity",
                "--ord",
                "--out", str(out),
            ]
        )
        assert code == 0
        captured = capsys.readouterr().out
        assert "| 100.0 |" in captured
        table = (out / "metrics.md").read_text()
        for column in ("Rec", "F1", "Ord", "Pos"):
            assert column in table
        row = table.strip().splitlines()[-1]
        cells = [c.strip() for c in row.strip("|").split("|")]
        # every numeric cell of the identity row is 100.0
        assert all(c == "100.0" for c in cells[1:])

    def test_missing_answers_listed(self, dataset_path, tmp_path, capsys):
        answers = tmp_path / "partial.jsonl"
        samples = load_samples(dataset_path)
        with open(answers, "w", encoding="utf-8") as handle:
            handle.write(
                json.dumps(
                    {
                        "sample_id": samples[0].id,
                        "text": samples[0].sentences.joined(),
                        "placements": samples[0].gt_placements.as_dict(),
                    }
                )
                + "\n"
            )
        code = main(
            ["evaluate", "--dataset", str(dataset_path), "--answers", str(answers)]
        )
        assert code == 2
        assert "missing answers" in capsys.readouterr().err

    def test_empty_answer_set_lists_every_id(self, dataset_path, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        code = main(
            ["evaluate", "--dataset", str(dataset_path), "--answers", str(empty)]
        )
        assert code == 1
        err = capsys.readouterr().err
        for sample in load_samples(dataset_path):
            assert sample.id in err

    def test_run_directory_accepted(self, config_path, tmp_path):
        assert main(["run", "--config", str(config_path)]) == 0
        code = main(
            [
                "evaluate",
                "--dataset", str(tmp_path / "dataset.jsonl"),
                "--answers", str(tmp_path / "run"),
            ]
        )
        assert code == 0


class TestSweepAlpha:
    def test_alpha_columns_structure(self, dataset_path, tmp_path):
        samples = load_samples(dataset_path)
        rollouts = tmp_path / "rollouts.jsonl"
        with open(rollouts, "w", encoding="utf-8") as handle:
            for sample in samples:
                handle.write(
                    json.dumps(
                        {
                            "sample_id": sample.id,
                            "completion": gt_as_completion(sample.ground_truth()),
                        }
                    )
                    + "\n"
                )
            handle.write(
                json.dumps({"sample_id": samples[0].id, "completion": "broken"}) + "\n"
            )
        out = tmp_path / "sweep.csv"
        code = main(
            [
                "sweep-alpha",
                "--rollouts", str(rollouts),
                "--dataset", str(dataset_path),
                "--alphas", "0.0,0.5,1.0",
                "--out", str(out),
            ]
        )
        assert code == 0
        import csv

        with open(out, encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 3
        recs = {row["mean_r_rec"] for row in rows}
        assert len(recs) == 1  # alpha-independent column
        by_alpha = {float(row["alpha"]): row for row in rows}
        assert by_alpha[1.0]["mean_r_answer"] == by_alpha[1.0]["mean_r_rec"]
        assert by_alpha[0.0]["mean_r_answer"] == by_alpha[0.0]["mean_r_pos"]


class TestScoreCommand:
    def test_offline_scoring(self, dataset_path, tmp_path):
        samples = load_samples(dataset_path)
        rollouts = tmp_path / "in.jsonl"
        with open(rollouts, "w", encoding="utf-8") as handle:
            handle.write(
                json.dumps(
                    {
                        "sample_id": samples[0].id,
                        "completion": gt_as_completion(samples[0].ground_truth()),
                    }
                )
                + "\n"
            )
        out = tmp_path / "out.jsonl"
        code = main(
            [
                "score",
                "--dataset", str(dataset_path),
                "--rollouts", str(rollouts),
                "--out", str(out),
            ]
        )
        assert code == 0
        scored = json.loads(out.read_text().strip())
        assert scored["r_total"] == 2.0

    def test_unknown_sample_partial_failure(self, dataset_path, tmp_path):
        rollouts = tmp_path / "in.jsonl"
        rollouts.write_text(
            json.dumps({"sample_id": "ghost", "completion": "x"}) + "\n", encoding="utf-8"
        )
        out = tmp_path / "out.jsonl"
        code = main(
            [
                "score",
                "--dataset", str(dataset_path),
                "--rollouts", str(rollouts),
                "--out", str(out),
            ]
        )
        assert code == 2


class TestSampleCommand:
    def _write_inputs(self, tmp_path):
        raw = tmp_path / "raw.jsonl"
        raw.write_text(
            json.dumps(
                {
                    "id": "q1",
                    "query": "What about copper?",
                    "sentences": {"1": "Copper shines.", "2": "It conducts."},
                    "gt_placements": {"pos1": 1},
                    "source": "wit",
                }
            )
            + "\n",
            encoding="utf-8",
        )
        corpus = tmp_path / "images.jsonl"
        entries = [{"id": "pos1", "uri": "u", "caption": "copper coil"}] + [
            {"id": f"neg{i}", "uri": "u", "caption": f"filler {i}"} for i in range(4)
        ]
        corpus.write_text(
            "\n".join(json.dumps(e) for e in entries) + "\n", encoding="utf-8"
        )
        return raw, corpus

    def test_seeded_determinism(self, tmp_path):
        raw, corpus = self._write_inputs(tmp_path)
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            code = main(
                [
                    "sample",
                    "--input", str(raw),
                    "--corpus", str(corpus),
                    "--out", str(out),
                    "--seed", "7",
                ]
            )
            assert code == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        built = load_samples(out_a)
        assert len(built[0].images) == 2


class TestSplitCommand:
    def test_split_files(self, dataset_path, tmp_path):
        code = main(
            [
                "split",
                "--dataset", str(dataset_path),
                "--protocol", "full_source",
                "--seed", "5",
                "--train-out", str(tmp_path / "train.jsonl"),
                "--eval-out", str(tmp_path / "eval.jsonl"),
            ]
        )
        assert code == 0
        train = load_samples(tmp_path / "train.jsonl")
        evaluation = load_samples(tmp_path / "eval.jsonl")
        assert len(train) + len(evaluation) == 8


class TestLintCommand:
    def test_clean_exit_zero(self, dataset_path):
        assert main(["lint", str(dataset_path)]) == 0

    def test_duplicate_target_exits_nonzero_and_names_rule(
        self, dataset_path, tmp_path, capsys
    ):
        samples = load_samples(dataset_path)
        from mmrag.model import sample_to_json

        obj = sample_to_json(samples[0])
        ids = [img["id"] for img in obj["images"]]
        obj["gt_placements"] = {ids[0]: 1, ids[1]: 1}
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps(obj) + "\n", encoding="utf-8")
        assert main(["lint", str(bad)]) == 1
        assert "placement_target_unique" in capsys.readouterr().err


class TestReportCommand:
    def test_combined_layout(self, dataset_path, tmp_path, capsys):
        eval_a = tmp_path / "eval_a"
        eval_b = tmp_path / "eval_b"
        for out, label in ((eval_a, "web"), (eval_b, "arxiv")):
            main(
                [
                    "evaluate",
                    "--dataset", str(dataset_path),
                    "--identity",
                    "--out", str(out),
                    "--strategy-label", "identity",
                    "--dataset-label", label,
                ]
            )
        capsys.readouterr()
        code = main(
            [
                "report",
                str(eval_a / "aggregate.csv"),
                str(eval_b / "aggregate.csv"),
            ]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "web Rec" in table and "arxiv Rec" in table
        assert "| identity |" in table
