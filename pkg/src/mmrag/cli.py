"""Operator surface.

Commands: run, evaluate, sweep-alpha, serve, score, sample, split, lint,
report. Exit codes: 0 success, 1 usage/config errors, 2 completed with
per-sample failures recorded.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from .config import RunConfig, build_chat_provider, build_embedder
from .dataset import (
    FULL_SOURCE,
    SampleBuilderConfig,
    WEB_FOCUSED,
    build_sample,
    lint_dataset,
    split as split_samples,
)
from .errors import ConfigError, MmragError
from .model import (
    GroundTruth,
    ImageAsset,
    PlacementMap,
    Query,
    SentenceMap,
    dump_samples,
    index_samples,
    load_samples,
)
from .pipeline import (
    answers_from_ground_truth,
    evaluate_run,
    load_answers,
    run_pipeline,
)
from .reporting import (
    aggregate_markdown,
    combined_markdown,
    write_aggregate_csv,
    write_per_sample_csv,
)
from .reward import RewardConfig, score_batch
from .service import serve_rewards


@click.group()
def cli() -> None:
    """Multimodal RAG pipeline, metrics, and reward service."""


@cli.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", default=None, help="Override the config's dataset path.")
@click.option("--output-dir", default=None)
@click.option("--strategy", default=None)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--k", type=int, default=None)
def cmd_run(config_path, dataset, output_dir, strategy, workers, seed, k) -> int:
    """Execute the four pipeline stages over a dataset."""
    overrides = {
        "dataset": dataset,
        "output_dir": output_dir,
        "strategy": strategy,
        "workers": workers,
        "seed": seed,
        "k": k,
    }
    cfg = RunConfig.load(config_path, overrides)
    summary = run_pipeline(cfg)
    click.echo(f"run complete: {len(summary.results)} samples -> {summary.output_dir}")
    if summary.failures:
        click.echo(f"failures recorded for: {', '.join(summary.failures)}", err=True)
        return 2
    return 0


@cli.command("evaluate")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option(
    "--answers",
    "answers_path",
    default=None,
    type=click.Path(exists=True),
    help="answers.jsonl or a run directory containing one.",
)
@click.option("--identity", is_flag=True, help="Evaluate ground truth against itself.")
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--ord", "force_order", is_flag=True, help="Compute the order score for every sample.")
@click.option("--order-sources", default="recipe,manual", show_default=True)
@click.option("--strategy-label", default="answers", show_default=True)
@click.option("--dataset-label", default=None)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="Optional run config supplying judge/embedder providers.")
@click.option("--rel-norm", default="offset", type=click.Choice(["offset", "ratio"]))
def cmd_evaluate(
    dataset,
    answers_path,
    identity,
    out_dir,
    force_order,
    order_sources,
    strategy_label,
    dataset_label,
    config_path,
    rel_norm,
) -> int:
    """Compute the metric table for a set of answers."""
    samples = load_samples(dataset)
    if identity:
        answers = answers_from_ground_truth(samples)
    elif answers_path:
        path = Path(answers_path)
        if path.is_dir():
            path = path / "answers.jsonl"
        answers = load_answers(path)
    else:
        raise click.UsageError("provide --answers or --identity")

    embedder = judge = None
    if config_path:
        cfg = RunConfig.load(config_path, {"dataset": dataset})
        embedder = build_embedder(cfg.providers["embedder"])
        judge_spec = cfg.providers.get("judge")
        if judge_spec:
            judge = build_chat_provider(judge_spec)

    result = evaluate_run(
        samples,
        answers,
        order_sources=[s for s in order_sources.split(",") if s],
        force_order=force_order,
        embedder=embedder,
        judge=judge,
        rel_norm=rel_norm,
    )
    if result.missing:
        click.echo("missing answers for: " + ", ".join(result.missing), err=True)
        if not result.reports:
            return 1

    label = dataset_label or Path(dataset).stem
    markdown = aggregate_markdown(result.aggregate, strategy_label, label)
    click.echo(markdown)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [
            {"sample_id": sample_id, **report.to_json()}
            for sample_id, report in result.reports.items()
        ]
        write_per_sample_csv(out / "metrics.csv", rows)
        with open(out / "metrics.jsonl", "w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        write_aggregate_csv(out / "aggregate.csv", result.aggregate, strategy_label, label)
        (out / "metrics.md").write_text(markdown, encoding="utf-8")
    return 2 if result.missing else 0


@cli.command("sweep-alpha")
@click.option("--rollouts", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--alphas", default="0.0,0.2,0.4,0.5,0.6,0.8,1.0", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path())
def cmd_sweep_alpha(rollouts, dataset, alphas, out_csv) -> int:
    """Score a rollout file at several alpha values; one CSV row per alpha."""
    alpha_values = [float(a) for a in alphas.split(",") if a]
    rows = sweep_alpha_rows(rollouts, dataset, alpha_values)
    with open(out_csv, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["alpha", "n", "mean_r_format", "mean_r_rec", "mean_r_pos",
             "mean_r_answer", "mean_r_total"]
        )
        for row in rows:
            writer.writerow(
                [repr(row["alpha"]), row["n"]]
                + [repr(row[key]) for key in
                   ("mean_r_format", "mean_r_rec", "mean_r_pos", "mean_r_answer", "mean_r_total")]
            )
    click.echo(f"wrote {len(rows)} rows to {out_csv}")
    return 0


def load_rollouts(path: str | Path) -> list[tuple[str, str]]:
    """Rollout JSONL: one {"sample_id", "completion"} per line."""
    rollouts = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            rollouts.append((str(obj["completion"]), str(obj["sample_id"])))
    return rollouts


def sweep_alpha_rows(
    rollouts_path: str | Path, dataset_path: str | Path, alphas: list[float]
) -> list[dict]:
    rollouts = load_rollouts(rollouts_path)
    index = index_samples(load_samples(dataset_path))
    rows = []
    for alpha in alphas:
        entries = score_batch(rollouts, index, RewardConfig(alpha=alpha))
        scores = [entry.score for entry in entries if entry.score is not None]
        n = len(scores)
        if n == 0:
            raise MmragError("no scorable rollouts")
        rows.append(
            {
                "alpha": alpha,
                "n": n,
                "mean_r_format": sum(s.r_format for s in scores) / n,
                "mean_r_rec": sum(s.r_rec for s in scores) / n,
                "mean_r_pos": sum(s.r_pos for s in scores) / n,
                "mean_r_answer": sum(s.r_answer for s in scores) / n,
                "mean_r_total": sum(s.r_total for s in scores) / n,
            }
        )
    return rows


@cli.command("serve")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--bind", default="127.0.0.1:8080", show_default=True)
@click.option("--alpha", type=float, default=0.8, show_default=True)
def cmd_serve(dataset, bind, alpha) -> int:
    """Run the reward service until interrupted."""
    index = index_samples(load_samples(dataset))
    click.echo(f"serving rewards for {len(index)} samples on {bind}")
    serve_rewards(bind, index, RewardConfig(alpha=alpha))
    return 0


@cli.command("score")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--rollouts", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--alpha", type=float, default=0.8, show_default=True)
def cmd_score(dataset, rollouts, out_path, alpha) -> int:
    """Offline batch scoring: rollout JSONL in, one score object per line out."""
    index = index_samples(load_samples(dataset))
    entries = score_batch(load_rollouts(rollouts), index, RewardConfig(alpha=alpha))
    with open(out_path, "w", encoding="utf-8") as handle:
        for entry in entries:
            handle.write(json.dumps(entry.to_json(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
    bad = sum(1 for entry in entries if entry.error is not None)
    click.echo(f"scored {len(entries) - bad}/{len(entries)} rollouts -> {out_path}")
    return 2 if bad else 0


@cli.command("sample")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSONL of {id, query, sentences, gt_placements[, source]}.")
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="JSONL image corpus: one asset object per line.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, required=True)
@click.option("--hard-fraction", type=float, default=0.5, show_default=True)
@click.option("--negative-ratio", type=float, default=1.0, show_default=True)
def cmd_sample(input_path, corpus, out_path, seed, hard_fraction, negative_ratio) -> int:
    """Build canonical samples with positives plus seeded distractors."""
    assets = []
    with open(corpus, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                obj = json.loads(line)
                assets.append(
                    ImageAsset(
                        id=str(obj["id"]),
                        uri=str(obj.get("uri", "")),
                        caption=obj.get("caption"),
                        context_above=obj.get("context_above"),
                        context_below=obj.get("context_below"),
                    )
                )
    cfg = SampleBuilderConfig(
        negative_ratio=negative_ratio, hard_fraction=hard_fraction, rng_seed=seed
    )
    from .retrieval import HashEmbeddingProvider

    embedder = HashEmbeddingProvider()
    built = []
    with open(input_path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            query = Query(str(obj["id"]), str(obj["query"]))
            gt = GroundTruth(
                SentenceMap.from_dict(obj["sentences"]),
                PlacementMap.of({str(k): int(v) for k, v in obj["gt_placements"].items()}),
            )
            built.append(
                build_sample(
                    query, gt, assets, embedder, cfg,
                    difficulty=obj.get("difficulty"), source=obj.get("source"),
                )
            )
    dump_samples(built, out_path)
    click.echo(f"built {len(built)} samples -> {out_path}")
    return 0


@cli.command("split")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--protocol", required=True,
              type=click.Choice([FULL_SOURCE, WEB_FOCUSED]))
@click.option("--seed", type=int, required=True)
@click.option("--train-out", required=True, type=click.Path())
@click.option("--eval-out", required=True, type=click.Path())
def cmd_split(dataset, protocol, seed, train_out, eval_out) -> int:
    """Split a dataset under the full-source or web-focused protocol."""
    samples = load_samples(dataset)
    train, evaluation = split_samples(samples, protocol, seed)
    dump_samples(train, train_out)
    dump_samples(evaluation, eval_out)
    click.echo(f"train {len(train)} -> {train_out}; eval {len(evaluation)} -> {eval_out}")
    return 0


@cli.command("lint")
@click.argument("dataset", type=click.Path(exists=True))
def cmd_lint(dataset) -> int:
    """Validate every canonical-schema invariant; nonzero exit on violations."""
    issues = lint_dataset(dataset)
    errors = [issue for issue in issues if issue.severity == "error"]
    for issue in issues:
        click.echo(f"{issue.severity}: {issue}", err=issue.severity == "error")
    if errors:
        click.echo(f"{len(errors)} error(s), {len(issues) - len(errors)} warning(s)", err=True)
        return 1
    click.echo(f"ok ({len(issues)} warning(s))")
    return 0


@cli.command("report")
@click.argument("aggregates", nargs=-1, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def cmd_report(aggregates, out_path) -> int:
    """Combine aggregate CSVs into one table: strategies as rows, datasets as
    column groups."""
    if not aggregates:
        raise click.UsageError("provide at least one aggregate.csv")
    entries = []
    for path in aggregates:
        with open(path, encoding="utf-8", newline="") as handle:
            entries.extend(csv.DictReader(handle))
    markdown = combined_markdown(entries)
    click.echo(markdown)
    if out_path:
        Path(out_path).write_text(markdown, encoding="utf-8")
    return 0


def main(argv=None) -> int:
    try:
        result = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except MmragError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return int(result) if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
