"""Report formatting: the display convention is value x100, one decimal."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

from .metrics import METRIC_FIELDS

DISPLAY_COLUMNS = ("rec", "prec", "f1", "ord", "pos", "rel", "rouge_l", "bert_sim", "ovr")
COLUMN_TITLES = {
    "rec": "Rec",
    "prec": "Prec",
    "f1": "F1",
    "ord": "Ord",
    "pos": "Pos",
    "rel": "Rel",
    "rouge_l": "ROUGE-L",
    "bert_sim": "BertSim",
    "ovr": "Ovr",
}


def percent(value: float | None) -> str:
    return "-" if value is None else f"{value * 100:.1f}"


def aggregate_markdown(
    aggregate: Mapping[str, float | None], strategy: str, dataset: str
) -> str:
    columns = [c for c in DISPLAY_COLUMNS if aggregate.get(c) is not None]
    header = "| Strategy | " + " | ".join(COLUMN_TITLES[c] for c in columns) + " |"
    rule = "|" + "---|" * (len(columns) + 1)
    row = f"| {strategy} | " + " | ".join(percent(aggregate[c]) for c in columns) + " |"
    return "\n".join([f"### {dataset}", "", header, rule, row, ""])


def write_aggregate_csv(
    path: str | Path,
    aggregate: Mapping[str, float | None],
    strategy: str,
    dataset: str,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["dataset", "strategy", "metric", "value"])
        for name in DISPLAY_COLUMNS:
            value = aggregate.get(name)
            if value is not None:
                writer.writerow([dataset, strategy, name, percent(value)])


def write_per_sample_csv(
    path: str | Path, rows: Sequence[Mapping[str, object]]
) -> None:
    """Per-sample metric values at full float precision (repr round-trips)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample_id", *METRIC_FIELDS])
        for row in rows:
            writer.writerow(
                [row["sample_id"]]
                + [
                    "" if row.get(name) is None else repr(row[name])
                    for name in METRIC_FIELDS
                ]
            )


def combined_markdown(entries: Sequence[Mapping[str, str]]) -> str:
    """Pivot aggregate rows (dataset, strategy, metric, value) into the
    datasets-as-column-groups, strategies-as-rows layout."""
    datasets: list[str] = []
    strategies: list[str] = []
    metrics_by_dataset: dict[str, list[str]] = {}
    values: dict[tuple[str, str, str], str] = {}
    for entry in entries:
        dataset, strategy, metric, value = (
            entry["dataset"],
            entry["strategy"],
            entry["metric"],
            entry["value"],
        )
        if dataset not in datasets:
            datasets.append(dataset)
        if strategy not in strategies:
            strategies.append(strategy)
        group = metrics_by_dataset.setdefault(dataset, [])
        if metric not in group:
            group.append(metric)
        values[(dataset, strategy, metric)] = value

    header_cells = ["Strategy"]
    for dataset in datasets:
        header_cells += [
            f"{dataset} {COLUMN_TITLES.get(metric, metric)}"
            for metric in metrics_by_dataset[dataset]
        ]
    lines = [
        "| " + " | ".join(header_cells) + " |",
        "|" + "---|" * len(header_cells),
    ]
    for strategy in strategies:
        cells = [strategy]
        for dataset in datasets:
            for metric in metrics_by_dataset[dataset]:
                cells.append(values.get((dataset, strategy, metric), "-"))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
