"""Pipeline orchestration: the four-stage run, and evaluation against
ground truth.

Runs are reproducible artifacts: the manifest records the semantic config
hash, the seed, and a digest of every file written, and output ordering
follows dataset order regardless of worker count. Per-sample provider
failures are recorded and the run continues.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .config import RunConfig, build_chat_provider, build_embedder
from .errors import LengthMismatch, MmragError
from .generation import generate_answer, split_sentences
from .insertion import (
    InsertionTrace,
    STYLE_BASE,
    STYLE_R1,
    answer_to_markdown,
    candidate_info,
    insert_prompt_based,
    insert_rule_based,
    merge,
    parse_single_shot,
)
from .metrics import (
    MetricReport,
    aggregate_reports,
    embedding_similarity,
    f1 as f1_metric,
    judge_relevance,
    order_score,
    overall,
    position_score,
    precision as precision_metric,
    recall as recall_metric,
    rouge_l,
)
from .model import (
    DatasetSample,
    DocumentChunk,
    ImageAsset,
    PlacementMap,
    Query,
    load_samples,
    to_sequence,
)
from .prompts import SINGLE_SHOT, render
from .providers import ChatRequest
from .retrieval import RetrievalConfig, retrieve


@dataclass
class SampleResult:
    sample_id: str
    retrieved_ids: list[str]
    answer_text: str
    placements: PlacementMap
    trace: InsertionTrace
    markdown: str
    error: str | None = None


def load_corpus_file(path: str | Path) -> list[DocumentChunk]:
    chunks = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            chunks.append(
                DocumentChunk(
                    id=str(obj["id"]),
                    text=str(obj["text"]),
                    image_ids=tuple(obj.get("image_ids", ())),
                )
            )
    return chunks


def derive_corpus(samples: Sequence[DatasetSample]) -> list[DocumentChunk]:
    """A self-contained corpus when none is supplied: one chunk per sample,
    carrying its candidate images."""
    return [
        DocumentChunk(
            id=sample.id,
            text=sample.sentences.joined(),
            image_ids=tuple(asset.id for asset in sample.images),
        )
        for sample in samples
    ]


def _run_one(
    sample: DatasetSample,
    cfg: RunConfig,
    corpus: Sequence[DocumentChunk],
    global_catalog: Mapping[str, ImageAsset],
    generator,
    inserter,
    embedder,
) -> SampleResult:
    query = Query(sample.id, sample.query)
    retrieved = retrieve(query, corpus, RetrievalConfig(k=cfg.k), embedder)
    retrieved_ids = [doc.id for doc in retrieved]

    if cfg.candidates == "sample":
        candidates: list[ImageAsset] = list(sample.images)
    else:
        seen: list[ImageAsset] = []
        for doc in retrieved:
            for image_id in doc.image_ids:
                asset = global_catalog.get(image_id)
                if asset is not None and asset not in seen:
                    seen.append(asset)
        candidates = seen
    catalog = {asset.id: asset for asset in candidates}
    valid_ids = frozenset(catalog)

    if cfg.strategy == "single_shot":
        prompt = render(
            SINGLE_SHOT,
            {
                "question": query.text,
                "context_str": "\n\n".join(doc.text for doc in retrieved),
                "imgs_info": candidate_info(candidates),
            },
        )
        completion = generator.complete(
            ChatRequest.user(prompt, model=generator.model)
        ).text
        parsed = parse_single_shot(completion, valid_ids)
        if not parsed.text.strip():
            raise MmragError("single-shot completion contained no answer text")
        answer_text = parsed.text
        sentences = split_sentences(answer_text)
        placements = parsed.placements
        trace = InsertionTrace(
            "single_shot", completion, "well_formed", parsed.warnings, placements
        )
    else:
        if cfg.use_gt_answer:
            sentences = sample.sentences
            answer_text = sentences.joined()
        else:
            answer_text = generate_answer(query, retrieved, generator)
            sentences = split_sentences(answer_text)
        if cfg.strategy == "rule_based":
            placements = insert_rule_based(
                sentences, candidates, embedder, threshold=cfg.rule_threshold
            )
            trace = InsertionTrace("rule_based", "", "well_formed", (), placements)
        else:
            style = STYLE_R1 if cfg.inserter_style == "r1" else STYLE_BASE
            placements, output = insert_prompt_based(
                query, sentences, candidates, inserter, style=style
            )
            trace = InsertionTrace(
                f"m2io:{style}",
                output.raw,
                output.parse_status,
                output.warnings,
                placements,
            )

    merged = merge(answer_text, sentences, placements, catalog)
    markdown = answer_to_markdown(merged, catalog)
    return SampleResult(sample.id, retrieved_ids, answer_text, placements, trace, markdown)


@dataclass
class RunSummary:
    output_dir: Path
    config_hash: str
    results: list[SampleResult]
    failures: list[str]


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def run_pipeline(cfg: RunConfig) -> RunSummary:
    samples = load_samples(cfg.dataset)
    corpus = load_corpus_file(cfg.corpus) if cfg.corpus else derive_corpus(samples)
    global_catalog: dict[str, ImageAsset] = {}
    for sample in samples:
        for asset in sample.images:
            global_catalog.setdefault(asset.id, asset)

    generator = build_chat_provider(cfg.providers["generator"])
    inserter = build_chat_provider(cfg.providers["inserter"])
    embedder = build_embedder(cfg.providers["embedder"])

    def worker(sample: DatasetSample) -> SampleResult:
        try:
            return _run_one(
                sample, cfg, corpus, global_catalog, generator, inserter, embedder
            )
        except (MmragError, ValueError) as exc:
            return SampleResult(
                sample.id,
                [],
                "",
                PlacementMap(),
                InsertionTrace(cfg.strategy, "", "error", (str(exc),), PlacementMap()),
                "",
                error=str(exc),
            )

    if cfg.workers == 1:
        results = [worker(sample) for sample in samples]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(worker, samples))

    out = Path(cfg.output_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "answers_md").mkdir(parents=True, exist_ok=True)

    answers_path = out / "answers.jsonl"
    with open(answers_path, "w", encoding="utf-8") as handle:
        for result in results:
            handle.write(
                json.dumps(
                    {
                        "sample_id": result.sample_id,
                        "text": result.answer_text,
                        "placements": result.placements.as_dict(),
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
            handle.write("\n")

    artifact_paths = [answers_path]
    for result in results:
        trace_path = out / "traces" / f"{result.sample_id}.json"
        with open(trace_path, "w", encoding="utf-8") as handle:
            trace = result.trace.to_json()
            trace["retrieved_ids"] = result.retrieved_ids
            trace["answer_text"] = result.answer_text
            if result.error is not None:
                trace["error"] = result.error
            json.dump(trace, handle, ensure_ascii=False, sort_keys=True, indent=2)
        artifact_paths.append(trace_path)
        md_path = out / "answers_md" / f"{result.sample_id}.md"
        md_path.write_text(result.markdown, encoding="utf-8")
        artifact_paths.append(md_path)

    failures = [result.sample_id for result in results if result.error is not None]
    manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.semantic_dict(),
        "seed": cfg.seed,
        "version": __version__,
        "samples": len(samples),
        "failures": failures,
        "artifacts": {
            str(path.relative_to(out)): _sha256_file(path) for path in sorted(artifact_paths)
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, ensure_ascii=False, sort_keys=True, indent=2)
    return RunSummary(out, manifest["config_hash"], results, failures)


# --- evaluation -----------------------------------------------------------------


@dataclass
class AnswerRecord:
    sample_id: str
    text: str
    placements: PlacementMap


def load_answers(path: str | Path) -> list[AnswerRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                AnswerRecord(
                    sample_id=str(obj["sample_id"]),
                    text=str(obj["text"]),
                    placements=PlacementMap.of(
                        {str(k): int(v) for k, v in obj.get("placements", {}).items()}
                    ),
                )
            )
    return records


def answers_from_ground_truth(samples: Sequence[DatasetSample]) -> list[AnswerRecord]:
    return [
        AnswerRecord(sample.id, sample.sentences.joined(), sample.gt_placements)
        for sample in samples
    ]


def evaluate_answer(
    sample: DatasetSample,
    record: AnswerRecord,
    with_order: bool,
    embedder=None,
    judge=None,
    rel_norm: str = "offset",
) -> MetricReport:
    """All applicable metrics for one answer against its sample.

    The position score needs slot-by-slot comparability, so it is computed
    only when the answer splits into exactly the ground-truth sentence count.
    Order is computed only where sequence order matters for the sample and
    the reference contains images.
    """
    gt = sample.ground_truth()
    pred_ids = frozenset(record.placements.image_ids())
    gt_ids = frozenset(gt.placements.image_ids())

    rec = recall_metric(pred_ids, gt_ids)
    prec = precision_metric(pred_ids, gt_ids)
    f1_value = f1_metric(pred_ids, gt_ids)

    ord_value = None
    if with_order and gt.ordered_images:
        pred_ordered = [
            image_id
            for image_id, _ in sorted(record.placements.items(), key=lambda e: e[1])
        ]
        ord_value = order_score(list(gt.ordered_images), pred_ordered)

    answer_sentences = None
    if record.text.strip():
        answer_sentences = split_sentences(record.text)
    max_target = max((index for _, index in record.placements.items()), default=0)

    pos_value = None
    try:
        if answer_sentences is not None and len(answer_sentences) == len(sample.sentences):
            if max_target <= len(sample.sentences):
                pred_seq = to_sequence(record.placements, len(sample.sentences))
                pos_value = position_score(gt.sequence, pred_seq)
    except (LengthMismatch, ValueError):
        pos_value = None

    rouge_value = rouge_l(record.text, sample.sentences.joined())

    bert_value = None
    if embedder is not None:
        bert_value = embedding_similarity(record.text, sample.sentences.joined(), embedder)

    rel_value = None
    if (
        judge is not None
        and record.placements.image_ids()
        and answer_sentences is not None
        and max_target <= len(answer_sentences)
    ):
        catalog = sample.image_catalog()
        known = {i: catalog[i] for i, _ in record.placements.items() if i in catalog}
        if len(known) == len(record.placements):
            try:
                merged = merge(record.text, answer_sentences, record.placements, known)
                rel_value = judge_relevance(
                    merged, Query(sample.id, sample.query), known, judge, norm=rel_norm
                )
            except MmragError:
                rel_value = None

    ovr_value = None
    if rel_value is not None and bert_value is not None:
        ovr_value = overall(f1_value, rel_value, bert_value, rouge_value, ord_value)

    return MetricReport(
        rec=rec,
        prec=prec,
        f1=f1_value,
        ord=ord_value,
        pos=pos_value,
        rel=rel_value,
        rouge_l=rouge_value,
        bert_sim=bert_value,
        ovr=ovr_value,
    )


@dataclass
class EvaluationResult:
    reports: dict[str, MetricReport]
    aggregate: dict[str, float | None]
    missing: list[str]


def evaluate_run(
    samples: Sequence[DatasetSample],
    answers: Sequence[AnswerRecord],
    order_sources: Sequence[str] = ("recipe", "manual"),
    force_order: bool = False,
    embedder=None,
    judge=None,
    rel_norm: str = "offset",
) -> EvaluationResult:
    by_id = {record.sample_id: record for record in answers}
    missing = [sample.id for sample in samples if sample.id not in by_id]
    reports: dict[str, MetricReport] = {}
    order_set = {s.lower() for s in order_sources}
    for sample in samples:
        record = by_id.get(sample.id)
        if record is None:
            continue
        with_order = force_order or (sample.source or "").lower() in order_set
        reports[sample.id] = evaluate_answer(
            sample, record, with_order, embedder=embedder, judge=judge, rel_norm=rel_norm
        )
    aggregate = aggregate_reports(list(reports.values()))
    return EvaluationResult(reports, aggregate, missing)
