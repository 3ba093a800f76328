"""The three-phase moderation workflow engine.

Per batch: Phase 1 annotates every document with the LLM; Phase 2 scores
the output under all four criteria and compares the per-document mean
strict F1 against the gate threshold; when the gate fails, Phase 3 asks
the LLM moderator to analyze the discrepancies and propose a guideline
revision. In auto mode the revision is applied immediately; in
human-in-the-loop mode the run pauses as AwaitingReview until a reviewer
approves, edits, or rejects it. The same batch is re-annotated under the
revised guideline until the gate passes or the per-batch iteration budget
runs out; the latest guideline version carries into later batches.

Every state transition is persisted (atomically, via RunStore) before the
next side effect, so a killed run resumes to the identical record.
"""

from __future__ import annotations

import secrets
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import (
    Annotation,
    Document,
    batch_count,
    load_corpus,
    sample_batch,
)
from .factors import ALL_FACTORS, normalize_factor
from .gateway import BackendConfig, Gateway, GatewayError, prompt_digest
from .guidelines import GuidelineDoc, Revision, apply_revision, parse_guideline
from .metrics import (
    ALL_MODES,
    PRF,
    STRICT,
    MatchMode,
    MatchResult,
    match_annotations,
    mean_document_f1,
    micro_prf,
    mode_from_key,
)
from .prompting import (
    PromptingError,
    build_annotator_prompt,
    build_moderator_analyze_prompt,
    build_moderator_update_prompt,
    parse_annotator_output,
    parse_moderator_report_output,
    parse_revision_output,
)
from .runstore import (
    STATUS_AWAITING_REVIEW,
    STATUS_COMPLETED,
    STATUS_FAILED,
    STATUS_RUNNING,
    RunState,
    RunStore,
    annotation_from_dict,
    annotation_to_dict,
    prf_from_dict,
    prf_to_dict,
    revision_from_dict,
    revision_to_dict,
)


class ModerationError(Exception):
    pass


class EmptyReport(ModerationError):
    pass


class NotAwaitingReview(ModerationError):
    pass


class ReviewConflict(ModerationError):
    """A different decision was already recorded for this iteration."""


class FailedRun(ModerationError):
    """Unrecoverable backend failure; the partial record was persisted."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a moderation run needs; defaults follow the workbench's
    standard settings (batches of 5, strict-match gate at 0.8)."""

    corpus_paths: tuple[str, ...]
    guideline_path: str
    backend: BackendConfig
    run_root: str = "runs"
    run_id: str | None = None
    batch_size: int = 5
    gate_threshold: float = 0.8
    gate_mode: MatchMode = STRICT
    gate_aggregation: str = "macro"  # "macro" | "micro"
    max_iterations_per_batch: int = 3
    review_mode: str = "auto"  # "auto" | "hitl"
    seed: int = 0
    use_guidelines: bool = True
    context_window: int = 120

    def validate(self) -> None:
        if not (0 < self.gate_threshold <= 1):
            raise ValueError("gate_threshold must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations_per_batch < 1:
            raise ValueError("max_iterations_per_batch must be >= 1")
        if self.review_mode not in ("auto", "hitl"):
            raise ValueError(f"unknown review_mode {self.review_mode!r}")
        if self.gate_aggregation not in ("macro", "micro"):
            raise ValueError(f"unknown gate_aggregation {self.gate_aggregation!r}")
        self.backend.validate()

    def to_dict(self) -> dict:
        return {
            "corpus_paths": list(self.corpus_paths),
            "guideline_path": self.guideline_path,
            "backend": self.backend.to_dict(),
            "run_root": self.run_root,
            "run_id": self.run_id,
            "batch_size": self.batch_size,
            "gate_threshold": self.gate_threshold,
            "gate_mode": self.gate_mode.key,
            "gate_aggregation": self.gate_aggregation,
            "max_iterations_per_batch": self.max_iterations_per_batch,
            "review_mode": self.review_mode,
            "seed": self.seed,
            "use_guidelines": self.use_guidelines,
            "context_window": self.context_window,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return cls(
            corpus_paths=tuple(data["corpus_paths"]),
            guideline_path=data["guideline_path"],
            backend=BackendConfig.from_dict(data["backend"]),
            run_root=data.get("run_root", "runs"),
            run_id=data.get("run_id"),
            batch_size=data.get("batch_size", 5),
            gate_threshold=data.get("gate_threshold", 0.8),
            gate_mode=mode_from_key(data.get("gate_mode", STRICT.key)),
            gate_aggregation=data.get("gate_aggregation", "macro"),
            max_iterations_per_batch=data.get("max_iterations_per_batch", 3),
            review_mode=data.get("review_mode", "auto"),
            seed=data.get("seed", 0),
            use_guidelines=data.get("use_guidelines", True),
            context_window=data.get("context_window", 120),
        )


@dataclass(frozen=True)
class Discrepancy:
    """One disagreement between model and gold annotations."""

    kind: str  # "FalsePositive" | "FalseNegative" | "CategoryMismatch"
    doc_id: str
    predicted: Annotation | None
    gold: Annotation | None
    context: str

    @property
    def anchor(self) -> Annotation:
        return self.gold if self.gold is not None else self.predicted

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "doc_id": self.doc_id,
            "predicted": annotation_to_dict(self.predicted) if self.predicted else None,
            "gold": annotation_to_dict(self.gold) if self.gold else None,
            "context": self.context,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Discrepancy":
        return cls(
            kind=data["kind"],
            doc_id=data["doc_id"],
            predicted=annotation_from_dict(data["predicted"]) if data["predicted"] else None,
            gold=annotation_from_dict(data["gold"]) if data["gold"] else None,
            context=data["context"],
        )


@dataclass(frozen=True)
class ReportItem:
    discrepancy: Discrepancy
    cause: str
    factor: str
    solution: str

    def to_dict(self) -> dict:
        return {
            "discrepancy": self.discrepancy.to_dict(),
            "cause": self.cause,
            "factor": self.factor,
            "solution": self.solution,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReportItem":
        return cls(
            discrepancy=Discrepancy.from_dict(data["discrepancy"]),
            cause=data["cause"],
            factor=data["factor"],
            solution=data["solution"],
        )


@dataclass(frozen=True)
class ModerationReport:
    items: tuple[ReportItem, ...]
    proposed_revision: Revision
    exchange_digests: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "items": [item.to_dict() for item in self.items],
            "proposed_revision": revision_to_dict(self.proposed_revision),
            "exchange_digests": list(self.exchange_digests),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModerationReport":
        return cls(
            items=tuple(ReportItem.from_dict(i) for i in data["items"]),
            proposed_revision=revision_from_dict(data["proposed_revision"]),
            exchange_digests=tuple(data.get("exchange_digests", ())),
        )


@dataclass(frozen=True)
class IterationResult:
    """Everything one annotate/evaluate(/moderate) pass produced."""

    batch_index: int
    iteration_index: int
    guideline_version: str
    doc_ids: tuple[str, ...]
    annotations: dict[str, tuple[Annotation, ...]]
    warnings: dict[str, tuple[tuple[str, str], ...]]
    per_doc_prf: dict[str, dict[str, PRF]]  # doc -> mode key -> PRF
    gate_value: float
    discrepancies: tuple[Discrepancy, ...]
    report: ModerationReport | None = None
    review_decision: str | None = None
    review_revision: Revision | None = None
    applied_revision_version: str | None = None
    partial: bool = False

    def to_dict(self) -> dict:
        return {
            "batch_index": self.batch_index,
            "iteration_index": self.iteration_index,
            "guideline_version": self.guideline_version,
            "doc_ids": list(self.doc_ids),
            "annotations": {
                doc_id: [annotation_to_dict(a) for a in anns]
                for doc_id, anns in self.annotations.items()
            },
            "warnings": {
                doc_id: [list(w) for w in ws] for doc_id, ws in self.warnings.items()
            },
            "per_doc_prf": {
                doc_id: {key: prf_to_dict(prf) for key, prf in by_mode.items()}
                for doc_id, by_mode in self.per_doc_prf.items()
            },
            "gate_value": self.gate_value,
            "discrepancies": [d.to_dict() for d in self.discrepancies],
            "report": self.report.to_dict() if self.report else None,
            "review_decision": self.review_decision,
            "review_revision": (
                revision_to_dict(self.review_revision) if self.review_revision else None
            ),
            "applied_revision_version": self.applied_revision_version,
            "partial": self.partial,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationResult":
        return cls(
            batch_index=data["batch_index"],
            iteration_index=data["iteration_index"],
            guideline_version=data["guideline_version"],
            doc_ids=tuple(data["doc_ids"]),
            annotations={
                doc_id: tuple(annotation_from_dict(a) for a in anns)
                for doc_id, anns in data["annotations"].items()
            },
            warnings={
                doc_id: tuple((w[0], w[1]) for w in ws)
                for doc_id, ws in data["warnings"].items()
            },
            per_doc_prf={
                doc_id: {key: prf_from_dict(prf) for key, prf in by_mode.items()}
                for doc_id, by_mode in data["per_doc_prf"].items()
            },
            gate_value=data["gate_value"],
            discrepancies=tuple(Discrepancy.from_dict(d) for d in data["discrepancies"]),
            report=ModerationReport.from_dict(data["report"]) if data["report"] else None,
            review_decision=data.get("review_decision"),
            review_revision=(
                revision_from_dict(data["review_revision"])
                if data.get("review_revision")
                else None
            ),
            applied_revision_version=data.get("applied_revision_version"),
            partial=data.get("partial", False),
        )


@dataclass
class RunRecord:
    run_id: str
    config: RunConfig
    iterations: list[IterationResult]
    status: str

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config.to_dict(),
            "iterations": [it.to_dict() for it in self.iterations],
            "status": self.status,
        }


@dataclass(frozen=True)
class ReviewDecision:
    action: str  # "approve" | "edit" | "reject"
    revision: Revision | None = None  # edit only


class IterationError(ModerationError):
    """Wraps a backend/parse failure together with the partial result."""

    def __init__(self, partial: IterationResult, cause: Exception):
        super().__init__(str(cause))
        self.partial = partial
        self.cause = cause


def _context(text: str, start: int, end: int, window: int) -> str:
    return text[max(0, start - window) : min(len(text), end + window)]


def discrepancies_from_result(
    result: MatchResult, doc_id: str, text: str, window: int = 120
) -> list[Discrepancy]:
    items: list[Discrepancy] = []
    for ann in result.false_positives:
        items.append(
            Discrepancy(
                "FalsePositive", doc_id, ann, None,
                _context(text, ann.start, ann.end, window),
            )
        )
    for ann in result.false_negatives:
        items.append(
            Discrepancy(
                "FalseNegative", doc_id, None, ann,
                _context(text, ann.start, ann.end, window),
            )
        )
    for pred, gold in result.category_mismatches:
        items.append(
            Discrepancy(
                "CategoryMismatch", doc_id, pred, gold,
                _context(text, gold.start, gold.end, window),
            )
        )
    items.sort(key=lambda d: (d.anchor.start, d.anchor.end, d.kind))
    return items


def extract_discrepancies(
    pred: list[Annotation],
    gold: list[Annotation],
    gate_mode: MatchMode,
    text: str,
    window: int = 120,
) -> list[Discrepancy]:
    """Compare one document's predictions to gold under the gate criterion."""
    doc_id = next((a.doc_id for a in gold), next((a.doc_id for a in pred), ""))
    result = match_annotations(pred, gold, gate_mode)
    return discrepancies_from_result(result, doc_id, text, window)


def classify_report_factors(report: ModerationReport) -> dict[str, float]:
    """Normalized share of report items per influencing-factor class."""
    if not report.items:
        raise EmptyReport("report has no items to classify")
    counts = {name: 0 for name in ALL_FACTORS}
    for item in report.items:
        counts[normalize_factor(item.factor)] += 1
    total = len(report.items)
    return {name: counts[name] / total for name in ALL_FACTORS}


def _gate_value(per_doc: list[PRF], aggregation: str) -> float:
    if aggregation == "micro":
        return micro_prf(per_doc).f1
    return mean_document_f1(per_doc)


def run_iteration(
    batch: Sequence[Document],
    gold: Mapping[str, list[Annotation]],
    guideline: GuidelineDoc,
    config: RunConfig,
    gateway: Gateway,
    batch_index: int = 0,
    iteration_index: int = 0,
) -> IterationResult:
    """One annotate -> evaluate (-> moderate) pass over a batch.

    The proposed revision is never applied here; callers decide. On a
    backend or output-parsing failure an IterationError carrying the
    partial result (annotations of the documents that completed) is
    raised; the engine persists that partial before failing the run.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    prompt_guideline = guideline if config.use_guidelines else None

    def annotate(doc: Document):
        prompt = build_annotator_prompt(doc, prompt_guideline)
        return parse_annotator_output(gateway.complete(prompt), doc)

    annotations: dict[str, tuple[Annotation, ...]] = {}
    warnings: dict[str, tuple[tuple[str, str], ...]] = {}

    def partial_result(cause: Exception) -> IterationError:
        return IterationError(
            IterationResult(
                batch_index=batch_index,
                iteration_index=iteration_index,
                guideline_version=guideline.version_id,
                doc_ids=tuple(doc.doc_id for doc in batch),
                annotations=dict(annotations),
                warnings=dict(warnings),
                per_doc_prf={},
                gate_value=0.0,
                discrepancies=(),
                partial=True,
            ),
            cause,
        )

    try:
        if config.backend.max_concurrency > 1 and len(batch) > 1:
            with ThreadPoolExecutor(
                max_workers=min(config.backend.max_concurrency, len(batch))
            ) as pool:
                futures = [(doc, pool.submit(annotate, doc)) for doc in batch]
                for doc, future in futures:
                    parsed = future.result()
                    annotations[doc.doc_id] = parsed.annotations
                    warnings[doc.doc_id] = parsed.warnings
        else:
            for doc in batch:
                parsed = annotate(doc)
                annotations[doc.doc_id] = parsed.annotations
                warnings[doc.doc_id] = parsed.warnings
    except (GatewayError, PromptingError) as exc:
        raise partial_result(exc) from exc

    per_doc_prf: dict[str, dict[str, PRF]] = {}
    gate_parts: list[PRF] = []
    discrepancies: list[Discrepancy] = []
    for doc in batch:
        pred = list(annotations[doc.doc_id])
        doc_gold = list(gold.get(doc.doc_id, []))
        by_mode: dict[str, PRF] = {}
        for mode in ALL_MODES:
            result = match_annotations(pred, doc_gold, mode)
            by_mode[mode.key] = PRF.from_counts(
                len(result.pairs), result.n_pred, result.n_gold
            )
            if mode == config.gate_mode:
                discrepancies.extend(
                    discrepancies_from_result(
                        result, doc.doc_id, doc.text, config.context_window
                    )
                )
        per_doc_prf[doc.doc_id] = by_mode
        gate_parts.append(by_mode[config.gate_mode.key])
    gate_value = _gate_value(gate_parts, config.gate_aggregation)

    report: ModerationReport | None = None
    if gate_value < config.gate_threshold and discrepancies:
        batch_texts = {doc.doc_id: doc.text for doc in batch}
        try:
            analyze_prompt = build_moderator_analyze_prompt(
                discrepancies, guideline, batch_texts
            )
            analyze_raw = gateway.complete(analyze_prompt)
            entries = parse_moderator_report_output(analyze_raw, len(discrepancies))
            items = tuple(
                ReportItem(
                    discrepancy=d,
                    cause=entry["cause"],
                    factor=normalize_factor(entry["factor"]),
                    solution=entry["solution"],
                )
                for d, entry in zip(discrepancies, entries)
            )
            draft = ModerationReport(items=items, proposed_revision=Revision((), "", "llm"))
            update_prompt = build_moderator_update_prompt(draft, guideline)
            update_raw = gateway.complete(update_prompt)
            analyze_digest = prompt_digest(
                analyze_prompt, config.backend.model, config.backend.params
            )
            update_digest = prompt_digest(
                update_prompt, config.backend.model, config.backend.params
            )
            revision = parse_revision_output(
                update_raw, author="llm", source_report=analyze_digest
            )
            report = ModerationReport(
                items=items,
                proposed_revision=revision,
                exchange_digests=(analyze_digest, update_digest),
            )
        except (GatewayError, PromptingError) as exc:
            raise partial_result(exc) from exc

    return IterationResult(
        batch_index=batch_index,
        iteration_index=iteration_index,
        guideline_version=guideline.version_id,
        doc_ids=tuple(doc.doc_id for doc in batch),
        annotations=annotations,
        warnings=warnings,
        per_doc_prf=per_doc_prf,
        gate_value=gate_value,
        discrepancies=tuple(discrepancies),
        report=report,
    )


def _advance(batch_index: int, iter_index: int, config: RunConfig) -> tuple[int, int]:
    if iter_index + 1 >= config.max_iterations_per_batch:
        return batch_index + 1, 0
    return batch_index, iter_index + 1


def generate_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    return f"run-{stamp}-{secrets.token_hex(2)}"


def _record(store: RunStore) -> RunRecord:
    config = RunConfig.from_dict(store.config_dict())
    iterations = [IterationResult.from_dict(d) for d in store.iteration_dicts()]
    status = store.state().status if store.has_state() else STATUS_RUNNING
    return RunRecord(
        run_id=store.run_id, config=config, iterations=iterations, status=status
    )


def load_record(run_root: str | Path, run_id: str) -> RunRecord:
    return _record(RunStore.open(run_root, run_id))


def _ensure_initialized(store: RunStore, config: RunConfig) -> RunState:
    if store.has_state():
        return store.state()
    guideline_text = Path(config.guideline_path).read_text(encoding="utf-8")
    initial = parse_guideline(guideline_text)
    store.guidelines.put(initial)
    state = RunState(STATUS_RUNNING, 0, 0, initial.version_id)
    store.save_state(state)
    return state


def _drive(store: RunStore, gateway: Gateway | None = None) -> RunRecord:
    """Advance a run until it completes, pauses for review, or fails."""
    config = RunConfig.from_dict(store.config_dict())
    with store.lock():
        state = _ensure_initialized(store, config)
        if state.status in (STATUS_COMPLETED, STATUS_FAILED, STATUS_AWAITING_REVIEW):
            return _record(store)
        corpus = load_corpus(config.corpus_paths)
        n_batches = batch_count(corpus, config.batch_size) if corpus.documents else 0
        gw = gateway or Gateway(config.backend)

        while state.batch_index < n_batches:
            b, i = state.batch_index, state.iter_index
            stored = store.load_iteration_dict(b, i)
            if stored is not None:
                result = IterationResult.from_dict(stored)
            else:
                batch = sample_batch(corpus, config.batch_size, config.seed, b)
                guideline = store.guidelines.get(state.guideline_version)
                try:
                    result = run_iteration(
                        batch, corpus.gold, guideline, config, gw, b, i
                    )
                except IterationError as exc:
                    store.save_iteration_dict(exc.partial.to_dict())
                    store.save_state(replace(state, status=STATUS_FAILED))
                    raise FailedRun(
                        f"run {store.run_id} failed at batch {b} iteration {i}: {exc}"
                    ) from exc.cause
                store.save_iteration_dict(result.to_dict())

            if result.gate_value >= config.gate_threshold or result.report is None:
                state = RunState(STATUS_RUNNING, b + 1, 0, state.guideline_version)
                store.save_state(state)
                continue

            if config.review_mode == "hitl" and result.review_decision is None:
                store.save_state(replace(state, status=STATUS_AWAITING_REVIEW))
                return _record(store)

            # Auto mode: apply the proposed revision and continue.
            current = store.guidelines.get(state.guideline_version)
            new_doc = apply_revision(current, result.report.proposed_revision)
            store.guidelines.put(new_doc)
            store.save_iteration_dict(
                replace(result, applied_revision_version=new_doc.version_id).to_dict()
            )
            nb, ni = _advance(b, i, config)
            state = RunState(STATUS_RUNNING, nb, ni, new_doc.version_id)
            store.save_state(state)

        store.save_state(replace(state, status=STATUS_COMPLETED))
        return _record(store)


def run_loop(
    config: RunConfig,
    on_write=None,
    gateway: Gateway | None = None,
) -> RunRecord:
    """Create a run directory and drive the loop from the start."""
    config.validate()
    run_id = config.run_id or generate_run_id()
    config = replace(config, run_id=run_id)
    store = RunStore.create(config.run_root, run_id, config.to_dict(), on_write=on_write)
    return _drive(store, gateway)


def resume_run(
    run_root: str | Path,
    run_id: str,
    on_write=None,
    gateway: Gateway | None = None,
) -> RunRecord:
    """Continue a persisted run from its last recorded transition."""
    store = RunStore.open(run_root, run_id, on_write=on_write)
    return _drive(store, gateway)


def apply_review(
    run_root: str | Path,
    run_id: str,
    decision: ReviewDecision,
    resume: bool = True,
    on_write=None,
    gateway: Gateway | None = None,
) -> RunRecord:
    """Resolve an AwaitingReview pause.

    approve applies the moderator's proposed revision, edit applies the
    reviewer's revision (author forced to "human"), reject continues with
    the guideline unchanged. With ``resume`` the loop then advances to its
    next stable state; otherwise the decision is persisted and the caller
    resumes later.
    """
    store = RunStore.open(run_root, run_id, on_write=on_write)
    config = RunConfig.from_dict(store.config_dict())
    with store.lock():
        state = store.state()
        if state.status != STATUS_AWAITING_REVIEW:
            raise NotAwaitingReview(f"run {run_id} is {state.status}, not AwaitingReview")
        stored = store.load_iteration_dict(state.batch_index, state.iter_index)
        if stored is None:
            raise ModerationError("awaiting review without a persisted iteration")
        pending = IterationResult.from_dict(stored)
        if pending.report is None:
            raise ModerationError("awaiting review without a moderation report")
        if pending.review_decision is not None and pending.review_decision != decision.action:
            raise ReviewConflict(
                f"iteration already decided: {pending.review_decision}"
            )

        if decision.action == "approve":
            applied: Revision | None = pending.report.proposed_revision
        elif decision.action == "edit":
            if decision.revision is None:
                raise ValueError("edit decision requires a revision")
            applied = replace(decision.revision, author="human")
        elif decision.action == "reject":
            applied = None
        else:
            raise ValueError(f"unknown review action {decision.action!r}")

        new_version: str | None = None
        new_doc = None
        if applied is not None:
            current = store.guidelines.get(state.guideline_version)
            new_doc = apply_revision(current, applied)  # validates before persisting
            new_version = new_doc.version_id

        updated = replace(
            pending,
            review_decision=decision.action,
            review_revision=applied if decision.action == "edit" else None,
            applied_revision_version=new_version,
        )
        store.save_iteration_dict(updated.to_dict())
        if new_doc is not None:
            store.guidelines.put(new_doc)
        nb, ni = _advance(state.batch_index, state.iter_index, config)
        store.save_state(
            RunState(STATUS_RUNNING, nb, ni, new_version or state.guideline_version)
        )
    if resume:
        return _drive(store, gateway)
    return _record(store)
