"""HTTP API over persisted runs, plus static hosting for the console.

The API is a pure projection of what RunStore persisted: nothing lives
only in server memory, so restarting the server loses nothing. Mutations
(create run, review) are serialized per run via the run-directory file
lock; loop continuation after a review happens on a background thread.

No authentication; binds loopback by default. Do not expose this service
beyond the operator's machine.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import replace
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles

from . import moderation
from .corpus import load_corpus
from .guidelines import DiffEntry, GuidelineError
from .guidelines import diff as guideline_diff
from .guidelines import render as render_guideline
from .metrics import ALL_MODES
from .moderation import (
    IterationResult,
    ModerationError,
    NotAwaitingReview,
    ReviewConflict,
    ReviewDecision,
    RunConfig,
    classify_report_factors,
    generate_run_id,
)
from .prompting import ModeratorOutputError
from .runstore import RunStore, UnknownRun, annotation_to_dict, prf_to_dict, revision_from_dict


def _prf_payload(prf) -> dict:
    payload = prf_to_dict(prf)
    payload["precision"] = prf.precision
    payload["recall"] = prf.recall
    payload["f1"] = prf.f1
    return payload


def _iteration_summary(it: IterationResult) -> dict:
    return {
        "batch_index": it.batch_index,
        "iteration_index": it.iteration_index,
        "guideline_version": it.guideline_version,
        "gate_value": it.gate_value,
        "n_discrepancies": len(it.discrepancies),
        "has_report": it.report is not None,
        "review_decision": it.review_decision,
        "applied_revision_version": it.applied_revision_version,
        "partial": it.partial,
    }


def _diff_entry_dict(entry: DiffEntry) -> dict:
    return {
        "section_id": entry.section_id,
        "kind": entry.kind,
        "body_changed": entry.body_changed,
        "examples_added": list(entry.examples_added),
        "examples_changed": entry.examples_changed,
    }


class _RunAccess:
    """Read helpers bound to one run directory."""

    def __init__(self, run_root: Path, run_id: str):
        try:
            self.store = RunStore.open(run_root, run_id)
        except UnknownRun:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        self.record = moderation.load_record(run_root, run_id)

    def iteration(self, index: int) -> IterationResult:
        if index < 0 or index >= len(self.record.iterations):
            raise HTTPException(status_code=404, detail=f"no iteration {index}")
        return self.record.iterations[index]


def create_app(
    run_root: str | Path,
    read_only: bool = False,
    console_dir: str | Path | None = None,
) -> FastAPI:
    run_root = Path(run_root)
    app = FastAPI(title="gforge service", version="1")
    mutation_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def mutation_lock(run_id: str) -> threading.Lock:
        with locks_guard:
            return mutation_locks.setdefault(run_id, threading.Lock())

    def require_writable() -> None:
        if read_only:
            raise HTTPException(status_code=403, detail="service is read-only")

    def status_payload(run_id: str) -> dict:
        access = _RunAccess(run_root, run_id)
        record = access.record
        fingerprint = hashlib.sha256(
            f"{record.status}:{len(record.iterations)}:"
            f"{[round(i.gate_value, 9) for i in record.iterations]}:"
            f"{[i.review_decision for i in record.iterations]}".encode()
        ).hexdigest()[:16]
        return {
            "run_id": run_id,
            "status": record.status,
            "iterations": len(record.iterations),
            "etag": fingerprint,
        }

    @app.get("/api/v1/runs")
    def list_runs() -> list[dict]:
        out = []
        for run_id in RunStore.list_runs(run_root):
            record = moderation.load_record(run_root, run_id)
            out.append(
                {
                    "run_id": run_id,
                    "status": record.status,
                    "iterations": len(record.iterations),
                    "gate_trajectory": [it.gate_value for it in record.iterations],
                }
            )
        return out

    @app.post("/api/v1/runs")
    def create_run(payload: dict = Body(...)) -> dict:
        require_writable()
        try:
            config = RunConfig.from_dict(payload)
            config.validate()
        except (KeyError, ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"bad config: {exc}")
        # Runs created through this service live in this service's store.
        config = replace(config, run_root=str(run_root))
        if config.run_id is None:
            config = replace(config, run_id=generate_run_id())
        run_id = config.run_id

        def background_run(cfg: RunConfig) -> None:
            try:
                moderation.run_loop(cfg)
            except ModerationError:
                pass  # outcome is in the persisted record

        threading.Thread(target=background_run, args=(config,), daemon=True).start()
        deadline = time.monotonic() + 10.0
        while time.monotonic() < deadline:
            try:
                return status_payload(run_id)
            except HTTPException:
                time.sleep(0.05)
        return {"run_id": run_id, "status": "Starting", "iterations": 0, "etag": ""}

    @app.get("/api/v1/runs/{run_id}")
    def get_run(run_id: str) -> dict:
        access = _RunAccess(run_root, run_id)
        record = access.record
        return {
            "run_id": run_id,
            "status": record.status,
            "config": record.config.to_dict(),
            "gate_threshold": record.config.gate_threshold,
            "iterations": [_iteration_summary(it) for it in record.iterations],
            "gate_trajectory": [it.gate_value for it in record.iterations],
        }

    @app.get("/api/v1/runs/{run_id}/status")
    def get_status(
        run_id: str,
        wait: float = Query(default=0.0, le=30.0),
        etag: str | None = None,
    ) -> dict:
        payload = status_payload(run_id)
        if wait > 0 and etag and payload["etag"] == etag:
            deadline = time.monotonic() + wait
            while time.monotonic() < deadline:
                time.sleep(0.15)
                payload = status_payload(run_id)
                if payload["etag"] != etag:
                    break
        return payload

    @app.get("/api/v1/runs/{run_id}/iterations/{index}")
    def get_iteration(run_id: str, index: int) -> dict:
        access = _RunAccess(run_root, run_id)
        it = access.iteration(index)
        corpus = load_corpus(access.record.config.corpus_paths)
        documents = []
        for doc_id in it.doc_ids:
            doc = corpus.document(doc_id)
            documents.append(
                {
                    "doc_id": doc_id,
                    "text": doc.text,
                    "gold": [annotation_to_dict(a) for a in corpus.gold.get(doc_id, [])],
                    "predicted": [
                        annotation_to_dict(a) for a in it.annotations.get(doc_id, ())
                    ],
                    "prf": {
                        mode.key: _prf_payload(it.per_doc_prf[doc_id][mode.key])
                        for mode in ALL_MODES
                        if doc_id in it.per_doc_prf
                    },
                    "warnings": [list(w) for w in it.warnings.get(doc_id, ())],
                }
            )
        return {
            **_iteration_summary(it),
            "documents": documents,
            "discrepancies": [d.to_dict() for d in it.discrepancies],
        }

    @app.get("/api/v1/runs/{run_id}/iterations/{index}/report")
    def get_report(run_id: str, index: int) -> dict:
        access = _RunAccess(run_root, run_id)
        it = access.iteration(index)
        if it.report is None:
            raise HTTPException(status_code=404, detail="iteration has no report")
        payload = it.report.to_dict()
        payload["factor_distribution"] = classify_report_factors(it.report)
        return payload

    @app.get("/api/v1/runs/{run_id}/guidelines")
    def get_lineage(run_id: str) -> dict:
        access = _RunAccess(run_root, run_id)
        store = access.store
        state = store.state() if store.has_state() else None
        current = state.guideline_version if state else None
        chain = store.guidelines.lineage(current) if current else []
        return {
            "current": current,
            "lineage": list(reversed(chain)),  # root first
            "all_versions": store.guidelines.versions(),
        }

    @app.get("/api/v1/runs/{run_id}/guidelines/{version_id}")
    def get_guideline(run_id: str, version_id: str) -> dict:
        access = _RunAccess(run_root, run_id)
        try:
            doc = access.store.guidelines.get(version_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown version {version_id}")
        return {
            "version_id": doc.version_id,
            "parent_version": doc.parent_version,
            "text": render_guideline(doc),
            "sections": [
                {
                    "section_id": s.section_id,
                    "heading": s.heading,
                    "body": s.body,
                    "examples": list(s.examples),
                }
                for s in doc.sections
            ],
        }

    @app.get("/api/v1/runs/{run_id}/diff")
    def get_diff(run_id: str, from_version: str = Query(alias="from"),
                 to_version: str = Query(alias="to")) -> dict:
        access = _RunAccess(run_root, run_id)
        try:
            old = access.store.guidelines.get(from_version)
            new = access.store.guidelines.get(to_version)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=f"unknown version {exc}")
        return {
            "from": from_version,
            "to": to_version,
            "entries": [_diff_entry_dict(e) for e in guideline_diff(old, new)],
        }

    @app.post("/api/v1/runs/{run_id}/review")
    def post_review(run_id: str, payload: dict = Body(...)) -> dict:
        require_writable()
        action = payload.get("action")
        if action not in ("approve", "edit", "reject"):
            raise HTTPException(status_code=400, detail=f"bad action {action!r}")
        iteration_index = payload.get("iteration")
        revision = None
        if action == "edit":
            raw = payload.get("revision")
            if not isinstance(raw, dict):
                raise HTTPException(status_code=400, detail="edit requires a revision")
            try:
                revision = revision_from_dict(
                    {"rationale": raw.get("rationale", ""), "author": "human",
                     "edits": raw.get("edits", [])}
                )
            except Exception as exc:
                raise HTTPException(status_code=400, detail=f"bad revision: {exc}")
            if not revision.edits:
                raise HTTPException(status_code=400, detail="revision has no edits")

        with mutation_lock(run_id):
            access = _RunAccess(run_root, run_id)
            record = access.record
            # Idempotency: re-posting the decision already recorded for the
            # targeted iteration returns the prior outcome.
            if isinstance(iteration_index, int) and 0 <= iteration_index < len(
                record.iterations
            ):
                prior = record.iterations[iteration_index]
                if prior.review_decision is not None:
                    if prior.review_decision == action:
                        return {
                            "run_id": run_id,
                            "status": record.status,
                            "review_decision": prior.review_decision,
                            "applied_revision_version": prior.applied_revision_version,
                            "duplicate": True,
                        }
                    raise HTTPException(
                        status_code=409,
                        detail=f"iteration already decided: {prior.review_decision}",
                    )
            try:
                result = moderation.apply_review(
                    run_root,
                    run_id,
                    ReviewDecision(action=action, revision=revision),
                    resume=False,
                )
            except NotAwaitingReview as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except ReviewConflict as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except (GuidelineError, ModeratorOutputError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))

        def continue_run() -> None:
            try:
                moderation.resume_run(run_root, run_id)
            except ModerationError:
                pass

        threading.Thread(target=continue_run, daemon=True).start()
        latest = None
        for it in result.iterations:
            if it.review_decision is not None:
                latest = it
        return {
            "run_id": run_id,
            "status": result.status,
            "review_decision": action,
            "applied_revision_version": (
                latest.applied_revision_version if latest else None
            ),
            "duplicate": False,
        }

    if console_dir is not None and Path(console_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app


def serve(
    run_root: str | Path,
    host: str = "127.0.0.1",
    port: int = 8008,
    read_only: bool = False,
    console_dir: str | Path | None = None,
) -> None:
    """Run the API server in the foreground."""
    import uvicorn

    app = create_app(run_root, read_only=read_only, console_dir=console_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
