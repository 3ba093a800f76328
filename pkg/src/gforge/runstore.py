"""Durable run state: one directory per run, atomic write-then-rename.

Layout under ``<run_root>/<run_id>/``:

    config.json                 run configuration
    state.json                  status + cursor + current guideline version
    iterations/b000_i00.json    one file per iteration
    guidelines/                 guideline version store (files + lineage)
    run.lock                    cross-process mutation lock

Every record is JSON with sorted keys, so identical run states are
byte-identical on disk. Records carry no wall-clock fields; a replayed
run reproduces its files exactly. The optional ``on_write`` hook fires
after each committed write and exists so tests can kill the process at
every persisted transition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from filelock import FileLock

from .corpus import Annotation, Category
from .guidelines import (
    AddSection,
    AppendExample,
    ReplaceBody,
    Revision,
    VersionStore,
)
from .metrics import PRF

STATUS_RUNNING = "Running"
STATUS_AWAITING_REVIEW = "AwaitingReview"
STATUS_COMPLETED = "Completed"
STATUS_FAILED = "Failed"


class RunStoreError(Exception):
    pass


class RunExists(RunStoreError):
    pass


class UnknownRun(RunStoreError):
    pass


@dataclass(frozen=True)
class RunState:
    status: str
    batch_index: int
    iter_index: int
    guideline_version: str

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "batch_index": self.batch_index,
            "iter_index": self.iter_index,
            "guideline_version": self.guideline_version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunState":
        return cls(
            status=data["status"],
            batch_index=data["batch_index"],
            iter_index=data["iter_index"],
            guideline_version=data["guideline_version"],
        )


def annotation_to_dict(ann: Annotation) -> dict:
    return {
        "doc_id": ann.doc_id,
        "start": ann.start,
        "end": ann.end,
        "mention": ann.mention,
        "category": ann.category.value,
        "concept_id": ann.concept_id,
    }


def annotation_from_dict(data: dict) -> Annotation:
    return Annotation(
        doc_id=data["doc_id"],
        start=data["start"],
        end=data["end"],
        mention=data["mention"],
        category=Category.parse(data["category"]),
        concept_id=data.get("concept_id"),
    )


def prf_to_dict(prf: PRF) -> dict:
    return {
        "matched_pred": prf.matched_pred,
        "matched_gold": prf.matched_gold,
        "n_pred": prf.n_pred,
        "n_gold": prf.n_gold,
    }


def prf_from_dict(data: dict) -> PRF:
    return PRF(
        matched_pred=data["matched_pred"],
        matched_gold=data["matched_gold"],
        n_pred=data["n_pred"],
        n_gold=data["n_gold"],
    )


def revision_to_dict(rev: Revision) -> dict:
    edits = []
    for edit in rev.edits:
        if isinstance(edit, ReplaceBody):
            edits.append(
                {"op": "replace_body", "section_id": edit.section_id, "body": edit.body}
            )
        elif isinstance(edit, AppendExample):
            edits.append(
                {"op": "append_example", "section_id": edit.section_id, "text": edit.text}
            )
        else:
            edits.append(
                {"op": "add_section", "heading": edit.heading, "body": edit.body}
            )
    return {
        "edits": edits,
        "rationale": rev.rationale,
        "author": rev.author,
        "source_report": rev.source_report,
    }


def revision_from_dict(data: dict) -> Revision:
    edits = []
    for item in data["edits"]:
        op = item["op"]
        if op == "replace_body":
            edits.append(ReplaceBody(item["section_id"], item["body"]))
        elif op == "append_example":
            edits.append(AppendExample(item["section_id"], item["text"]))
        elif op == "add_section":
            edits.append(AddSection(item["heading"], item["body"]))
        else:
            raise RunStoreError(f"unknown edit op {op!r} in stored revision")
    return Revision(
        edits=tuple(edits),
        rationale=data.get("rationale", ""),
        author=data.get("author", "llm"),
        source_report=data.get("source_report"),
    )


def _dump(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class RunStore:
    """Filesystem persistence for one run."""

    def __init__(self, run_dir: str | Path, on_write: Callable[[], None] | None = None):
        self.run_dir = Path(run_dir)
        self.on_write = on_write
        self._iterations_dir = self.run_dir / "iterations"
        self._state_path = self.run_dir / "state.json"
        self._config_path = self.run_dir / "config.json"
        self._lock = FileLock(str(self.run_dir / "run.lock"))
        self._guidelines: VersionStore | None = None

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, run_root: str | Path, run_id: str, config_dict: dict,
               on_write: Callable[[], None] | None = None) -> "RunStore":
        run_dir = Path(run_root) / run_id
        if (run_dir / "config.json").exists():
            raise RunExists(f"run {run_id} already exists under {run_root}")
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "iterations").mkdir(exist_ok=True)
        store = cls(run_dir, on_write=on_write)
        store._write_atomic(store._config_path, _dump(config_dict))
        return store

    @classmethod
    def open(cls, run_root: str | Path, run_id: str,
             on_write: Callable[[], None] | None = None) -> "RunStore":
        run_dir = Path(run_root) / run_id
        if not (run_dir / "config.json").exists():
            raise UnknownRun(f"no run {run_id} under {run_root}")
        return cls(run_dir, on_write=on_write)

    @staticmethod
    def list_runs(run_root: str | Path) -> list[str]:
        root = Path(run_root)
        if not root.is_dir():
            return []
        return sorted(
            p.name for p in root.iterdir() if (p / "config.json").is_file()
        )

    # -- primitives --------------------------------------------------------

    def lock(self, timeout: float = 30.0):
        return self._lock.acquire(timeout=timeout)

    def _write_atomic(self, path: Path, data: str) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(data, encoding="utf-8")
        tmp.replace(path)
        if self.on_write is not None:
            self.on_write()

    @property
    def run_id(self) -> str:
        return self.run_dir.name

    @property
    def guidelines(self) -> VersionStore:
        if self._guidelines is None:
            self._guidelines = VersionStore(
                self.run_dir / "guidelines",
                on_write=(self.on_write if self.on_write is not None else None),
            )
        return self._guidelines

    # -- records -----------------------------------------------------------

    def config_dict(self) -> dict:
        return json.loads(self._config_path.read_text(encoding="utf-8"))

    def has_state(self) -> bool:
        return self._state_path.exists()

    def state(self) -> RunState:
        return RunState.from_dict(
            json.loads(self._state_path.read_text(encoding="utf-8"))
        )

    def save_state(self, state: RunState) -> None:
        self._write_atomic(self._state_path, _dump(state.to_dict()))

    def _iteration_path(self, batch_index: int, iter_index: int) -> Path:
        return self._iterations_dir / f"b{batch_index:03d}_i{iter_index:02d}.json"

    def save_iteration_dict(self, data: dict) -> None:
        path = self._iteration_path(data["batch_index"], data["iteration_index"])
        self._iterations_dir.mkdir(exist_ok=True)
        self._write_atomic(path, _dump(data))

    def load_iteration_dict(self, batch_index: int, iter_index: int) -> dict | None:
        path = self._iteration_path(batch_index, iter_index)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def iteration_dicts(self) -> list[dict]:
        if not self._iterations_dir.is_dir():
            return []
        return [
            json.loads(p.read_text(encoding="utf-8"))
            for p in sorted(self._iterations_dir.glob("b*_i*.json"))
        ]
