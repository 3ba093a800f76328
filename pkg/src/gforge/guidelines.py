"""Immutable, versioned annotation-guideline documents.

A guideline is an ordered list of sections parsed from plain text where a
``#``-prefixed line starts a section. Lines beginning with ``Example: ``
inside a section are edge-case examples; everything else is body text.
Revisions (replace a body, append an example, add a section) produce a
new version whose id hashes both the rendered text and the parent id, so
lineage is tamper-evident and even a content-neutral edit mints a fresh
version. A directory-backed store keeps one file per version plus a
lineage index and verifies the hash on every load.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union


class GuidelineError(Exception):
    """Base class for guideline parsing, revision, and storage failures."""


class DuplicateHeading(GuidelineError):
    """Two headings slugify to the same section id."""


class UnknownSection(GuidelineError):
    """An edit references a section id absent from the target version."""


class EmptyRevision(GuidelineError):
    """A revision carries no edits."""


class InvalidEdit(GuidelineError):
    """Edit content would not survive the render/parse round trip."""


class StoreIntegrityError(GuidelineError):
    """A stored version fails content-hash verification."""


_EXAMPLE_PREFIX = "Example: "
_INTRO_HEADING = "Introduction"


def slugify(heading: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", heading.lower()).strip("-")
    return slug or "section"


@dataclass(frozen=True)
class Section:
    section_id: str
    heading: str
    body: str
    examples: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReplaceBody:
    section_id: str
    body: str


@dataclass(frozen=True)
class AppendExample:
    section_id: str
    text: str


@dataclass(frozen=True)
class AddSection:
    heading: str
    body: str


Edit = Union[ReplaceBody, AppendExample, AddSection]


@dataclass(frozen=True)
class Revision:
    """An ordered edit batch with its rationale and author."""

    edits: tuple[Edit, ...]
    rationale: str
    author: str  # "llm" or "human"
    source_report: str | None = None


@dataclass(frozen=True)
class GuidelineDoc:
    version_id: str
    parent_version: str | None
    sections: tuple[Section, ...]

    def section(self, section_id: str) -> Section:
        for s in self.sections:
            if s.section_id == section_id:
                return s
        raise UnknownSection(f"no section {section_id!r} in version {self.version_id}")

    @property
    def section_ids(self) -> tuple[str, ...]:
        return tuple(s.section_id for s in self.sections)


def compute_version_id(parent_version: str | None, rendered: str) -> str:
    h = hashlib.sha256()
    h.update((parent_version or "").encode("utf-8"))
    h.update(b"\x00")
    h.update(rendered.encode("utf-8"))
    return h.hexdigest()


def _render_sections(sections: Iterable[Section]) -> str:
    blocks = []
    for s in sections:
        lines = [f"# {s.heading}"]
        if s.body:
            lines.extend(s.body.split("\n"))
        lines.extend(f"{_EXAMPLE_PREFIX}{e}" for e in s.examples)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def render(doc: GuidelineDoc) -> str:
    """Canonical text of a document, suitable for prompt embedding."""
    return _render_sections(doc.sections)


def _make_doc(sections: list[Section], parent_version: str | None) -> GuidelineDoc:
    version_id = compute_version_id(parent_version, _render_sections(sections))
    return GuidelineDoc(
        version_id=version_id,
        parent_version=parent_version,
        sections=tuple(sections),
    )


def _build_section(heading: str, raw_lines: list[str]) -> tuple[str, str, tuple[str, ...]]:
    examples = [
        line[len(_EXAMPLE_PREFIX):]
        for line in raw_lines
        if line.startswith(_EXAMPLE_PREFIX)
    ]
    body_lines = [line for line in raw_lines if not line.startswith(_EXAMPLE_PREFIX)]
    while body_lines and not body_lines[0].strip():
        body_lines.pop(0)
    while body_lines and not body_lines[-1].strip():
        body_lines.pop()
    return heading, "\n".join(body_lines), tuple(examples)


def parse_guideline(text: str) -> GuidelineDoc:
    """Parse guideline text into sections.

    Content before the first heading becomes a synthetic Introduction
    section; completely empty input yields a single empty Introduction.
    """
    lines = [line.rstrip("\r") for line in text.splitlines()]
    pending: list[tuple[str, list[str]]] = []
    current_heading: str | None = None
    current_lines: list[str] = []
    for line in lines:
        if line.startswith("#"):
            if current_heading is not None or any(x.strip() for x in current_lines):
                pending.append((current_heading or _INTRO_HEADING, current_lines))
            current_heading = line.lstrip("#").strip()
            current_lines = []
        else:
            current_lines.append(line)
    if current_heading is not None or any(x.strip() for x in current_lines) or not pending:
        pending.append((current_heading or _INTRO_HEADING, current_lines))

    sections: list[Section] = []
    seen: set[str] = set()
    for heading, raw_lines in pending:
        heading, body, examples = _build_section(heading, raw_lines)
        slug = slugify(heading)
        if slug in seen:
            raise DuplicateHeading(f"headings collide on section id {slug!r}")
        seen.add(slug)
        sections.append(Section(slug, heading, body, examples))
    return _make_doc(sections, parent_version=None)


def _normalize_example(text: str) -> str:
    return " ".join(text.split())


def _check_body(body: str, context: str) -> str:
    for line in body.split("\n"):
        if line.startswith("#"):
            raise InvalidEdit(f"{context}: body line {line!r} would parse as a heading")
        if line.startswith(_EXAMPLE_PREFIX):
            raise InvalidEdit(
                f"{context}: body line {line!r} would parse as an example"
            )
    return body


def apply_revision(doc: GuidelineDoc, rev: Revision) -> GuidelineDoc:
    """Apply edits in order, returning a new immutable version.

    The input document is unchanged; the result's parent is the input's
    version id.
    """
    if not rev.edits:
        raise EmptyRevision("revision has no edits")
    sections = list(doc.sections)

    def index_of(section_id: str) -> int:
        for i, s in enumerate(sections):
            if s.section_id == section_id:
                return i
        raise UnknownSection(
            f"no section {section_id!r} in version {doc.version_id}"
        )

    for edit in rev.edits:
        if isinstance(edit, ReplaceBody):
            i = index_of(edit.section_id)
            body = _check_body(edit.body.strip("\n"), f"ReplaceBody({edit.section_id})")
            old = sections[i]
            sections[i] = Section(old.section_id, old.heading, body, old.examples)
        elif isinstance(edit, AppendExample):
            i = index_of(edit.section_id)
            text = _normalize_example(edit.text)
            if not text:
                raise InvalidEdit(f"AppendExample({edit.section_id}): empty example")
            old = sections[i]
            sections[i] = Section(
                old.section_id, old.heading, old.body, old.examples + (text,)
            )
        elif isinstance(edit, AddSection):
            heading = " ".join(edit.heading.split())
            if not heading:
                raise InvalidEdit("AddSection: empty heading")
            slug = slugify(heading)
            if any(s.section_id == slug for s in sections):
                raise DuplicateHeading(f"section id {slug!r} already exists")
            body = _check_body(edit.body.strip("\n"), f"AddSection({slug})")
            sections.append(Section(slug, heading, body))
        else:
            raise InvalidEdit(f"unsupported edit type {type(edit).__name__}")
    return _make_doc(sections, parent_version=doc.version_id)


@dataclass(frozen=True)
class DiffEntry:
    section_id: str
    kind: str  # "added" | "removed" | "modified" | "reordered"
    body_changed: bool = False
    examples_added: tuple[str, ...] = ()
    examples_changed: bool = False


def diff(old: GuidelineDoc, new: GuidelineDoc) -> list[DiffEntry]:
    """Section-level diff; empty iff the rendered texts are equal."""
    old_by_id = {s.section_id: s for s in old.sections}
    new_by_id = {s.section_id: s for s in new.sections}
    entries: list[DiffEntry] = []
    for s in old.sections:
        if s.section_id not in new_by_id:
            entries.append(DiffEntry(s.section_id, "removed"))
    for s in new.sections:
        if s.section_id not in old_by_id:
            entries.append(DiffEntry(s.section_id, "added"))
            continue
        o = old_by_id[s.section_id]
        body_changed = (o.body != s.body) or (o.heading != s.heading)
        examples_added: tuple[str, ...] = ()
        examples_changed = False
        if o.examples != s.examples:
            if s.examples[: len(o.examples)] == o.examples:
                examples_added = s.examples[len(o.examples):]
            else:
                examples_changed = True
        if body_changed or examples_added or examples_changed:
            entries.append(
                DiffEntry(
                    s.section_id,
                    "modified",
                    body_changed=body_changed,
                    examples_added=examples_added,
                    examples_changed=examples_changed,
                )
            )
    common_old = [s.section_id for s in old.sections if s.section_id in new_by_id]
    common_new = [s.section_id for s in new.sections if s.section_id in old_by_id]
    if common_old != common_new:
        entries.append(DiffEntry("", "reordered"))
    return entries


class VersionStore:
    """One rendered-text file per version plus a lineage index.

    Files are written atomically and never mutated; re-putting an existing
    version verifies that content and parent are identical. Loads verify
    the content hash against the version id.
    """

    def __init__(self, root: str | Path, on_write=None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "lineage.json"
        self._lock = threading.Lock()
        self._on_write = on_write

    def _version_path(self, version_id: str) -> Path:
        return self.root / f"{version_id}.txt"

    def _read_index(self) -> dict[str, str | None]:
        if not self._index_path.exists():
            return {}
        return json.loads(self._index_path.read_text(encoding="utf-8"))

    def _write_atomic(self, path: Path, data: str) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(data, encoding="utf-8")
        tmp.replace(path)
        if self._on_write is not None:
            self._on_write()

    def put(self, doc: GuidelineDoc) -> None:
        rendered = render(doc)
        with self._lock:
            path = self._version_path(doc.version_id)
            index = self._read_index()
            if path.exists():
                if path.read_text(encoding="utf-8") != rendered:
                    raise StoreIntegrityError(
                        f"version {doc.version_id} already stored with different content"
                    )
                if index.get(doc.version_id, doc.parent_version) != doc.parent_version:
                    raise StoreIntegrityError(
                        f"version {doc.version_id} already stored with different parent"
                    )
            else:
                self._write_atomic(path, rendered)
            if doc.version_id not in index or index[doc.version_id] != doc.parent_version:
                index[doc.version_id] = doc.parent_version
                self._write_atomic(
                    self._index_path, json.dumps(index, indent=2, sort_keys=True)
                )

    def exists(self, version_id: str) -> bool:
        return self._version_path(version_id).exists()

    def get(self, version_id: str) -> GuidelineDoc:
        path = self._version_path(version_id)
        if not path.exists():
            raise KeyError(version_id)
        rendered = path.read_text(encoding="utf-8")
        parent = self._read_index().get(version_id)
        if compute_version_id(parent, rendered) != version_id:
            raise StoreIntegrityError(
                f"stored content for {version_id} fails hash verification"
            )
        parsed = parse_guideline(rendered)
        return GuidelineDoc(
            version_id=version_id, parent_version=parent, sections=parsed.sections
        )

    def lineage(self, version_id: str) -> list[str]:
        """Version ids from ``version_id`` back to the root, inclusive."""
        index = self._read_index()
        chain = [version_id]
        seen = {version_id}
        current = index.get(version_id)
        while current is not None:
            if current in seen:
                raise StoreIntegrityError("lineage contains a cycle")
            chain.append(current)
            seen.add(current)
            current = index.get(current)
        return chain

    def versions(self) -> list[str]:
        return sorted(self._read_index())
