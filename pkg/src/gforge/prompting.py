"""Prompt construction and LLM-output parsing.

Prompts are assembled from editable text templates (``templates/`` in the
installed package, overridable per call) using ``$name`` placeholders.
The annotator prompt has three fixed blocks (role, task, output format)
and gains a fourth guidelines block only when a guideline document is
supplied; nothing else differs between the two modes, so baseline and
guideline runs stay comparable.

Annotator output is a JSON list of mention/category objects. Offsets sent
by the model are hints only: every item is re-anchored against the
document text, and items that cannot be anchored are dropped into
warnings instead of failing the run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import TYPE_CHECKING, Sequence

from .corpus import Annotation, Category, Document
from .factors import FACTOR_CLASSES
from .guidelines import (
    AddSection,
    AppendExample,
    GuidelineDoc,
    ReplaceBody,
    Revision,
    render,
)

if TYPE_CHECKING:  # circular at runtime: moderation imports prompting
    from .moderation import Discrepancy, ModerationReport


class PromptingError(Exception):
    """Base class for prompt-construction and output-parsing failures."""


class EmptyDiscrepancies(PromptingError):
    """The analyze prompt needs at least one discrepancy."""


class Unparseable(PromptingError):
    """No JSON payload could be extracted from the model output at all."""


class ModeratorOutputError(PromptingError):
    """Moderator output parsed as JSON but violates the wire schema."""


@dataclass(frozen=True)
class PromptParts:
    """The labeled pieces an annotator prompt is assembled from."""

    role_definition: str
    task_description: str
    format_rules: str
    guidelines: str | None
    payload: str


@dataclass(frozen=True)
class ParsedOutput:
    annotations: tuple[Annotation, ...]
    warnings: tuple[tuple[str, str], ...]  # (raw item, reason)


def _load_template(name: str, template_dir: str | Path | None) -> Template:
    if template_dir is not None:
        text = (Path(template_dir) / name).read_text(encoding="utf-8")
    else:
        text = (
            resources.files("gforge.templates").joinpath(name).read_text("utf-8")
        )
    return Template(text)


def guidelines_block(guideline: GuidelineDoc) -> str:
    """The block inserted into the annotator prompt in guideline mode."""
    return f"## Annotation guidelines\n{render(guideline)}"


def build_annotator_prompt(
    doc: Document,
    guideline: GuidelineDoc | None = None,
    template_dir: str | Path | None = None,
) -> str:
    template = _load_template("annotator.txt", template_dir)
    block = guidelines_block(guideline) if guideline is not None else ""
    return template.substitute(
        guidelines_block=block,
        doc_id=doc.doc_id,
        document_text=doc.text,
    )


def _describe_annotation(ann: Annotation) -> str:
    return f'"{ann.mention}" [{ann.start}, {ann.end}) as {ann.category.value}'


def describe_discrepancy(d: "Discrepancy") -> str:
    if d.kind == "FalsePositive":
        what = f"model annotated {_describe_annotation(d.predicted)}; gold has no matching span"
    elif d.kind == "FalseNegative":
        what = f"gold annotates {_describe_annotation(d.gold)}; model missed it"
    else:
        what = (
            f"span annotated {_describe_annotation(d.predicted)} by the model "
            f"but {_describe_annotation(d.gold)} in gold"
        )
    return f"[{d.kind}] doc {d.doc_id}: {what}\n   context: ...{d.context}..."


def build_moderator_analyze_prompt(
    discrepancies: Sequence["Discrepancy"],
    guideline: GuidelineDoc,
    batch_texts: dict[str, str],
    template_dir: str | Path | None = None,
) -> str:
    if not discrepancies:
        raise EmptyDiscrepancies("cannot analyze an empty discrepancy list")
    template = _load_template("moderator_analyze.txt", template_dir)
    factor_list = "\n".join(f"- {name}" for name in FACTOR_CLASSES)
    documents = "\n".join(
        f"[doc {doc_id}] {text}" for doc_id, text in sorted(batch_texts.items())
    )
    discrepancy_list = "\n".join(
        f"{i}. {describe_discrepancy(d)}" for i, d in enumerate(discrepancies, start=1)
    )
    return template.substitute(
        factor_list=factor_list,
        guideline_text=render(guideline),
        documents=documents,
        discrepancy_list=discrepancy_list,
    )


def revision_schema(template_dir: str | Path | None = None) -> str:
    """The revision wire-schema block embedded in the update prompt."""
    return _load_template("revision_schema.txt", template_dir).template


def render_report_items(report: "ModerationReport") -> str:
    lines = []
    for i, item in enumerate(report.items, start=1):
        lines.append(f"{i}. {describe_discrepancy(item.discrepancy)}")
        lines.append(f"   cause: {item.cause}")
        lines.append(f"   factor: {item.factor}")
        lines.append(f"   solution: {item.solution}")
    return "\n".join(lines)


def build_moderator_update_prompt(
    report: "ModerationReport",
    guideline: GuidelineDoc,
    template_dir: str | Path | None = None,
) -> str:
    template = _load_template("moderator_update.txt", template_dir)
    return template.substitute(
        guideline_text=render(guideline),
        section_ids="\n".join(f"- {sid}" for sid in guideline.section_ids),
        report=render_report_items(report),
        revision_schema=revision_schema(template_dir),
    )


_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)


def _extract_json(raw: str):
    """Pull the first JSON value out of possibly fenced or prose-wrapped text."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(raw)]
    candidates.append(raw)
    for text in candidates:
        text = text.strip()
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            pass
        for opener, closer in (("[", "]"), ("{", "}")):
            start = text.find(opener)
            end = text.rfind(closer)
            if start != -1 and end > start:
                try:
                    return json.loads(text[start : end + 1])
                except json.JSONDecodeError:
                    continue
    raise Unparseable("no JSON payload found in model output")


def parse_annotator_output(raw: str, doc: Document) -> ParsedOutput:
    """Convert annotator output into offset-verified annotations.

    Valid ``start`` fields are honored after verifying the slice; items
    without a usable offset are anchored at the leftmost occurrence of
    their mention not consumed by an earlier item. Items that cannot be
    anchored, carry an unknown category, or duplicate an already-produced
    span are reported as warnings, never raised.
    """
    payload = _extract_json(raw)
    if isinstance(payload, dict) and isinstance(payload.get("annotations"), list):
        items = payload["annotations"]
    elif isinstance(payload, list):
        items = payload
    else:
        raise Unparseable("payload is not a list of annotation items")

    text = doc.text
    annotations: list[Annotation] = []
    warnings: list[tuple[str, str]] = []
    cursor: dict[str, int] = {}
    produced: set[tuple[int, int, Category]] = set()

    for item in items:
        raw_item = json.dumps(item, ensure_ascii=False, sort_keys=True) if not isinstance(item, str) else item
        if not isinstance(item, dict):
            warnings.append((raw_item, "item is not an object"))
            continue
        mention = item.get("mention")
        if not isinstance(mention, str) or not mention:
            warnings.append((raw_item, "missing or empty mention"))
            continue
        label = item.get("category")
        try:
            category = Category.parse(label if isinstance(label, str) else "")
        except Exception:
            warnings.append((raw_item, f"unknown category {label!r}"))
            continue

        start = item.get("start")
        position: int | None = None
        if isinstance(start, int) and not isinstance(start, bool):
            if 0 <= start and text[start : start + len(mention)] == mention:
                position = start
        if position is None:
            position = text.find(mention, cursor.get(mention, 0))
            if position == -1:
                if mention in text:
                    warnings.append(
                        (raw_item, "all occurrences of mention already consumed")
                    )
                else:
                    warnings.append((raw_item, "mention not found in document text"))
                continue
        end = position + len(mention)
        key = (position, end, category)
        if key in produced:
            warnings.append((raw_item, "duplicate of an already-produced span"))
            continue
        produced.add(key)
        cursor[mention] = max(cursor.get(mention, 0), position + 1)
        annotations.append(
            Annotation(
                doc_id=doc.doc_id,
                start=position,
                end=end,
                mention=mention,
                category=category,
            )
        )

    annotations.sort(key=Annotation.sort_key)
    return ParsedOutput(annotations=tuple(annotations), warnings=tuple(warnings))


def parse_moderator_report_output(raw: str, n_items: int) -> list[dict[str, str]]:
    """Extract per-discrepancy (cause, factor, solution) entries.

    Returns exactly ``n_items`` entries aligned by the 1-based ``index``
    field when present, by position otherwise; gaps are filled with empty
    cause/solution and an unclassified factor.
    """
    payload = _extract_json(raw)
    if isinstance(payload, dict):
        items = payload.get("items")
    else:
        items = payload
    if not isinstance(items, list):
        raise ModeratorOutputError("report payload has no 'items' list")

    slots: list[dict[str, str] | None] = [None] * n_items
    unplaced: list[dict[str, str]] = []
    for position, item in enumerate(items):
        if not isinstance(item, dict):
            continue
        entry = {
            "cause": str(item.get("cause", "")),
            "factor": str(item.get("factor", "")),
            "solution": str(item.get("solution", "")),
        }
        index = item.get("index")
        if isinstance(index, int) and 1 <= index <= n_items and slots[index - 1] is None:
            slots[index - 1] = entry
        elif position < n_items and slots[position] is None:
            slots[position] = entry
        else:
            unplaced.append(entry)
    for i in range(n_items):
        if slots[i] is None and unplaced:
            slots[i] = unplaced.pop(0)
        if slots[i] is None:
            slots[i] = {"cause": "", "factor": "", "solution": ""}
    return [slot for slot in slots if slot is not None]


_EDIT_OPS = {"replace_body", "append_example", "add_section"}


def parse_revision_output(
    raw: str, author: str = "llm", source_report: str | None = None
) -> Revision:
    """Parse moderator update output into a Revision."""
    payload = _extract_json(raw)
    if not isinstance(payload, dict):
        raise ModeratorOutputError("revision payload is not an object")
    raw_edits = payload.get("edits")
    if not isinstance(raw_edits, list) or not raw_edits:
        raise ModeratorOutputError("revision payload has no non-empty 'edits' list")
    edits = []
    for item in raw_edits:
        if not isinstance(item, dict):
            raise ModeratorOutputError(f"edit is not an object: {item!r}")
        op = item.get("op")
        if op == "replace_body":
            edits.append(ReplaceBody(str(item.get("section_id", "")), str(item.get("body", ""))))
        elif op == "append_example":
            edits.append(AppendExample(str(item.get("section_id", "")), str(item.get("text", ""))))
        elif op == "add_section":
            edits.append(AddSection(str(item.get("heading", "")), str(item.get("body", ""))))
        else:
            raise ModeratorOutputError(
                f"unknown edit op {op!r}; expected one of {sorted(_EDIT_OPS)}"
            )
    return Revision(
        edits=tuple(edits),
        rationale=str(payload.get("rationale", "")),
        author=author,
        source_report=source_report,
    )
