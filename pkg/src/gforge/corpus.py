"""PubTator corpus model: documents, gold annotations, parsing, sampling.

Offsets are Unicode scalar indices into ``Document.text``, which is the
title and abstract joined by a single space. The NCBI Disease
distribution is ASCII, so byte and character offsets coincide there, but
the character-offset contract is the one enforced here.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class CorpusError(Exception):
    """Base class for corpus parsing and sampling failures."""


class MalformedLine(CorpusError):
    """A line does not follow the PubTator field layout."""


class OffsetMismatch(CorpusError):
    """An annotation's offsets do not select its mention text."""


class UnknownCategory(CorpusError):
    """An annotation carries a label outside the four-category set."""


class DuplicateDocument(CorpusError):
    """The same document id appears more than once."""


class BatchOutOfRange(CorpusError):
    """The requested batch index lies beyond the corpus."""


class Category(Enum):
    """The four disease-mention categories of the NCBI Disease scheme."""

    SPECIFIC_DISEASE = "SpecificDisease"
    DISEASE_CLASS = "DiseaseClass"
    MODIFIER = "Modifier"
    COMPOSITE_MENTION = "CompositeMention"

    @classmethod
    def parse(cls, label: str) -> "Category":
        """Map a corpus label to a Category; labels are case-sensitive."""
        try:
            return cls(label)
        except ValueError:
            raise UnknownCategory(f"unknown category label {label!r}") from None


@dataclass(frozen=True)
class Document:
    """One PubMed abstract. ``text`` is the offset reference frame."""

    doc_id: str
    title: str
    abstract: str

    @property
    def text(self) -> str:
        return f"{self.title} {self.abstract}"


@dataclass(frozen=True)
class Annotation:
    """A character span over ``Document.text`` plus its category.

    ``concept_id`` is an opaque MeSH/OMIM code (possibly a composite such
    as ``D010051|D016889``); it is preserved verbatim and never resolved.
    """

    doc_id: str
    start: int
    end: int
    mention: str
    category: Category
    concept_id: str | None = None

    def sort_key(self) -> tuple:
        return (self.start, self.end, self.category.value, self.mention)

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class Corpus:
    """Documents plus gold annotations keyed by document id."""

    documents: list[Document] = field(default_factory=list)
    gold: dict[str, list[Annotation]] = field(default_factory=dict)

    def document(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)

    @property
    def n_documents(self) -> int:
        return len(self.documents)

    @property
    def n_annotations(self) -> int:
        return sum(len(anns) for anns in self.gold.values())


def parse_pubtator(stream: str) -> Corpus:
    """Parse PubTator text into a validated Corpus.

    Expected per document: ``PMID|t|<title>``, ``PMID|a|<abstract>``, then
    zero or more tab-separated annotation lines, with documents separated
    by blank lines. Annotation offsets are checked against the document
    text; any violation is raised, never repaired.
    """
    corpus = Corpus()
    for first_lineno, block in _split_blocks(stream):
        doc, annotations = _parse_block(first_lineno, block)
        if any(d.doc_id == doc.doc_id for d in corpus.documents):
            raise DuplicateDocument(
                f"line {first_lineno}: document {doc.doc_id} appears more than once"
            )
        corpus.documents.append(doc)
        corpus.gold[doc.doc_id] = sorted(annotations, key=Annotation.sort_key)
    return corpus


def _split_blocks(stream: str) -> Iterable[tuple[int, list[tuple[int, str]]]]:
    """Yield (first line number, [(lineno, line), ...]) per document block."""
    block: list[tuple[int, str]] = []
    for lineno, raw in enumerate(stream.splitlines(), start=1):
        line = raw.rstrip("\r")
        if lineno == 1:
            line = line.lstrip("﻿")
        if line.strip():
            block.append((lineno, line))
        elif block:
            yield block[0][0], block
            block = []
    if block:
        yield block[0][0], block


def _parse_text_line(lineno: int, line: str, marker: str) -> tuple[str, str]:
    parts = line.split("|", 2)
    if len(parts) != 3 or parts[1] != marker:
        raise MalformedLine(
            f"line {lineno}: expected 'PMID|{marker}|...' line, got {line!r}"
        )
    if not parts[0]:
        raise MalformedLine(f"line {lineno}: empty document id")
    return parts[0], parts[2]


def _parse_block(
    first_lineno: int, block: list[tuple[int, str]]
) -> tuple[Document, list[Annotation]]:
    if len(block) < 2:
        raise MalformedLine(
            f"line {first_lineno}: document block needs a title and an abstract line"
        )
    doc_id, title = _parse_text_line(*block[0], marker="t")
    abstract_id, abstract = _parse_text_line(*block[1], marker="a")
    if abstract_id != doc_id:
        raise MalformedLine(
            f"line {block[1][0]}: abstract id {abstract_id} does not match {doc_id}"
        )
    doc = Document(doc_id=doc_id, title=title, abstract=abstract)
    annotations = [_parse_annotation(lineno, line, doc) for lineno, line in block[2:]]
    return doc, annotations


def _parse_annotation(lineno: int, line: str, doc: Document) -> Annotation:
    fields = line.split("\t")
    if len(fields) not in (5, 6):
        raise MalformedLine(
            f"line {lineno}: expected 5 or 6 tab-separated fields, got {len(fields)}"
        )
    if fields[0] != doc.doc_id:
        raise MalformedLine(
            f"line {lineno}: annotation id {fields[0]} does not match document {doc.doc_id}"
        )
    try:
        start, end = int(fields[1]), int(fields[2])
    except ValueError:
        raise MalformedLine(
            f"line {lineno}: offsets {fields[1]!r}/{fields[2]!r} are not integers"
        ) from None
    mention = fields[3]
    category = Category.parse(fields[4])
    concept_id = fields[5] if len(fields) == 6 and fields[5] != "" else None
    text = doc.text
    if not (0 <= start < end <= len(text)):
        raise OffsetMismatch(
            f"doc {doc.doc_id}, line {lineno}: span ({start}, {end}) out of range "
            f"for text of length {len(text)}"
        )
    if text[start:end] != mention:
        raise OffsetMismatch(
            f"doc {doc.doc_id}, line {lineno}: text slice {text[start:end]!r} "
            f"does not equal mention {mention!r}"
        )
    return Annotation(
        doc_id=doc.doc_id,
        start=start,
        end=end,
        mention=mention,
        category=category,
        concept_id=concept_id,
    )


def serialize_pubtator(corpus: Corpus) -> str:
    """Render a Corpus back to canonical PubTator text.

    Annotation lines are emitted in (start, end, category) order, so
    parse -> serialize -> parse is the identity on parsed structure.
    """
    blocks = []
    for doc in corpus.documents:
        lines = [f"{doc.doc_id}|t|{doc.title}", f"{doc.doc_id}|a|{doc.abstract}"]
        for ann in sorted(corpus.gold.get(doc.doc_id, []), key=Annotation.sort_key):
            fields = [
                ann.doc_id,
                str(ann.start),
                str(ann.end),
                ann.mention,
                ann.category.value,
            ]
            if ann.concept_id is not None:
                fields.append(ann.concept_id)
            lines.append("\t".join(fields))
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def load_corpus(paths: Sequence[str | Path]) -> Corpus:
    """Parse and merge one or more PubTator files into a single Corpus."""
    merged = Corpus()
    for path in paths:
        part = parse_pubtator(Path(path).read_text(encoding="utf-8"))
        for doc in part.documents:
            if any(d.doc_id == doc.doc_id for d in merged.documents):
                raise DuplicateDocument(
                    f"{path}: document {doc.doc_id} already loaded from another file"
                )
            merged.documents.append(doc)
            merged.gold[doc.doc_id] = part.gold[doc.doc_id]
    return merged


def batch_count(corpus: Corpus, k: int) -> int:
    if k < 1:
        raise ValueError("batch size must be >= 1")
    return math.ceil(len(corpus.documents) / k)


def sample_batch(corpus: Corpus, k: int, seed: int, offset: int) -> list[Document]:
    """Return batch ``offset`` of a seeded random partition of the corpus.

    Documents are shuffled once by the seeded permutation and cut into
    consecutive batches of ``k``; the last batch may be short. The result
    is deterministic for a fixed (corpus, k, seed).
    """
    if k < 1:
        raise ValueError("batch size must be >= 1")
    order = list(range(len(corpus.documents)))
    random.Random(seed).shuffle(order)
    lo = offset * k
    if offset < 0 or lo >= len(order):
        raise BatchOutOfRange(
            f"batch {offset} of size {k} is out of range for {len(order)} documents"
        )
    return [corpus.documents[i] for i in order[lo : lo + k]]
