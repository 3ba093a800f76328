"""Plain-text and CSV renderers for the evaluation tables.

The overall table has one row per method and a P/R/F1 column group per
criterion; the category table has one row per annotation category with
the same column groups. Scores render half-up at two decimals.
"""

from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .corpus import Category
from .metrics import ALL_MODES, PRF, MatchMode

#: Category table rows use the human-readable spaced names.
CATEGORY_DISPLAY = {
    Category.COMPOSITE_MENTION: "Composite Mention",
    Category.DISEASE_CLASS: "Disease Class",
    Category.MODIFIER: "Modifier",
    Category.SPECIFIC_DISEASE: "Specific Disease",
}

#: Row order of the category table.
CATEGORY_ORDER = (
    Category.COMPOSITE_MENTION,
    Category.DISEASE_CLASS,
    Category.MODIFIER,
    Category.SPECIFIC_DISEASE,
)


def format_score(value: float) -> str:
    """Render to two decimals, rounding halves up on the decimal repr."""
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _group_cell(prf: PRF) -> str:
    return (
        f"{format_score(prf.precision):>6} "
        f"{format_score(prf.recall):>6} "
        f"{format_score(prf.f1):>6}"
    )


_GROUP_HEADER = f"{'P':>6} {'R':>6} {'F1':>6}"


def _render_grid(
    row_header: str,
    rows: Sequence[tuple[str, Mapping[MatchMode, PRF]]],
    modes: Sequence[MatchMode] = ALL_MODES,
) -> str:
    label_width = max(len(row_header), *(len(name) for name, _ in rows)) if rows else len(row_header)
    group_widths = [max(len(mode.label), len(_GROUP_HEADER)) for mode in modes]
    header1 = "  ".join(
        [row_header.ljust(label_width)]
        + [mode.label.ljust(w) for mode, w in zip(modes, group_widths)]
    )
    header2 = "  ".join(
        [" " * label_width] + [_GROUP_HEADER.ljust(w) for w in group_widths]
    )
    lines = [header1.rstrip(), header2.rstrip()]
    for name, scores in rows:
        cells = [name.ljust(label_width)] + [
            _group_cell(scores[mode]).ljust(w) for mode, w in zip(modes, group_widths)
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def _render_csv(
    row_header: str,
    rows: Sequence[tuple[str, Mapping[MatchMode, PRF]]],
    modes: Sequence[MatchMode] = ALL_MODES,
) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = [row_header]
    for mode in modes:
        header += [f"{mode.label} P", f"{mode.label} R", f"{mode.label} F1"]
    writer.writerow(header)
    for name, scores in rows:
        row = [name]
        for mode in modes:
            prf = scores[mode]
            row += [
                format_score(prf.precision),
                format_score(prf.recall),
                format_score(prf.f1),
            ]
        writer.writerow(row)
    return buffer.getvalue()


def overall_table(
    rows: Sequence[tuple[str, Mapping[MatchMode, PRF]]], fmt: str = "text"
) -> str:
    """Method rows x four-criteria column groups."""
    if fmt == "csv":
        return _render_csv("Method", rows)
    return _render_grid("Method", rows)


def category_table(
    scores: Mapping[Category, Mapping[MatchMode, PRF]], fmt: str = "text"
) -> str:
    """Category rows x four-criteria column groups."""
    rows = [(CATEGORY_DISPLAY[cat], scores[cat]) for cat in CATEGORY_ORDER]
    if fmt == "csv":
        return _render_csv("Category", rows)
    return _render_grid("Category", rows)
