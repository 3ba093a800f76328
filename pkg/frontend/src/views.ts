/** DOM builders for each console view. Every number shown is copied
 * verbatim from an API payload (String(value)); the console computes no
 * scores and no diffs. */

import { renderChart } from "./chart.js";
import { renderHighlights, type HighlightSpan } from "./highlight.js";
import type {
  DiffEntry,
  Discrepancy,
  GuidelineVersion,
  IterationDetail,
  IterationDocument,
  IterationSummary,
  Lineage,
  Report,
  Revision,
  RevisionEdit,
  RunDetail,
  RunListEntry,
} from "./types.js";

const MODE_LABELS: Record<string, string> = {
  strict: "Strict Match",
  strict_no_category: "Strict Match (w/o Category)",
  soft: "Soft Match",
  soft_no_category: "Soft Match (w/o Category)",
};

const MODE_ORDER = ["strict", "strict_no_category", "soft", "soft_no_category"];

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function statusBadge(doc: Document, status: string): HTMLElement {
  const badge = el(doc, "span", `badge status-${status.toLowerCase()}`, status);
  badge.dataset.status = status;
  return badge;
}

export function renderRunList(
  doc: Document,
  runs: RunListEntry[],
  onOpen: (runId: string) => void
): HTMLElement {
  const root = el(doc, "section", "run-list");
  root.appendChild(el(doc, "h1", undefined, "Runs"));
  if (runs.length === 0) {
    root.appendChild(el(doc, "p", "empty", "No runs in the store yet."));
    return root;
  }
  const table = el(doc, "table", "runs");
  const head = el(doc, "tr");
  for (const title of ["Run", "Status", "Iterations", "Gate trajectory"]) {
    head.appendChild(el(doc, "th", undefined, title));
  }
  table.appendChild(head);
  for (const run of runs) {
    const row = el(doc, "tr", "run-row");
    const link = el(doc, "a", undefined, run.run_id);
    link.setAttribute("href", `#/runs/${encodeURIComponent(run.run_id)}`);
    link.addEventListener("click", (event) => {
      event.preventDefault();
      onOpen(run.run_id);
    });
    const cell = el(doc, "td");
    cell.appendChild(link);
    row.appendChild(cell);
    const status = el(doc, "td");
    status.appendChild(statusBadge(doc, run.status));
    row.appendChild(status);
    row.appendChild(el(doc, "td", undefined, String(run.iterations)));
    row.appendChild(
      el(doc, "td", "trajectory", run.gate_trajectory.map(String).join(" → "))
    );
    table.appendChild(row);
  }
  root.appendChild(table);
  return root;
}

export function renderIterationTable(
  doc: Document,
  iterations: IterationSummary[],
  onOpen: (index: number) => void
): HTMLElement {
  const table = el(doc, "table", "iterations");
  const head = el(doc, "tr");
  for (const title of ["#", "Batch", "Iteration", "Gate", "Discrepancies", "Moderated", "Review"]) {
    head.appendChild(el(doc, "th", undefined, title));
  }
  table.appendChild(head);
  iterations.forEach((it, index) => {
    const row = el(doc, "tr", "iteration-row");
    const link = el(doc, "a", undefined, String(index));
    link.setAttribute("href", "#");
    link.addEventListener("click", (event) => {
      event.preventDefault();
      onOpen(index);
    });
    const first = el(doc, "td");
    first.appendChild(link);
    row.appendChild(first);
    row.appendChild(el(doc, "td", undefined, String(it.batch_index)));
    row.appendChild(el(doc, "td", undefined, String(it.iteration_index)));
    const gate = el(doc, "td", "gate-value", String(it.gate_value));
    gate.dataset.gate = String(it.gate_value);
    row.appendChild(gate);
    row.appendChild(el(doc, "td", undefined, String(it.n_discrepancies)));
    row.appendChild(el(doc, "td", undefined, it.has_report ? "yes" : "no"));
    row.appendChild(el(doc, "td", undefined, it.review_decision ?? "—"));
    table.appendChild(row);
  });
  return table;
}

export function renderRunSummary(
  doc: Document,
  run: RunDetail,
  onOpenIteration: (index: number) => void
): HTMLElement {
  const root = el(doc, "section", "run-summary");
  const heading = el(doc, "h1", undefined, `Run ${run.run_id} `);
  heading.appendChild(statusBadge(doc, run.status));
  root.appendChild(heading);
  root.appendChild(renderChart(doc, run.gate_trajectory, run.gate_threshold));
  root.appendChild(renderIterationTable(doc, run.iterations, onOpenIteration));
  return root;
}

function annotationSpans(document_: IterationDocument): HighlightSpan[] {
  const spans: HighlightSpan[] = [];
  for (const a of document_.gold) {
    spans.push({ start: a.start, end: a.end, layer: "gold", category: a.category });
  }
  for (const a of document_.predicted) {
    spans.push({ start: a.start, end: a.end, layer: "predicted", category: a.category });
  }
  return spans;
}

function renderPrfMatrix(doc: Document, document_: IterationDocument): HTMLElement {
  const table = el(doc, "table", "prf-matrix");
  const head = el(doc, "tr");
  for (const title of ["Criterion", "P", "R", "F1", "matched", "pred", "gold"]) {
    head.appendChild(el(doc, "th", undefined, title));
  }
  table.appendChild(head);
  for (const key of MODE_ORDER) {
    const cells = document_.prf[key];
    if (!cells) continue;
    const row = el(doc, "tr");
    row.appendChild(el(doc, "td", undefined, MODE_LABELS[key] ?? key));
    row.appendChild(el(doc, "td", undefined, String(cells.precision)));
    row.appendChild(el(doc, "td", undefined, String(cells.recall)));
    row.appendChild(el(doc, "td", undefined, String(cells.f1)));
    row.appendChild(el(doc, "td", undefined, String(cells.matched_pred)));
    row.appendChild(el(doc, "td", undefined, String(cells.n_pred)));
    row.appendChild(el(doc, "td", undefined, String(cells.n_gold)));
    table.appendChild(row);
  }
  return table;
}

function describeAnnotation(a: { mention: string; start: number; end: number; category: string } | null): string {
  if (!a) return "—";
  return `"${a.mention}" [${a.start}, ${a.end}) ${a.category}`;
}

export function renderDiscrepancyTable(
  doc: Document,
  discrepancies: Discrepancy[]
): HTMLElement {
  const table = el(doc, "table", "discrepancies");
  const head = el(doc, "tr");
  for (const title of ["Kind", "Document", "Predicted", "Gold", "Context"]) {
    head.appendChild(el(doc, "th", undefined, title));
  }
  table.appendChild(head);
  for (const d of discrepancies) {
    const row = el(doc, "tr", `discrepancy kind-${d.kind.toLowerCase()}`);
    row.appendChild(el(doc, "td", undefined, d.kind));
    row.appendChild(el(doc, "td", undefined, d.doc_id));
    row.appendChild(el(doc, "td", undefined, describeAnnotation(d.predicted)));
    row.appendChild(el(doc, "td", undefined, describeAnnotation(d.gold)));
    row.appendChild(el(doc, "td", "context", `…${d.context}…`));
    table.appendChild(row);
  }
  return table;
}

export function renderIterationDetail(
  doc: Document,
  detail: IterationDetail
): HTMLElement {
  const root = el(doc, "section", "iteration-detail");
  const heading = el(
    doc,
    "h2",
    undefined,
    `Batch ${detail.batch_index}, iteration ${detail.iteration_index}: gate `
  );
  const gate = el(doc, "span", "gate-value", String(detail.gate_value));
  gate.dataset.gate = String(detail.gate_value);
  heading.appendChild(gate);
  root.appendChild(heading);
  root.appendChild(
    el(doc, "p", "guideline-ref", `Guideline version: ${detail.guideline_version}`)
  );

  for (const document_ of detail.documents) {
    const panel = el(doc, "article", "document-panel");
    panel.dataset.docId = document_.doc_id;
    panel.appendChild(el(doc, "h3", undefined, `Document ${document_.doc_id}`));
    const legend = el(doc, "p", "legend");
    legend.appendChild(el(doc, "mark", "span gold", "gold"));
    legend.appendChild(doc.createTextNode(" "));
    legend.appendChild(el(doc, "mark", "span predicted", "predicted"));
    legend.appendChild(doc.createTextNode(" "));
    legend.appendChild(el(doc, "mark", "span gold predicted both", "both"));
    panel.appendChild(legend);
    panel.appendChild(
      renderHighlights(doc, document_.text, annotationSpans(document_))
    );
    panel.appendChild(renderPrfMatrix(doc, document_));
    if (document_.warnings.length > 0) {
      const warnings = el(doc, "ul", "warnings");
      for (const [raw, reason] of document_.warnings) {
        warnings.appendChild(el(doc, "li", undefined, `${reason}: ${raw}`));
      }
      panel.appendChild(warnings);
    }
    root.appendChild(panel);
  }

  root.appendChild(el(doc, "h3", undefined, "Discrepancies"));
  root.appendChild(renderDiscrepancyTable(doc, detail.discrepancies));
  return root;
}

export function renderReport(doc: Document, report: Report): HTMLElement {
  const root = el(doc, "section", "report");
  root.appendChild(el(doc, "h2", undefined, "Moderation report"));
  const table = el(doc, "table", "report-items");
  const head = el(doc, "tr");
  for (const title of ["Discrepancy", "Cause", "Factor", "Solution"]) {
    head.appendChild(el(doc, "th", undefined, title));
  }
  table.appendChild(head);
  for (const item of report.items) {
    const row = el(doc, "tr", "report-item");
    row.appendChild(
      el(
        doc,
        "td",
        undefined,
        `[${item.discrepancy.kind}] ${describeAnnotation(
          item.discrepancy.gold ?? item.discrepancy.predicted
        )}`
      )
    );
    row.appendChild(el(doc, "td", undefined, item.cause));
    row.appendChild(el(doc, "td", "factor", item.factor));
    row.appendChild(el(doc, "td", undefined, item.solution));
    table.appendChild(row);
  }
  root.appendChild(table);

  const distribution = el(doc, "ul", "factor-distribution");
  for (const [factor, share] of Object.entries(report.factor_distribution)) {
    if (share === 0) continue;
    const item = el(doc, "li");
    item.appendChild(el(doc, "span", "factor", factor));
    item.appendChild(el(doc, "span", "share", String(share)));
    distribution.appendChild(item);
  }
  root.appendChild(distribution);
  return root;
}

export function renderLineage(
  doc: Document,
  lineage: Lineage,
  appliedVersions: (string | null)[]
): HTMLElement {
  const root = el(doc, "section", "lineage");
  root.appendChild(el(doc, "h2", undefined, "Guideline lineage"));
  const list = el(doc, "ol", "versions");
  for (const version of lineage.lineage) {
    const item = el(doc, "li", "version", version);
    item.dataset.versionId = version;
    if (version === lineage.current) {
      item.classList.add("current");
      item.appendChild(el(doc, "span", "marker", " (current)"));
    }
    if (appliedVersions.includes(version)) {
      item.classList.add("from-review");
    }
    list.appendChild(item);
  }
  root.appendChild(list);
  return root;
}

export interface ReviewCallbacks {
  onApprove: () => void;
  onReject: () => void;
  onEdit: (revision: Revision) => void;
}

function editSummary(edit: RevisionEdit): string {
  if (edit.op === "add_section") return `add_section: ${edit.heading ?? ""}`;
  return `${edit.op}: ${edit.section_id ?? ""}`;
}

/** The revision editor: the proposed edits as editable fields plus the
 * per-section diff entries the API computed. Section ids are validated
 * client-side against the embedded section list before posting. */
export function renderRevisionEditor(
  doc: Document,
  revision: Revision,
  guideline: GuidelineVersion,
  diffEntries: DiffEntry[] | null,
  callbacks: ReviewCallbacks
): HTMLElement {
  const root = el(doc, "section", "revision-editor");
  root.appendChild(el(doc, "h2", undefined, "Proposed revision"));
  root.appendChild(el(doc, "p", "rationale", revision.rationale));

  if (diffEntries) {
    const diffList = el(doc, "ul", "diff-entries");
    for (const entry of diffEntries) {
      const parts = [entry.kind];
      if (entry.body_changed) parts.push("body changed");
      if (entry.examples_added.length > 0) {
        parts.push(`examples +${entry.examples_added.length}`);
      }
      if (entry.examples_changed) parts.push("examples rewritten");
      diffList.appendChild(
        el(doc, "li", `diff-${entry.kind}`, `${entry.section_id}: ${parts.join(", ")}`)
      );
    }
    root.appendChild(diffList);
  }

  const knownIds = new Set(guideline.sections.map((s) => s.section_id));
  const form = el(doc, "div", "edits");
  const fields: { edit: RevisionEdit; input: HTMLTextAreaElement; sectionInput: HTMLInputElement | null }[] = [];
  revision.edits.forEach((edit, index) => {
    const block = el(doc, "fieldset", "edit");
    block.appendChild(el(doc, "legend", undefined, editSummary(edit)));
    let sectionInput: HTMLInputElement | null = null;
    if (edit.op !== "add_section") {
      sectionInput = doc.createElement("input");
      sectionInput.value = edit.section_id ?? "";
      sectionInput.name = `section-${index}`;
      block.appendChild(sectionInput);
    }
    const input = doc.createElement("textarea");
    input.name = `edit-${index}`;
    input.value = edit.op === "append_example" ? edit.text ?? "" : edit.body ?? "";
    block.appendChild(input);
    fields.push({ edit, input, sectionInput });
    form.appendChild(block);
  });
  root.appendChild(form);

  const error = el(doc, "p", "review-error");
  error.setAttribute("role", "alert");
  root.appendChild(error);

  const currentRevision = (): Revision => ({
    rationale: revision.rationale,
    edits: fields.map(({ edit, input, sectionInput }) => {
      const updated: RevisionEdit = { ...edit };
      if (sectionInput) updated.section_id = sectionInput.value.trim();
      if (edit.op === "append_example") updated.text = input.value;
      else updated.body = input.value;
      return updated;
    }),
  });

  const edited = (): boolean =>
    fields.some(({ edit, input, sectionInput }) => {
      const original = edit.op === "append_example" ? edit.text ?? "" : edit.body ?? "";
      if (input.value !== original) return true;
      if (sectionInput && sectionInput.value.trim() !== (edit.section_id ?? "")) return true;
      return false;
    });

  const validate = (candidate: Revision): string | null => {
    for (const edit of candidate.edits) {
      if (edit.op !== "add_section" && !knownIds.has(edit.section_id ?? "")) {
        return `unknown section id: ${edit.section_id}`;
      }
      if (edit.op === "add_section" && !(edit.heading ?? "").trim()) {
        return "add_section needs a heading";
      }
    }
    return null;
  };

  const buttons = el(doc, "div", "review-actions");
  const approve = el(doc, "button", "approve", "Approve");
  approve.addEventListener("click", () => {
    error.textContent = "";
    if (edited()) {
      const candidate = currentRevision();
      const problem = validate(candidate);
      if (problem) {
        error.textContent = problem;
        return;
      }
      callbacks.onEdit(candidate);
    } else {
      callbacks.onApprove();
    }
  });
  const reject = el(doc, "button", "reject", "Reject");
  reject.addEventListener("click", () => {
    error.textContent = "";
    callbacks.onReject();
  });
  buttons.appendChild(approve);
  buttons.appendChild(reject);
  root.appendChild(buttons);
  return root;
}

export function showReviewError(root: HTMLElement, message: string): void {
  const error = root.querySelector<HTMLElement>(".review-error");
  if (error) error.textContent = message;
}
