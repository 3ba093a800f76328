/** Payload shapes of the /api/v1 endpoints the console consumes. */

export interface RunListEntry {
  run_id: string;
  status: string;
  iterations: number;
  gate_trajectory: number[];
}

export interface IterationSummary {
  batch_index: number;
  iteration_index: number;
  guideline_version: string;
  gate_value: number;
  n_discrepancies: number;
  has_report: boolean;
  review_decision: string | null;
  applied_revision_version: string | null;
  partial: boolean;
}

export interface RunDetail {
  run_id: string;
  status: string;
  config: { gate_threshold: number; review_mode: string; [key: string]: unknown };
  gate_threshold: number;
  iterations: IterationSummary[];
  gate_trajectory: number[];
}

export interface StatusPayload {
  run_id: string;
  status: string;
  iterations: number;
  etag: string;
}

export interface ApiAnnotation {
  doc_id: string;
  start: number;
  end: number;
  mention: string;
  category: string;
  concept_id: string | null;
}

export interface PrfCells {
  matched_pred: number;
  matched_gold: number;
  n_pred: number;
  n_gold: number;
  precision: number;
  recall: number;
  f1: number;
}

export interface IterationDocument {
  doc_id: string;
  text: string;
  gold: ApiAnnotation[];
  predicted: ApiAnnotation[];
  prf: Record<string, PrfCells>;
  warnings: [string, string][];
}

export interface Discrepancy {
  kind: string;
  doc_id: string;
  predicted: ApiAnnotation | null;
  gold: ApiAnnotation | null;
  context: string;
}

export interface IterationDetail extends IterationSummary {
  documents: IterationDocument[];
  discrepancies: Discrepancy[];
}

export interface RevisionEdit {
  op: "replace_body" | "append_example" | "add_section";
  section_id?: string;
  body?: string;
  text?: string;
  heading?: string;
}

export interface Revision {
  edits: RevisionEdit[];
  rationale: string;
  author?: string;
  source_report?: string | null;
}

export interface ReportItem {
  discrepancy: Discrepancy;
  cause: string;
  factor: string;
  solution: string;
}

export interface Report {
  items: ReportItem[];
  proposed_revision: Revision;
  exchange_digests: string[];
  factor_distribution: Record<string, number>;
}

export interface GuidelineSection {
  section_id: string;
  heading: string;
  body: string;
  examples: string[];
}

export interface GuidelineVersion {
  version_id: string;
  parent_version: string | null;
  text: string;
  sections: GuidelineSection[];
}

export interface Lineage {
  current: string | null;
  lineage: string[];
  all_versions: string[];
}

export interface DiffEntry {
  section_id: string;
  kind: string;
  body_changed: boolean;
  examples_added: string[];
  examples_changed: boolean;
}

export interface DiffPayload {
  from: string;
  to: string;
  entries: DiffEntry[];
}

export interface ReviewRequest {
  action: "approve" | "edit" | "reject";
  iteration?: number;
  revision?: Revision;
}

export interface ReviewResponse {
  run_id: string;
  status: string;
  review_decision: string;
  applied_revision_version: string | null;
  duplicate: boolean;
}
