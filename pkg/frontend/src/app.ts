/** Controller: hash routing, status polling, one in-flight mutation at a
 * time, full re-fetch after every mutation (optimistic-free). */

import { ApiClient, ApiError } from "./api.js";
import type { Revision, RunDetail } from "./types.js";
import {
  renderIterationDetail,
  renderLineage,
  renderReport,
  renderRevisionEditor,
  renderRunList,
  renderRunSummary,
  showReviewError,
} from "./views.js";

export class ConsoleApp {
  private api: ApiClient;
  private root: HTMLElement;
  private doc: Document;
  private pollAbort: { stop: boolean } | null = null;
  private mutationInFlight = false;

  constructor(root: HTMLElement, api?: ApiClient) {
    this.root = root;
    this.doc = root.ownerDocument;
    this.api = api ?? new ApiClient();
  }

  start(): void {
    const win = this.doc.defaultView;
    if (win) {
      win.addEventListener("hashchange", () => void this.route());
    }
    void this.route();
  }

  stop(): void {
    this.stopPolling();
  }

  async route(): Promise<void> {
    this.stopPolling();
    const hash = this.doc.defaultView?.location.hash ?? "";
    const iteration = hash.match(/^#\/runs\/([^/]+)\/iterations\/(\d+)$/);
    const run = hash.match(/^#\/runs\/([^/]+)$/);
    try {
      if (iteration) {
        await this.showIteration(decodeURIComponent(iteration[1]), Number(iteration[2]));
      } else if (run) {
        await this.showRun(decodeURIComponent(run[1]));
      } else {
        await this.showRunList();
      }
    } catch (error) {
      this.renderError(error);
    }
  }

  private renderError(error: unknown): void {
    this.root.textContent = "";
    const message = error instanceof Error ? error.message : String(error);
    const panel = this.doc.createElement("p");
    panel.className = "load-error";
    panel.textContent = message;
    this.root.appendChild(panel);
  }

  private stopPolling(): void {
    if (this.pollAbort) this.pollAbort.stop = true;
    this.pollAbort = null;
  }

  async showRunList(): Promise<void> {
    const runs = await this.api.listRuns();
    this.root.textContent = "";
    this.root.appendChild(
      renderRunList(this.doc, runs, (runId) => this.navigate(`#/runs/${encodeURIComponent(runId)}`))
    );
  }

  navigate(hash: string): void {
    const win = this.doc.defaultView;
    if (win) win.location.hash = hash;
  }

  async showRun(runId: string): Promise<void> {
    const run = await this.api.getRun(runId);
    await this.renderRun(run);
    this.pollStatus(runId);
  }

  /** Re-fetch and re-render when the status fingerprint changes. */
  private pollStatus(runId: string): void {
    const control = { stop: false };
    this.pollAbort = control;
    const loop = async (): Promise<void> => {
      let etag: string | undefined;
      while (!control.stop) {
        try {
          const status = await this.api.getStatus(runId, 20, etag);
          if (control.stop) return;
          if (etag !== undefined && status.etag !== etag) {
            const run = await this.api.getRun(runId);
            if (control.stop) return;
            await this.renderRun(run);
          }
          etag = status.etag;
        } catch {
          await new Promise((resolve) => setTimeout(resolve, 1000));
        }
      }
    };
    void loop();
  }

  /** Build the whole run view detached, then swap it in atomically, so
   * overlapping refreshes never interleave partial renders. */
  private async renderRun(run: RunDetail): Promise<void> {
    const container = this.doc.createElement("div");
    container.appendChild(
      renderRunSummary(this.doc, run, (index) =>
        this.navigate(`#/runs/${encodeURIComponent(run.run_id)}/iterations/${index}`)
      )
    );

    const lineage = await this.api.getLineage(run.run_id);
    container.appendChild(
      renderLineage(
        this.doc,
        lineage,
        run.iterations.map((it) => it.applied_revision_version)
      )
    );

    if (run.status === "AwaitingReview") {
      await this.renderReviewPanel(container, run);
    }
    this.root.textContent = "";
    while (container.firstChild) this.root.appendChild(container.firstChild);
  }

  private async renderReviewPanel(container: HTMLElement, run: RunDetail): Promise<void> {
    const pendingIndex = run.iterations.findIndex(
      (it) => it.has_report && it.review_decision === null
    );
    if (pendingIndex < 0) return;
    const pending = run.iterations[pendingIndex];
    const report = await this.api.getReport(run.run_id, pendingIndex);
    const guideline = await this.api.getGuideline(run.run_id, pending.guideline_version);

    container.appendChild(renderReport(this.doc, report));

    const submit = async (request: Parameters<ApiClient["postReview"]>[1], editor: HTMLElement) => {
      if (this.mutationInFlight) return;
      this.mutationInFlight = true;
      try {
        await this.api.postReview(run.run_id, request);
        const refreshed = await this.api.getRun(run.run_id);
        await this.renderRun(refreshed);
      } catch (error) {
        // Surface 409/400 inline; the user's edits stay in the form.
        const message =
          error instanceof ApiError ? `${error.status}: ${error.detail}` : String(error);
        showReviewError(editor, message);
      } finally {
        this.mutationInFlight = false;
      }
    };

    const editor = renderRevisionEditor(
      this.doc,
      report.proposed_revision,
      guideline,
      null,
      {
        onApprove: () => void submit({ action: "approve", iteration: pendingIndex }, editor),
        onReject: () => void submit({ action: "reject", iteration: pendingIndex }, editor),
        onEdit: (revision: Revision) =>
          void submit({ action: "edit", iteration: pendingIndex, revision }, editor),
      }
    );
    container.appendChild(editor);
  }

  async showIteration(runId: string, index: number): Promise<void> {
    const detail = await this.api.getIteration(runId, index);
    this.root.textContent = "";
    const back = this.doc.createElement("a");
    back.href = `#/runs/${encodeURIComponent(runId)}`;
    back.textContent = `← run ${runId}`;
    back.className = "back-link";
    this.root.appendChild(back);
    this.root.appendChild(renderIterationDetail(this.doc, detail));
    if (detail.has_report) {
      const report = await this.api.getReport(runId, index);
      this.root.appendChild(renderReport(this.doc, report));
    }
  }
}

export function mount(rootId = "app", api?: ApiClient): ConsoleApp {
  const root = document.getElementById(rootId);
  if (!root) throw new Error(`no #${rootId} element to mount on`);
  const app = new ConsoleApp(root, api);
  app.start();
  return app;
}
