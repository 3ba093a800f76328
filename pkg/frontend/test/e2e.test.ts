// @vitest-environment jsdom
/** End-to-end: the console against the real service running the scripted
 * hitl replay fixture. Asserts the secondary acceptance criterion:
 * verbatim gate display, exact-offset discrepancy highlighting
 * (including the repeated-mention document), and the approve flow
 * transitioning AwaitingReview -> Running with the revision visible in
 * the lineage view. */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ConsoleApp } from "../src/app.js";
import { sliceByOffsets } from "../src/highlight.js";
import type { ReviewRequest, ReviewResponse } from "../src/types.js";

const HERE = dirname(fileURLToPath(import.meta.url));

let server: ChildProcess;
let base = "";
let runRoot = "";

class RecordingClient extends ApiClient {
  reviewResponses: ReviewResponse[] = [];

  constructor(baseUrl: string) {
    super(baseUrl);
  }

  override async postReview(runId: string, request: ReviewRequest): Promise<ReviewResponse> {
    const response = await super.postReview(runId, request);
    this.reviewResponses.push(response);
    return response;
  }
}

beforeAll(async () => {
  runRoot = mkdtempSync(join(tmpdir(), "gforge-e2e-"));
  server = spawn("python3", [join(HERE, "serve_fixture.py"), "--root", runRoot], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  base = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("service never became ready")), 30_000);
    server.stdout!.on("data", (chunk: Buffer) => {
      const match = chunk.toString().match(/READY (\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(`http://127.0.0.1:${match[1]}`);
      }
    });
    server.on("exit", (code) => reject(new Error(`service exited early (${code})`)));
  });
}, 40_000);

afterAll(() => {
  server?.kill();
  if (runRoot) rmSync(runRoot, { recursive: true, force: true });
});

async function waitFor<T>(probe: () => Promise<T | null>, what: string, ms = 10_000): Promise<T> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    const value = await probe();
    if (value !== null) return value;
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  throw new Error(`timed out waiting for ${what}`);
}

describe("console against the scripted hitl fixture", () => {
  it("renders the iteration-1 gate value exactly as the API reports it", async () => {
    const api = new ApiClient(base);
    const run = await api.getRun("e2e-api");
    expect(run.status).toBe("AwaitingReview");
    const apiGate = run.iterations[0].gate_value;

    const root = document.createElement("main");
    document.body.appendChild(root);
    const app = new ConsoleApp(root, api);
    await app.showIteration("e2e-api", 0);

    const gate = root.querySelector<HTMLElement>(".gate-value");
    expect(gate?.textContent).toBe(String(apiGate));
    expect(gate?.textContent).toBe("0.5"); // the fixture's hand-computed gate
    app.stop();
    root.remove();
  });

  it("highlights every fixture discrepancy span at its exact offsets", async () => {
    const api = new ApiClient(base);
    const detail = await api.getIteration("e2e-api", 0);
    expect(detail.discrepancies.length).toBeGreaterThanOrEqual(3);

    const root = document.createElement("main");
    document.body.appendChild(root);
    const app = new ConsoleApp(root, api);
    await app.showIteration("e2e-api", 0);

    const textByDoc = new Map(detail.documents.map((d) => [d.doc_id, d.text]));
    for (const discrepancy of detail.discrepancies) {
      for (const [layer, ann] of [
        ["predicted", discrepancy.predicted],
        ["gold", discrepancy.gold],
      ] as const) {
        if (!ann) continue;
        // The API's offsets select exactly the mention in the document text.
        expect(sliceByOffsets(textByDoc.get(ann.doc_id)!, ann.start, ann.end)).toBe(
          ann.mention
        );
        // The rendered panel highlights that exact range: the marks tagged
        // with this span concatenate to the mention.
        const panel = root.querySelector(`[data-doc-id="${ann.doc_id}"]`);
        expect(panel, `panel for ${ann.doc_id}`).toBeTruthy();
        const tag = `${layer}:${ann.start}-${ann.end}:${ann.category}`;
        const marks = Array.from(
          panel!.querySelectorAll<HTMLElement>("mark[data-spans]")
        ).filter((m) => (m.dataset.spans ?? "").split(" ").includes(tag));
        const highlighted = marks.map((m) => m.textContent).join("");
        expect(highlighted, `span ${tag}`).toBe(ann.mention);
      }
    }

    // The repeated-mention document: the false negative sits on the
    // second "breast cancer", so the highlight must not land on the
    // first occurrence.
    const fn = detail.discrepancies.find(
      (d) => d.kind === "FalseNegative" && d.doc_id === "1002"
    );
    expect(fn).toBeTruthy();
    const text = textByDoc.get("1002")!;
    const firstOccurrence = text.indexOf(fn!.gold!.mention);
    expect(fn!.gold!.start).toBeGreaterThan(firstOccurrence);
    app.stop();
    root.remove();
  });

  it("approve transitions AwaitingReview -> Running with the revision in the lineage view", async () => {
    const api = new RecordingClient(base);
    const root = document.createElement("main");
    document.body.appendChild(root);
    window.location.hash = "#/runs/e2e-console";
    const app = new ConsoleApp(root, api);
    app.start();

    await waitFor(
      async () =>
        root.querySelector<HTMLElement>(".badge")?.dataset.status === "AwaitingReview"
          ? true
          : null,
      "AwaitingReview badge"
    );
    const lineageBefore = Array.from(
      root.querySelectorAll<HTMLElement>(".lineage li.version")
    ).map((li) => li.dataset.versionId);
    expect(lineageBefore).toHaveLength(1);

    const approve = await waitFor(
      async () => root.querySelector<HTMLButtonElement>("button.approve"),
      "approve button"
    );
    approve.click();

    // The review POST reports the AwaitingReview -> Running transition.
    await waitFor(
      async () => (api.reviewResponses.length > 0 ? true : null),
      "review response"
    );
    expect(api.reviewResponses[0].review_decision).toBe("approve");
    expect(api.reviewResponses[0].status).toBe("Running");
    const applied = api.reviewResponses[0].applied_revision_version!;
    expect(applied).toBeTruthy();

    // The refreshed view reaches the resumed (and here completed) run,
    // with the applied revision visible in the lineage list.
    await waitFor(async () => {
      const badge = root.querySelector<HTMLElement>(".badge")?.dataset.status;
      if (badge !== "Completed") return null;
      const versions = Array.from(
        root.querySelectorAll<HTMLElement>(".lineage li.version")
      ).map((li) => li.dataset.versionId);
      return versions.includes(applied) ? true : null;
    }, "completed run with revision in lineage");

    const current = root.querySelector<HTMLElement>(".lineage li.current");
    expect(current?.dataset.versionId).toBe(applied);
    app.stop();
    root.remove();
  }, 30_000);
});
