/** Thin fetch client for /api/v1. The console renders these payloads
 * verbatim; it never recomputes a score or a diff. */

import type {
  DiffPayload,
  GuidelineVersion,
  IterationDetail,
  Lineage,
  Report,
  ReviewRequest,
  ReviewResponse,
  RunDetail,
  RunListEntry,
  StatusPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(`${this.base}/api/v1${path}`);
    if (!response.ok) {
      throw new ApiError(response.status, await describeError(response));
    }
    return (await response.json()) as T;
  }

  listRuns(): Promise<RunListEntry[]> {
    return this.get("/runs");
  }

  getRun(runId: string): Promise<RunDetail> {
    return this.get(`/runs/${encodeURIComponent(runId)}`);
  }

  getStatus(runId: string, wait?: number, etag?: string): Promise<StatusPayload> {
    const params = new URLSearchParams();
    if (wait) params.set("wait", String(wait));
    if (etag) params.set("etag", etag);
    const query = params.toString() ? `?${params.toString()}` : "";
    return this.get(`/runs/${encodeURIComponent(runId)}/status${query}`);
  }

  getIteration(runId: string, index: number): Promise<IterationDetail> {
    return this.get(`/runs/${encodeURIComponent(runId)}/iterations/${index}`);
  }

  getReport(runId: string, index: number): Promise<Report> {
    return this.get(`/runs/${encodeURIComponent(runId)}/iterations/${index}/report`);
  }

  getLineage(runId: string): Promise<Lineage> {
    return this.get(`/runs/${encodeURIComponent(runId)}/guidelines`);
  }

  getGuideline(runId: string, versionId: string): Promise<GuidelineVersion> {
    return this.get(
      `/runs/${encodeURIComponent(runId)}/guidelines/${encodeURIComponent(versionId)}`
    );
  }

  getDiff(runId: string, from: string, to: string): Promise<DiffPayload> {
    const params = new URLSearchParams({ from, to });
    return this.get(`/runs/${encodeURIComponent(runId)}/diff?${params.toString()}`);
  }

  async postReview(runId: string, request: ReviewRequest): Promise<ReviewResponse> {
    const response = await fetch(
      `${this.base}/api/v1/runs/${encodeURIComponent(runId)}/review`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      }
    );
    if (!response.ok) {
      throw new ApiError(response.status, await describeError(response));
    }
    return (await response.json()) as ReviewResponse;
  }
}

async function describeError(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}
