/**
 * Typed client for the annotation service HTTP API.
 *
 * Four routes: ranked task queue, annotation submission, queue status, and
 * model refit.  Non-2xx responses raise ApiError carrying the HTTP status
 * and the service's detail message so callers can branch on the code
 * (409 duplicate/finalized, 404 unknown subject, 400 nothing resolved).
 */

export type Task = {
  doc_id: string;
  subject: string;
  text: string;
  rank: number;
  status: string;
};

export type QueueCounts = {
  pending: number;
  in_progress: number;
  resolved: number;
  discarded: number;
};

export type RefitPoint = {
  subject: string;
  size: number;
  nonzero_subject_loadings: number;
  mean_entropy: number;
};

export type StatusReport = {
  subject: string;
  counts: QueueCounts;
  annotations: number;
  agreement_rate: number | null;
  refit_points: RefitPoint[];
};

export type SubmitResult = {
  outcome: "pending" | "resolved" | "discarded";
  label: number | null; // final label once resolved, null while pending
};

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

// Same-origin by default; tests and dev servers point this elsewhere.
let apiBase = "";

export function setApiBase(base: string): void {
  apiBase = base.replace(/\/+$/, "");
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(apiBase + path, init);
  if (!response.ok) {
    let detail = response.statusText || `HTTP ${response.status}`;
    try {
      const body = await response.json();
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export function fetchQueue(
  subject: string,
  workerId: string,
  count: number,
): Promise<Task[]> {
  const params = new URLSearchParams({ worker: workerId, count: String(count) });
  return request<Task[]>(`/queue/${encodeURIComponent(subject)}?${params}`);
}

export function submitAnnotation(
  docId: string,
  workerId: string,
  label: number,
): Promise<SubmitResult> {
  return request<SubmitResult>("/annotations", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ doc_id: docId, worker_id: workerId, label }),
  });
}

export function fetchStatus(subject: string): Promise<StatusReport> {
  return request<StatusReport>(`/status/${encodeURIComponent(subject)}`);
}

export function triggerRefit(subject: string): Promise<RefitPoint> {
  return request<RefitPoint>(`/refit/${encodeURIComponent(subject)}`, {
    method: "POST",
  });
}
