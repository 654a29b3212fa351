/**
 * Single-annotator session state: the fetched task queue, the submission
 * history, and the in-flight guard that serializes submissions.
 *
 * The service log is the single source of truth for labels; nothing here
 * is persisted, so reloading the page starts a fresh session.
 */

import {
  ApiError,
  fetchQueue,
  submitAnnotation,
  type SubmitResult,
  type Task,
} from "./api.js";

export type ScaleLabel = -1 | 0 | 1;

export type Choice = { label: ScaleLabel; name: string; key: string };

// The three sentiment choices and their keyboard shortcuts.
export const CHOICES: readonly Choice[] = [
  { label: -1, name: "negative", key: "1" },
  { label: 0, name: "neutral", key: "2" },
  { label: 1, name: "positive", key: "3" },
];

export type HistoryEntry = {
  doc_id: string;
  label: ScaleLabel | null; // null when the service rejected the submission
  outcome: string;
};

export type SubmitOutcome =
  | { kind: "ok"; result: SubmitResult }
  | { kind: "rejected"; status: number; detail: string };

export class AnnotationSession {
  tasks: Task[] = [];
  readonly history: HistoryEntry[] = [];
  private readonly submitted = new Set<string>();
  private inFlight = false;

  constructor(
    readonly workerId: string,
    readonly subject: string,
  ) {}

  get current(): Task | null {
    return this.tasks.length > 0 ? this.tasks[0] : null;
  }

  /** Pull the next ranked tasks, dropping anything already handled here. */
  async refill(count: number): Promise<Task[]> {
    const fetched = await fetchQueue(this.subject, this.workerId, count);
    this.tasks = fetched.filter((t) => !this.submitted.has(t.doc_id));
    return this.tasks;
  }

  /**
   * Submit a label for the current task.
   *
   * Returns null when there is no current task or another submission is
   * still in flight (the double-click guard).  A 409 rejection (duplicate
   * or finalized elsewhere) is recorded and the task skipped, never
   * retried; other failures leave the task in place and propagate so the
   * caller can show the retry state.
   */
  async submit(label: ScaleLabel): Promise<SubmitOutcome | null> {
    const task = this.current;
    if (task === null || this.inFlight) return null;
    this.inFlight = true;
    try {
      const result = await submitAnnotation(task.doc_id, this.workerId, label);
      this.submitted.add(task.doc_id);
      this.history.push({ doc_id: task.doc_id, label, outcome: result.outcome });
      this.tasks.shift();
      return { kind: "ok", result };
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.submitted.add(task.doc_id);
        this.history.push({ doc_id: task.doc_id, label: null, outcome: "skipped" });
        this.tasks.shift();
        return { kind: "rejected", status: err.status, detail: err.message };
      }
      throw err;
    } finally {
      this.inFlight = false;
    }
  }
}
