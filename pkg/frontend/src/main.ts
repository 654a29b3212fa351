/**
 * Page wiring: session start, task queue, choice submission (buttons and
 * 1/2/3 keyboard shortcuts), retry banner, and the polling dashboard.
 */

import { ApiError, triggerRefit } from "./api.js";
import { Dashboard, type DashboardElements } from "./dashboard.js";
import { renderChoiceBar, renderTaskList } from "./render.js";
import { AnnotationSession, CHOICES, type ScaleLabel } from "./session.js";

export const FETCH_COUNT = 5;

function must(doc: Document, id: string): HTMLElement {
  const node = doc.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

export function initApp(doc: Document): void {
  const workerInput = must(doc, "worker-input") as HTMLInputElement;
  const subjectInput = must(doc, "subject-input") as HTMLInputElement;
  const startBtn = must(doc, "start-btn") as HTMLButtonElement;
  const retryBanner = must(doc, "retry-banner");
  const retryBtn = must(doc, "retry-btn") as HTMLButtonElement;
  const taskList = must(doc, "task-list");
  const choiceBar = must(doc, "choice-bar");
  const queueEmpty = must(doc, "queue-empty");
  const flash = must(doc, "flash");
  const refitBtn = must(doc, "refit-btn") as HTMLButtonElement;

  const dashEls: DashboardElements = {
    counts: must(doc, "counts"),
    agreement: must(doc, "agreement"),
    annotations: must(doc, "annotations"),
    entropyChart: must(doc, "entropy-chart") as unknown as SVGElement,
    entropyLatest: must(doc, "entropy-latest"),
    loadingsChart: must(doc, "loadings-chart") as unknown as SVGElement,
    loadingsLatest: must(doc, "loadings-latest"),
    stamp: must(doc, "updated-stamp"),
  };

  let session: AnnotationSession | null = null;

  const subjectOf = () => subjectInput.value.trim() || "_all";

  renderChoiceBar(choiceBar);
  const choiceButtons = Array.from(
    choiceBar.querySelectorAll("button.choice-btn"),
  ) as HTMLButtonElement[];

  function setChoicesEnabled(enabled: boolean): void {
    for (const btn of choiceButtons) btn.disabled = !enabled;
  }

  function showFlash(text: string, kind: "info" | "warn" = "info"): void {
    flash.textContent = text;
    flash.className = kind === "warn" ? "flash warn" : "flash";
  }

  function showRetry(text: string): void {
    retryBanner.hidden = false;
    const msg = retryBanner.querySelector(".retry-text");
    if (msg) msg.textContent = text;
    setChoicesEnabled(false); // no submissions while the service is unreachable
  }

  function renderQueue(): void {
    const tasks = session ? session.tasks : [];
    renderTaskList(taskList as HTMLElement, tasks);
    queueEmpty.hidden = !(session !== null && tasks.length === 0);
    setChoicesEnabled(session !== null && tasks.length > 0 && retryBanner.hidden);
  }

  async function loadQueue(): Promise<void> {
    if (!session) return;
    try {
      await session.refill(FETCH_COUNT);
      retryBanner.hidden = true;
      renderQueue();
    } catch {
      showRetry("could not reach the annotation service");
    }
  }

  async function handleChoice(label: ScaleLabel): Promise<void> {
    if (!session || !retryBanner.hidden || session.current === null) return;
    setChoicesEnabled(false);
    try {
      const outcome = await session.submit(label);
      if (outcome === null) return; // another submission was in flight
      if (outcome.kind === "ok") {
        const name = CHOICES.find((c) => c.label === label)?.name ?? String(label);
        showFlash(`recorded ${name} — ${outcome.result.outcome}`);
      } else {
        showFlash(`skipped: ${outcome.detail}`, "warn");
      }
      renderQueue();
      if (session.tasks.length === 0) await loadQueue();
    } catch {
      showRetry("submission failed — service unreachable");
    } finally {
      if (retryBanner.hidden) renderQueue();
    }
  }

  choiceBar.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const btn = target.closest("button.choice-btn") as HTMLButtonElement | null;
    if (!btn || btn.disabled) return;
    void handleChoice(Number(btn.dataset.label) as ScaleLabel);
  });

  doc.addEventListener("keydown", (event) => {
    const target = event.target as HTMLElement | null;
    if (
      target instanceof HTMLInputElement ||
      target instanceof HTMLTextAreaElement
    ) {
      return;
    }
    const choice = CHOICES.find((c) => c.key === event.key);
    if (choice) void handleChoice(choice.label);
  });

  startBtn.addEventListener("click", () => {
    const workerId = workerInput.value.trim();
    if (!workerId) {
      showFlash("enter a worker id to start", "warn");
      return;
    }
    session = new AnnotationSession(workerId, subjectOf());
    showFlash(`labeling as ${workerId} on ${session.subject}`);
    void loadQueue();
  });

  retryBtn.addEventListener("click", () => {
    retryBanner.hidden = true;
    void loadQueue();
  });

  const dashboard = new Dashboard(dashEls, subjectOf);
  dashboard.start();

  refitBtn.addEventListener("click", async () => {
    refitBtn.disabled = true;
    try {
      await triggerRefit(subjectOf());
      await dashboard.poll();
    } catch (err) {
      const detail = err instanceof ApiError ? err.message : "refit failed";
      showFlash(detail, "warn");
    } finally {
      refitBtn.disabled = false;
    }
  });
}

// Module scripts run after parsing, but guard anyway and skip non-app pages.
if (typeof document !== "undefined" && document.getElementById("task-list")) {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", () => initApp(document));
  } else {
    initApp(document);
  }
}
