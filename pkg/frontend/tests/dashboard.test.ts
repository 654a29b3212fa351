import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { setApiBase } from "../src/api.js";
import { Dashboard, MIN_POLL_INTERVAL_MS } from "../src/dashboard.js";
import type { DashboardElements } from "../src/dashboard.js";
import type { StatusReport } from "../src/api.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function makeElements(): DashboardElements {
  return {
    counts: document.createElement("div"),
    agreement: document.createElement("dd"),
    annotations: document.createElement("dd"),
    entropyChart: document.createElementNS(SVG_NS, "svg"),
    entropyLatest: document.createElement("span"),
    loadingsChart: document.createElementNS(SVG_NS, "svg"),
    loadingsLatest: document.createElement("span"),
    stamp: document.createElement("p"),
  };
}

function report(overrides: Partial<StatusReport> = {}): StatusReport {
  return {
    subject: "_all",
    counts: { pending: 8, in_progress: 1, resolved: 2, discarded: 0 },
    annotations: 5,
    agreement_rate: 0.75,
    refit_points: [
      { subject: "_all", size: 2, nonzero_subject_loadings: 3, mean_entropy: 0.856841 },
    ],
    ...overrides,
  };
}

function jsonResponse(body: unknown, status = 200) {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: `status ${status}`,
    json: async () => body,
  };
}

let els: DashboardElements;

beforeEach(() => {
  els = makeElements();
});

afterEach(() => {
  vi.unstubAllGlobals();
  vi.useRealTimers();
  setApiBase("");
});

describe("poll", () => {
  it("renders counts, agreement, and the latest metrics verbatim", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse(report())));
    const when = new Date(2026, 1, 3, 9, 0, 0);
    const dash = new Dashboard(els, () => "_all", () => when);
    await dash.poll();

    const resolvedChip = els.counts.querySelector('[data-status="resolved"] .count-value');
    expect(resolvedChip?.textContent).toBe("2");
    expect(els.agreement.textContent).toBe("0.75");
    expect(els.annotations.textContent).toBe("5");
    expect(els.entropyLatest.textContent).toBe("0.856841");
    expect(els.loadingsLatest.textContent).toBe("3");
    expect(els.entropyChart.querySelectorAll(".chart-dot")).toHaveLength(1);
    expect(els.stamp.classList.contains("stale")).toBe(false);
    expect(els.stamp.textContent).toContain(when.toLocaleTimeString());
  });

  it("shows n/a when no agreement pairs exist yet", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse(report({ agreement_rate: null }))));
    const dash = new Dashboard(els, () => "_all");
    await dash.poll();
    expect(els.agreement.textContent).toBe("n/a");
  });

  it("keeps the last good numbers and flags them stale on failure", async () => {
    const fetchMock = vi.fn();
    fetchMock.mockResolvedValueOnce(jsonResponse(report()));
    fetchMock.mockRejectedValueOnce(new TypeError("fetch failed"));
    vi.stubGlobal("fetch", fetchMock);

    const when = new Date(2026, 1, 3, 9, 0, 0);
    const dash = new Dashboard(els, () => "_all", () => when);
    await dash.poll();
    await dash.poll();

    expect(els.stamp.classList.contains("stale")).toBe(true);
    expect(els.stamp.textContent).toContain("stale");
    expect(els.stamp.textContent).toContain(when.toLocaleTimeString());
    expect(els.annotations.textContent).toBe("5");
    expect(els.entropyLatest.textContent).toBe("0.856841");
  });

  it("renders the empty-chart hint before any refit happens", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => jsonResponse(report({ refit_points: [] }))));
    const dash = new Dashboard(els, () => "_all");
    await dash.poll();
    expect(els.entropyChart.querySelector(".chart-hint")?.textContent).toBe("no refits yet");
    expect(els.entropyLatest.textContent).toBe("");
  });
});

describe("start", () => {
  it("never polls more often than the two-second floor", async () => {
    vi.useFakeTimers();
    const fetchMock = vi.fn(async () => jsonResponse(report()));
    vi.stubGlobal("fetch", fetchMock);

    const dash = new Dashboard(els, () => "_all");
    dash.start(100);
    await vi.advanceTimersByTimeAsync(0);
    expect(fetchMock).toHaveBeenCalledTimes(1);

    await vi.advanceTimersByTimeAsync(MIN_POLL_INTERVAL_MS - 1);
    expect(fetchMock).toHaveBeenCalledTimes(1);
    await vi.advanceTimersByTimeAsync(1);
    expect(fetchMock).toHaveBeenCalledTimes(2);
    await vi.advanceTimersByTimeAsync(MIN_POLL_INTERVAL_MS);
    expect(fetchMock).toHaveBeenCalledTimes(3);

    dash.stop();
    await vi.advanceTimersByTimeAsync(MIN_POLL_INTERVAL_MS * 3);
    expect(fetchMock).toHaveBeenCalledTimes(3);
  });
});
