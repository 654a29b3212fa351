/**
 * Progress dashboard: polls the status endpoint and re-renders counts,
 * agreement rate, annotation volume, and the two learning-metric series
 * (mean entropy and nonzero subject loadings per refit).
 *
 * A failed poll keeps the last good numbers on screen but flags them as
 * stale with the time of the last successful update.  Polls are spaced at
 * least two seconds apart.
 */

import { fetchStatus, type StatusReport } from "./api.js";
import { renderCounts, renderRefitChart, renderUpdatedStamp } from "./render.js";

export const POLL_INTERVAL_MS = 3000;
export const MIN_POLL_INTERVAL_MS = 2000;

export type DashboardElements = {
  counts: HTMLElement;
  agreement: HTMLElement;
  annotations: HTMLElement;
  entropyChart: SVGElement;
  entropyLatest: HTMLElement;
  loadingsChart: SVGElement;
  loadingsLatest: HTMLElement;
  stamp: HTMLElement;
};

export class Dashboard {
  lastReport: StatusReport | null = null;
  lastUpdated: Date | null = null;
  stale = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly els: DashboardElements,
    private readonly subjectOf: () => string,
    private readonly clock: () => Date = () => new Date(),
  ) {}

  async poll(): Promise<void> {
    try {
      const report = await fetchStatus(this.subjectOf());
      this.lastReport = report;
      this.lastUpdated = this.clock();
      this.stale = false;
    } catch {
      this.stale = true; // keep the previous numbers, flag them
    }
    this.render();
  }

  render(): void {
    renderUpdatedStamp(this.els.stamp, this.lastUpdated, this.stale);
    const report = this.lastReport;
    if (report === null) return;
    renderCounts(this.els.counts, report.counts);
    this.els.agreement.textContent =
      report.agreement_rate === null ? "n/a" : String(report.agreement_rate);
    this.els.annotations.textContent = String(report.annotations);
    const points = report.refit_points;
    renderRefitChart(this.els.entropyChart, points, "mean_entropy");
    renderRefitChart(
      this.els.loadingsChart,
      points,
      "nonzero_subject_loadings",
    );
    const last = points.length > 0 ? points[points.length - 1] : null;
    this.els.entropyLatest.textContent =
      last === null ? "" : String(last.mean_entropy);
    this.els.loadingsLatest.textContent =
      last === null ? "" : String(last.nonzero_subject_loadings);
  }

  start(intervalMs: number = POLL_INTERVAL_MS): void {
    this.stop();
    void this.poll();
    const spacing = Math.max(intervalMs, MIN_POLL_INTERVAL_MS);
    this.timer = setInterval(() => void this.poll(), spacing);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
