/**
 * DOM builders for the queue panel and the progress dashboard.
 *
 * Every builder writes into a caller-supplied container and creates nodes
 * through that container's ownerDocument, so the same code runs in the
 * browser and under a synthetic DOM in tests.  Displayed numbers are taken
 * verbatim from service responses; nothing is rounded or recomputed here.
 */

import type { QueueCounts, RefitPoint, Task } from "./api.js";
import { CHOICES } from "./session.js";

export const NEUTRAL_GUIDANCE =
  "Mark a document neutral when it is irrelevant, or not even slightly " +
  "positive or negative.";

const SVG_NS = "http://www.w3.org/2000/svg";
const CHART_W = 240;
const CHART_H = 80;
const CHART_PAD = 8;

function make(
  doc: Document,
  tag: string,
  className?: string,
  text?: string,
): HTMLElement {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function clear(node: Element): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

/** Render the fetched tasks as cards in rank order; the first is active. */
export function renderTaskList(root: HTMLElement, tasks: Task[]): void {
  const doc = root.ownerDocument;
  clear(root);
  tasks.forEach((task, i) => {
    const card = make(doc, "article", i === 0 ? "task-card active" : "task-card");
    card.dataset.docId = task.doc_id;
    const head = make(doc, "header", "task-head");
    head.appendChild(make(doc, "span", "task-rank", `#${task.rank}`));
    head.appendChild(make(doc, "span", "task-subject", task.subject));
    card.appendChild(head);
    card.appendChild(make(doc, "p", "task-text", task.text));
    root.appendChild(card);
  });
}

/** The three labeled choice buttons plus the neutral guidance line. */
export function renderChoiceBar(root: HTMLElement): void {
  const doc = root.ownerDocument;
  clear(root);
  const row = make(doc, "div", "choice-row");
  for (const choice of CHOICES) {
    const btn = make(doc, "button", "choice-btn") as HTMLButtonElement;
    btn.type = "button";
    btn.dataset.label = String(choice.label);
    btn.appendChild(make(doc, "kbd", "choice-key", choice.key));
    btn.appendChild(make(doc, "span", "choice-name", choice.name));
    row.appendChild(btn);
  }
  root.appendChild(row);
  root.appendChild(make(doc, "p", "guidance", NEUTRAL_GUIDANCE));
}

/** Queue counts as chips; the numbers are the service's, unchanged. */
export function renderCounts(root: HTMLElement, counts: QueueCounts): void {
  const doc = root.ownerDocument;
  clear(root);
  const order: (keyof QueueCounts)[] = [
    "pending",
    "in_progress",
    "resolved",
    "discarded",
  ];
  for (const status of order) {
    const chip = make(doc, "span", "count-chip");
    chip.dataset.status = status;
    chip.appendChild(make(doc, "span", "count-name", status.replace("_", " ")));
    chip.appendChild(make(doc, "b", "count-value", String(counts[status])));
    root.appendChild(chip);
  }
}

/**
 * One learning-metric series as a small line chart.  Each point carries its
 * verbatim value in data-value; an empty series renders a hint instead.
 */
export function renderRefitChart(
  svg: SVGElement,
  points: RefitPoint[],
  metric: "mean_entropy" | "nonzero_subject_loadings",
): void {
  const doc = svg.ownerDocument;
  clear(svg);
  svg.setAttribute("viewBox", `0 0 ${CHART_W} ${CHART_H}`);
  if (points.length === 0) {
    const hint = doc.createElementNS(SVG_NS, "text");
    hint.setAttribute("class", "chart-hint");
    hint.setAttribute("x", String(CHART_W / 2));
    hint.setAttribute("y", String(CHART_H / 2));
    hint.setAttribute("text-anchor", "middle");
    hint.textContent = "no refits yet";
    svg.appendChild(hint);
    return;
  }
  const values = points.map((p) => p[metric]);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const x = (i: number) =>
    points.length === 1
      ? CHART_W / 2
      : CHART_PAD + (i * (CHART_W - 2 * CHART_PAD)) / (points.length - 1);
  const y = (v: number) =>
    CHART_H - CHART_PAD - ((v - lo) * (CHART_H - 2 * CHART_PAD)) / span;

  const line = doc.createElementNS(SVG_NS, "polyline");
  line.setAttribute("class", "chart-line");
  line.setAttribute(
    "points",
    values.map((v, i) => `${x(i)},${y(v)}`).join(" "),
  );
  svg.appendChild(line);
  values.forEach((v, i) => {
    const dot = doc.createElementNS(SVG_NS, "circle");
    dot.setAttribute("class", "chart-dot");
    dot.setAttribute("cx", String(x(i)));
    dot.setAttribute("cy", String(y(v)));
    dot.setAttribute("r", "3");
    dot.setAttribute("data-value", String(v));
    svg.appendChild(dot);
  });
}

/** Last successful update time, flagged when the data has gone stale. */
export function renderUpdatedStamp(
  root: HTMLElement,
  updated: Date | null,
  stale: boolean,
): void {
  if (updated === null) {
    root.textContent = "waiting for first update";
    root.classList.toggle("stale", stale);
    return;
  }
  const when = updated.toLocaleTimeString();
  root.textContent = stale ? `stale — last update ${when}` : `updated ${when}`;
  root.classList.toggle("stale", stale);
}
