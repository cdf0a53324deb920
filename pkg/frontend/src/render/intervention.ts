/**
 * Intervention panel: the what-if form, the before/after trajectories with
 * SR/SH badges and deltas, and the append-only session log. Every number
 * shown comes straight from a service response field.
 */

import { FieldErrors } from "../api";
import { ExplainPayload, IntervenePayload } from "../schema";
import { LogEntry, PCT_MAX, PCT_MIN, PCT_STEP } from "../state";
import { renderTrajectoryBoundary } from "./trajectory";

export function defaultFeature(explain: ExplainPayload): string {
  return explain.feature_ranking[0][0];
}

export function renderForm(
  featureNames: string[],
  explain: ExplainPayload | null,
): HTMLFormElement {
  const form = document.createElement("form");
  form.className = "intervention-form";

  const select = document.createElement("select");
  select.name = "feature";
  for (const name of featureNames) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    select.appendChild(opt);
  }
  if (explain !== null) {
    select.value = defaultFeature(explain);
  }
  form.appendChild(select);

  const slider = document.createElement("input");
  slider.type = "range";
  slider.name = "pct";
  slider.min = String(PCT_MIN);
  slider.max = String(PCT_MAX);
  slider.step = String(PCT_STEP);
  slider.value = "20";
  form.appendChild(slider);

  const steps = document.createElement("input");
  steps.type = "text";
  steps.name = "steps";
  steps.value = "auto";
  form.appendChild(steps);

  const submit = document.createElement("button");
  submit.type = "submit";
  submit.textContent = "run intervention";
  form.appendChild(submit);
  return form;
}

function badge(label: string): HTMLElement {
  const el = document.createElement("span");
  el.className = `label-badge label-${label.toLowerCase()}`;
  el.textContent = label;
  return el;
}

export function renderResult(result: IntervenePayload): HTMLElement {
  const root = document.createElement("div");
  root.className = "intervention-result";

  const summary = document.createElement("div");
  summary.className = "intervention-summary";
  summary.append(
    `reduced ${result.feature} by ${result.reduction_pct}% at steps ` +
      `${result.steps.join(", ")}: `,
  );
  const before = badge(result.before.label);
  before.classList.add("before");
  summary.appendChild(before);
  summary.append(" → ");
  const after = badge(result.after.label);
  after.classList.add("after");
  summary.appendChild(after);
  root.appendChild(summary);

  const deltas = document.createElement("dl");
  deltas.className = "deltas";
  const rows: [string, string][] = [
    ["label flip", String(result.label_flip)],
    ["tts before", String(result.before.tts)],
    ["tts after", String(result.after.tts)],
    ["delta tts (%)", result.delta_tts === null ? "n/a" : String(result.delta_tts)],
  ];
  for (const [k, v] of rows) {
    const dt = document.createElement("dt");
    dt.textContent = k;
    const dd = document.createElement("dd");
    dd.textContent = v;
    deltas.append(dt, dd);
  }
  root.appendChild(deltas);

  const pair = document.createElement("div");
  pair.className = "trajectory-pair";
  const left = renderTrajectoryBoundary(result.forecast_before);
  left.classList.add("before");
  const right = renderTrajectoryBoundary(result.forecast_after);
  right.classList.add("after");
  pair.append(left, right);
  root.appendChild(pair);
  return root;
}

export function renderLog(log: readonly LogEntry[]): HTMLElement {
  const list = document.createElement("ol");
  list.className = "session-log";
  for (const entry of log) {
    const item = document.createElement("li");
    item.className = "log-entry";
    item.dataset.index = String(entry.index);
    item.textContent =
      `${entry.feature} -${entry.reduction_pct}%: ` +
      `${entry.before_label} → ${entry.after_label}`;
    list.appendChild(item);
  }
  return list;
}

export function renderFieldErrors(errors: FieldErrors): HTMLElement {
  const root = document.createElement("ul");
  root.className = "field-errors";
  for (const [field, message] of Object.entries(errors)) {
    const item = document.createElement("li");
    item.dataset.field = field;
    item.textContent = `${field}: ${message}`;
    root.appendChild(item);
  }
  return root;
}
