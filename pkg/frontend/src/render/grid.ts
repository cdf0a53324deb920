/**
 * SOM grid heatmap: one cell per node, colored by risk score (darker means
 * riskier) or by dominant feature. The mode toggle recolors from the
 * already-fetched payload; it never refetches.
 */

import { GridPayload } from "../schema";
import { HeatmapMode } from "../state";

const FEATURE_PALETTE = [
  "#4e79a7", "#f28e2b", "#59a14f", "#e15759",
  "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];

export function riskColor(score: number): string {
  // score in [0, 1]; 0 renders light, 1 renders dark
  const v = Math.round(235 - 185 * score);
  return `rgb(${v}, ${v}, ${v})`;
}

export function featureColor(feature: string, featureNames: string[]): string {
  const idx = featureNames.indexOf(feature);
  return FEATURE_PALETTE[idx >= 0 ? idx % FEATURE_PALETTE.length : 0];
}

function applyMode(
  root: HTMLElement,
  payload: GridPayload,
  mode: HeatmapMode,
): void {
  root.dataset.mode = mode;
  for (const cell of root.querySelectorAll<HTMLElement>(".grid-cell")) {
    const key = cell.dataset.node as string;
    if (mode === "risk") {
      const score = payload.risk_map[key];
      cell.style.backgroundColor = riskColor(score);
      cell.title = `node ${key}: risk ${score}`;
    } else {
      const feature = payload.dominant_feature_map[key];
      cell.style.backgroundColor = featureColor(feature, payload.feature_names);
      cell.title = `node ${key}: ${feature}`;
    }
  }
}

function legendFor(payload: GridPayload, mode: HeatmapMode): string {
  if (mode === "risk") {
    return "risk score: light = 0, dark = 1";
  }
  return payload.feature_names
    .map((f) => `${f}: ${featureColor(f, payload.feature_names)}`)
    .join(", ");
}

export function renderGrid(
  payload: GridPayload | null,
  mode: HeatmapMode = "risk",
): HTMLElement {
  const root = document.createElement("div");
  root.className = "grid-panel";
  if (payload === null) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No grid loaded. Select a model to fetch its grid.";
    root.appendChild(empty);
    return root;
  }

  const table = document.createElement("div");
  table.className = "grid-heatmap";
  table.style.display = "grid";
  table.style.gridTemplateColumns = `repeat(${payload.grid_width}, 1fr)`;
  for (let i = 0; i < payload.grid_height; i++) {
    for (let j = 0; j < payload.grid_width; j++) {
      const cell = document.createElement("div");
      cell.className = "grid-cell";
      cell.dataset.node = `${i},${j}`;
      table.appendChild(cell);
    }
  }
  root.appendChild(table);

  const legend = document.createElement("div");
  legend.className = "grid-legend";
  root.appendChild(legend);

  const toggle = document.createElement("button");
  toggle.className = "mode-toggle";
  toggle.type = "button";
  root.appendChild(toggle);

  const update = (m: HeatmapMode) => {
    applyMode(root, payload, m);
    legend.textContent = legendFor(payload, m);
    toggle.textContent =
      m === "risk" ? "show dominant features" : "show risk";
  };
  toggle.addEventListener("click", () => {
    update(root.dataset.mode === "risk" ? "dominant-feature" : "risk");
  });
  update(mode);
  return root;
}
