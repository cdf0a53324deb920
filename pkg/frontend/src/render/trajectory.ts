/**
 * Trajectory overlay: the node path drawn over the grid as an SVG polyline,
 * solid for the known history and dotted for the forecast, with attention
 * markers and annotations where the discrete condition changes.
 */

import { ForecastPayload } from "../schema";

export const CELL = 40; // svg units per grid cell

export class NodeRangeError extends Error {}

function center(node: [number, number]): [number, number] {
  const [i, j] = node;
  return [j * CELL + CELL / 2, i * CELL + CELL / 2];
}

function checkNodes(fc: ForecastPayload, height: number, width: number): void {
  for (const [i, j] of fc.node_path) {
    if (i < 0 || i >= height || j < 0 || j >= width) {
      throw new NodeRangeError(`node (${i},${j}) outside ${height}x${width} grid`);
    }
  }
}

function polyline(
  points: [number, number][],
  cls: string,
  dotted: boolean,
): SVGPolylineElement {
  const el = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
  el.setAttribute("class", cls);
  el.setAttribute("fill", "none");
  el.setAttribute("points", points.map(([x, y]) => `${x},${y}`).join(" "));
  el.setAttribute("stroke-dasharray", dotted ? "4 4" : "none");
  return el;
}

export function renderTrajectory(
  fc: ForecastPayload,
  attentiveSteps: number[] = [],
  gridHeight = 8,
  gridWidth = 8,
): SVGSVGElement {
  checkNodes(fc, gridHeight, gridWidth);
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("class", "trajectory");
  svg.setAttribute("viewBox", `0 0 ${gridWidth * CELL} ${gridHeight * CELL}`);

  const pts = fc.node_path.map(center);
  const t = fc.history_len;
  svg.appendChild(polyline(pts.slice(0, t), "past-path", false));
  // dotted forecast path, joined to the last history point
  svg.appendChild(polyline(pts.slice(Math.max(t - 1, 0)), "forecast-path", true));

  fc.node_path.forEach((node, step) => {
    const [x, y] = center(node);
    const dot = document.createElementNS("http://www.w3.org/2000/svg", "circle");
    dot.setAttribute("class", step < t ? "path-point past" : "path-point forecast");
    dot.setAttribute("data-step", String(step));
    dot.setAttribute("cx", String(x));
    dot.setAttribute("cy", String(y));
    dot.setAttribute("r", "3");
    const title = document.createElementNS("http://www.w3.org/2000/svg", "title");
    title.textContent = `step ${step}, condition ${fc.conditions[step].discrete}`;
    dot.appendChild(title);
    svg.appendChild(dot);
  });

  for (const step of attentiveSteps) {
    const [x, y] = center(fc.node_path[step]);
    const marker = document.createElementNS("http://www.w3.org/2000/svg", "rect");
    marker.setAttribute("class", "attention-marker");
    marker.setAttribute("data-step", String(step));
    marker.setAttribute("x", String(x - 5));
    marker.setAttribute("y", String(y - 5));
    marker.setAttribute("width", "10");
    marker.setAttribute("height", "10");
    svg.appendChild(marker);
  }

  for (let step = 1; step < fc.node_path.length; step++) {
    const prev = fc.conditions[step - 1].discrete;
    const cur = fc.conditions[step].discrete;
    if (cur === prev) continue;
    const [x, y] = center(fc.node_path[step]);
    const label = document.createElementNS("http://www.w3.org/2000/svg", "text");
    label.setAttribute("class", "condition-annotation");
    label.setAttribute("data-step", String(step));
    label.setAttribute("x", String(x + 6));
    label.setAttribute("y", String(y - 6));
    label.textContent = `c${cur}`;
    svg.appendChild(label);
  }

  return svg;
}

/** Wrap rendering in an error boundary element for malformed payloads. */
export function renderTrajectoryBoundary(
  fc: ForecastPayload,
  attentiveSteps: number[] = [],
  gridHeight = 8,
  gridWidth = 8,
): HTMLElement {
  const root = document.createElement("div");
  root.className = "trajectory-panel";
  try {
    root.appendChild(renderTrajectory(fc, attentiveSteps, gridHeight, gridWidth));
  } catch (err) {
    const msg = document.createElement("p");
    msg.className = "render-error";
    msg.textContent =
      err instanceof NodeRangeError
        ? `Cannot render trajectory: ${err.message}`
        : "Cannot render trajectory: unexpected payload.";
    root.appendChild(msg);
  }
  return root;
}
