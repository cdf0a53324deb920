/** Single-page wiring: fetch from the four endpoints, render the panels. */

import { ApiClient, ApiError } from "./api";
import { renderGrid } from "./render/grid";
import {
  renderFieldErrors,
  renderForm,
  renderLog,
  renderResult,
} from "./render/intervention";
import { renderTrajectoryBoundary } from "./render/trajectory";
import { ExplainPayload, GridPayload } from "./schema";
import { GridViewState, LogEntry, appendLog } from "./state";

export async function boot(root: HTMLElement, client = new ApiClient()) {
  const state: GridViewState = {
    modelId: "demo",
    seriesId: null,
    mode: "risk",
    form: { feature: "", pct: 20, steps: "auto" },
  };
  let log: readonly LogEntry[] = Object.freeze([]);
  let grid: GridPayload | null = null;
  let explain: ExplainPayload | null = null;
  let values: number[][] = [];

  const gridHost = document.createElement("section");
  const trajHost = document.createElement("section");
  const formHost = document.createElement("section");
  const resultHost = document.createElement("section");
  const logHost = document.createElement("section");
  root.append(gridHost, trajHost, formHost, resultHost, logHost);

  const redrawLog = () => logHost.replaceChildren(renderLog(log));

  try {
    grid = await client.grid(state.modelId);
  } catch {
    grid = null;
  }
  gridHost.replaceChildren(renderGrid(grid, state.mode));

  (root as HTMLElement & { afnLoadSeries?: (v: number[][]) => Promise<void> })
    .afnLoadSeries = async (seriesValues: number[][]) => {
    values = seriesValues;
    const req = { model_id: state.modelId, values, horizon: 6 };
    const fc = await client.forecast(req);
    explain = await client.explain(req);
    trajHost.replaceChildren(
      renderTrajectoryBoundary(fc, explain.attentive_steps,
        grid?.grid_height ?? 8, grid?.grid_width ?? 8),
    );
    const form = renderForm(fc.feature_names, explain);
    form.addEventListener("submit", async (ev) => {
      ev.preventDefault();
      const data = new FormData(form);
      const stepsRaw = String(data.get("steps"));
      try {
        const result = await client.intervene({
          model_id: state.modelId,
          values,
          horizon: 6,
          feature: String(data.get("feature")),
          reduction_pct: Number(data.get("pct")),
          steps: stepsRaw === "auto"
            ? "auto"
            : stepsRaw.split(",").map((s) => Number(s.trim())),
        });
        log = appendLog(log, result);
        resultHost.replaceChildren(renderResult(result));
        redrawLog();
      } catch (err) {
        if (err instanceof ApiError) {
          resultHost.replaceChildren(renderFieldErrors(err.fieldErrors));
        } else {
          throw err;
        }
      }
    });
    formHost.replaceChildren(form);
  };
  redrawLog();
}
