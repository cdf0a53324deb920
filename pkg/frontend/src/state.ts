/** View state and the append-only session log. */

import { IntervenePayload } from "./schema";

export type HeatmapMode = "risk" | "dominant-feature";

export interface InterventionForm {
  feature: string;
  pct: number;
  steps: number[] | "auto";
}

export interface GridViewState {
  modelId: string;
  seriesId: string | null;
  mode: HeatmapMode;
  form: InterventionForm;
}

export const PCT_MIN = 5;
export const PCT_MAX = 70;
export const PCT_STEP = 5;

export interface LogEntry {
  readonly index: number;
  readonly feature: string;
  readonly reduction_pct: number;
  readonly before_label: string;
  readonly after_label: string;
  readonly label_flip: boolean;
}

/** Append a frozen entry; the log itself is replaced, never mutated. */
export function appendLog(
  log: readonly LogEntry[],
  result: IntervenePayload,
): readonly LogEntry[] {
  const entry: LogEntry = Object.freeze({
    index: log.length,
    feature: result.feature,
    reduction_pct: result.reduction_pct,
    before_label: result.before.label,
    after_label: result.after.label,
    label_flip: result.label_flip,
  });
  return Object.freeze([...log, entry]);
}
