/**
 * Frozen JSON contracts shared with the forecasting service.
 *
 * These mirror the response bodies of the four endpoints exactly; the UI
 * renders these fields verbatim and performs no computation on them.
 */

export interface ConditionPoint {
  discrete: number;
  distribution: number[];
}

export interface ForecastPayload {
  x_hat: number[][];
  node_path: [number, number][];
  conditions: ConditionPoint[];
  attention: number[][] | null;
  feature_names: string[];
  history_len: number;
  horizon: number;
}

/** [feature, shapley, acceleration] rows, best first. */
export type FeatureRankingRow = [string, number, number];

export interface ExplainPayload {
  attentive_steps: number[];
  feature_ranking: FeatureRankingRow[];
  node_shap: Record<string, [string, number][]>;
}

export interface AssessmentPayload {
  label: "SR" | "SH";
  burst_start: number | null;
  tts: number | null;
  dark_sequence: boolean[];
}

export interface IntervenePayload {
  feature: string;
  reduction_pct: number;
  steps: number[];
  before: AssessmentPayload;
  after: AssessmentPayload;
  label_flip: boolean;
  delta_tts: number | null;
  forecast_before: ForecastPayload;
  forecast_after: ForecastPayload;
}

export interface GridPayload {
  risk_map: Record<string, number>;
  dominant_feature_map: Record<string, string>;
  centroids: number[][];
  grid_height: number;
  grid_width: number;
  feature_names: string[];
}

export interface ForecastRequest {
  model_id: string;
  values: number[][];
  horizon: number;
}

export interface InterveneRequest extends ForecastRequest {
  feature: string;
  reduction_pct: number;
  steps: number[] | "auto";
}

export const ENDPOINTS = {
  forecast: "/forecast",
  explain: "/explain",
  intervene: "/intervene",
  grid: "/grid",
} as const;
