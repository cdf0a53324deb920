/**
 * Thin client for the four service endpoints with in-flight request
 * de-duplication per panel: while a panel's request is pending, an
 * identical request from the same panel reuses the pending promise.
 */

import { baseUrl } from "./config";
import {
  ENDPOINTS,
  ExplainPayload,
  ForecastPayload,
  ForecastRequest,
  GridPayload,
  IntervenePayload,
  InterveneRequest,
} from "./schema";

export interface FieldErrors {
  [field: string]: string;
}

export class ApiError extends Error {
  status: number;
  fieldErrors: FieldErrors;

  constructor(status: number, message: string, fieldErrors: FieldErrors = {}) {
    super(message);
    this.status = status;
    this.fieldErrors = fieldErrors;
  }
}

type FetchLike = typeof fetch;

function fieldErrorsFromDetail(detail: unknown): FieldErrors {
  const out: FieldErrors = {};
  if (Array.isArray(detail)) {
    for (const item of detail) {
      const loc = item?.loc;
      const field = Array.isArray(loc) ? String(loc[loc.length - 1]) : "request";
      out[field] = String(item?.msg ?? "invalid");
    }
  } else if (typeof detail === "string") {
    out.request = detail;
  }
  return out;
}

export class ApiClient {
  private base: string;
  private fetchFn: FetchLike;
  private inFlight = new Map<string, Promise<unknown>>();

  constructor(base?: string, fetchFn?: FetchLike) {
    this.base = base ?? baseUrl();
    this.fetchFn = fetchFn ?? fetch.bind(globalThis);
  }

  private request<T>(panel: string, path: string, init?: RequestInit): Promise<T> {
    const pending = this.inFlight.get(panel);
    if (pending) return pending as Promise<T>;
    const p = (async () => {
      const res = await this.fetchFn(this.base + path, init);
      const body = await res.json();
      if (!res.ok) {
        throw new ApiError(
          res.status,
          `request failed with status ${res.status}`,
          fieldErrorsFromDetail((body as { detail?: unknown }).detail),
        );
      }
      return body as T;
    })().finally(() => this.inFlight.delete(panel));
    this.inFlight.set(panel, p);
    return p;
  }

  private post<T>(panel: string, path: string, body: object): Promise<T> {
    return this.request<T>(panel, path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  forecast(req: ForecastRequest): Promise<ForecastPayload> {
    return this.post("forecast", ENDPOINTS.forecast, req);
  }

  explain(req: ForecastRequest): Promise<ExplainPayload> {
    return this.post("explain", ENDPOINTS.explain, req);
  }

  intervene(req: InterveneRequest): Promise<IntervenePayload> {
    return this.post("intervene", ENDPOINTS.intervene, req);
  }

  grid(modelId: string): Promise<GridPayload> {
    const q = encodeURIComponent(modelId);
    return this.request("grid", `${ENDPOINTS.grid}?model_id=${q}`);
  }
}
