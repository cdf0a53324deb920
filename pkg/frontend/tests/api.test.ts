import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api";
import forecastFixture from "../fixtures/forecast.json";

function okResponse(body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status: 200,
    headers: { "content-type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("prefixes requests with the configured base URL", async () => {
    const fetchFn = vi.fn(async () => okResponse({ ok: true }));
    const client = new ApiClient("http://svc:9000", fetchFn);
    await client.grid("demo");
    expect(fetchFn).toHaveBeenCalledWith(
      "http://svc:9000/grid?model_id=demo",
      undefined,
    );
  });

  it("de-duplicates in-flight requests per panel", async () => {
    let release!: (r: Response) => void;
    const gate = new Promise<Response>((res) => (release = res));
    const fetchFn = vi.fn(() => gate);
    const client = new ApiClient("http://svc", fetchFn as unknown as typeof fetch);
    const req = { model_id: "demo", values: [[1, 2]], horizon: 3 };
    const p1 = client.forecast(req);
    const p2 = client.forecast(req);
    release(okResponse(forecastFixture));
    const [r1, r2] = await Promise.all([p1, p2]);
    expect(fetchFn).toHaveBeenCalledTimes(1);
    expect(r1).toEqual(r2);
  });

  it("issues a fresh request after the previous one settles", async () => {
    const fetchFn = vi.fn(async () => okResponse(forecastFixture));
    const client = new ApiClient("http://svc", fetchFn);
    const req = { model_id: "demo", values: [[1, 2]], horizon: 3 };
    await client.forecast(req);
    await client.forecast(req);
    expect(fetchFn).toHaveBeenCalledTimes(2);
  });

  it("does not de-duplicate across panels", async () => {
    const fetchFn = vi.fn(async () => okResponse({}));
    const client = new ApiClient("http://svc", fetchFn);
    const req = { model_id: "demo", values: [[1, 2]], horizon: 3 };
    await Promise.all([client.forecast(req), client.explain(req)]);
    expect(fetchFn).toHaveBeenCalledTimes(2);
  });

  it("turns 422 validation details into field errors", async () => {
    const body = {
      detail: [{ loc: ["body", "reduction_pct"], msg: "out of range" }],
    };
    const fetchFn = vi.fn(async () => new Response(JSON.stringify(body), {
      status: 422,
    }));
    const client = new ApiClient("http://svc", fetchFn);
    const err = await client
      .intervene({
        model_id: "demo",
        values: [[1]],
        horizon: 1,
        feature: "f",
        reduction_pct: 150,
        steps: "auto",
      })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(422);
    expect(err.fieldErrors.reduction_pct).toBe("out of range");
  });

  it("turns string details into a request-level error", async () => {
    const fetchFn = vi.fn(async () => new Response(
      JSON.stringify({ detail: "unknown model" }),
      { status: 404 },
    ));
    const client = new ApiClient("http://svc", fetchFn);
    const err = await client.grid("nope").catch((e) => e);
    expect(err.fieldErrors.request).toBe("unknown model");
  });
});
