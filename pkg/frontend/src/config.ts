/** Service base URL, injected at build time (falls back for dev). */

declare global {
  // eslint-disable-next-line no-var
  var __AFN_BASE_URL__: string | undefined;
}

export function baseUrl(): string {
  return globalThis.__AFN_BASE_URL__ ?? "http://127.0.0.1:8000";
}
