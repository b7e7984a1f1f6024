// Thin fetch client for the engine API. Errors are classified so the app can
// choose between an inline validation message and a retryable error banner.

import type { HealthResponse, QueryResponse } from "./types.js";

export type ApiErrorKind = "validation" | "server" | "network";

export class ApiError extends Error {
  readonly kind: ApiErrorKind;
  readonly status: number | null;

  constructor(kind: ApiErrorKind, message: string, status: number | null = null) {
    super(message);
    this.kind = kind;
    this.status = status;
  }
}

type FetchFn = typeof fetch;

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchFn;

  constructor(baseUrl: string, fetchFn: FetchFn = globalThis.fetch.bind(globalThis)) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  async submitQuery(text: string): Promise<QueryResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/v1/query`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ query: text, include_context: true }),
      });
    } catch (err) {
      throw new ApiError("network", `cannot reach ${this.baseUrl}: ${String(err)}`);
    }
    if (response.status === 422) {
      const detail = await safeErrorMessage(response);
      throw new ApiError("validation", detail ?? "query rejected", 422);
    }
    if (!response.ok) {
      const detail = await safeErrorMessage(response);
      throw new ApiError("server", detail ?? `HTTP ${response.status}`, response.status);
    }
    return (await response.json()) as QueryResponse;
  }

  async health(): Promise<HealthResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/v1/health`);
    } catch (err) {
      throw new ApiError("network", `cannot reach ${this.baseUrl}: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError("server", `HTTP ${response.status}`, response.status);
    }
    return (await response.json()) as HealthResponse;
  }
}

async function safeErrorMessage(response: Response): Promise<string | null> {
  try {
    const body = (await response.json()) as { error?: unknown };
    return typeof body.error === "string" ? body.error : null;
  } catch {
    return null;
  }
}
