import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
// @ts-expect-error plain .mjs module without type declarations
import { startMockServer } from "../mock/server.mjs";

let mock: { port: number; close: () => Promise<void> };
let client: ApiClient;

beforeAll(async () => {
  mock = await startMockServer();
  client = new ApiClient(`http://127.0.0.1:${mock.port}`);
});

afterAll(async () => {
  await mock.close();
});

describe("ApiClient.submitQuery", () => {
  it("returns the recorded envelope for a known query", async () => {
    const envelope = await client.submitQuery("What is CVE-2017-5162?");
    expect(envelope.path).toBe("structured");
    expect(envelope.answer).toContain("BINOM3");
    expect(envelope.refined?.expanded[0]).toBe(envelope.refined?.substituted);
  });

  it("classifies 422 as a validation error", async () => {
    const err = await client.submitQuery("   ").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).kind).toBe("validation");
    expect((err as ApiError).status).toBe(422);
  });

  it("classifies 5xx as a server error", async () => {
    const err = await client.submitQuery("FORCE_ERROR please").catch((e: unknown) => e);
    expect((err as ApiError).kind).toBe("server");
  });

  it("classifies unreachable hosts as network errors", async () => {
    const dead = new ApiClient("http://127.0.0.1:1");
    const err = await dead.submitQuery("hello").catch((e: unknown) => e);
    expect((err as ApiError).kind).toBe("network");
  });
});

describe("ApiClient.health", () => {
  it("returns partitions and reachability", async () => {
    const health = await client.health();
    expect(health.status).toBe("ok");
    expect(health.kb_partitions.length).toBeGreaterThan(0);
  });
});
