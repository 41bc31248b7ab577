import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiRequestError } from "../src/client.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("retries network failures and succeeds", async () => {
    const fetchImpl = vi
      .fn<typeof fetch>()
      .mockRejectedValueOnce(new TypeError("socket hang up"))
      .mockRejectedValueOnce(new TypeError("socket hang up"))
      .mockResolvedValueOnce(jsonResponse({ status: "ok", model_version: "v1" }));
    const client = new ApiClient("http://x", { fetchImpl, retryDelayMs: 1 });
    const health = await client.health();
    expect(health.model_version).toBe("v1");
    expect(fetchImpl).toHaveBeenCalledTimes(3);
  });

  it("gives up after max retries", async () => {
    const fetchImpl = vi.fn<typeof fetch>().mockRejectedValue(new TypeError("down"));
    const client = new ApiClient("http://x", { fetchImpl, maxRetries: 1, retryDelayMs: 1 });
    await expect(client.health()).rejects.toThrow("down");
    expect(fetchImpl).toHaveBeenCalledTimes(2);
  });

  it("does not retry application errors and surfaces the code", async () => {
    const fetchImpl = vi
      .fn<typeof fetch>()
      .mockResolvedValue(
        jsonResponse({ error: { code: "lease_expired", message: "gone" } }, 409),
      );
    const client = new ApiClient("http://x", { fetchImpl, retryDelayMs: 1 });
    const err = await client.nextTask("s").catch((e) => e);
    expect(err).toBeInstanceOf(ApiRequestError);
    expect(err.code).toBe("lease_expired");
    expect(err.status).toBe(409);
    expect(fetchImpl).toHaveBeenCalledTimes(1);
  });

  it("retries gateway errors", async () => {
    const fetchImpl = vi
      .fn<typeof fetch>()
      .mockResolvedValueOnce(jsonResponse({}, 503))
      .mockResolvedValueOnce(jsonResponse({ done: true }));
    const client = new ApiClient("http://x", { fetchImpl, retryDelayMs: 1 });
    const next = await client.nextTask("s");
    expect(next.done).toBe(true);
    expect(fetchImpl).toHaveBeenCalledTimes(2);
  });

  it("sends the bearer token and JSON body", async () => {
    const fetchImpl = vi
      .fn<typeof fetch>()
      .mockResolvedValue(jsonResponse({ session_id: "s", annotator_id: "a", project_id: "p" }));
    const client = new ApiClient("http://x/", { fetchImpl, token: "sesame" });
    await client.createSession("alice");
    const [url, init] = fetchImpl.mock.calls[0]!;
    expect(url).toBe("http://x/api/v1/sessions");
    expect((init!.headers as Record<string, string>)["Authorization"]).toBe("Bearer sesame");
    expect(JSON.parse(init!.body as string)).toEqual({ annotator_id: "alice" });
  });
});
