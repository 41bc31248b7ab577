/**
 * Typed API client with idempotent retry.
 *
 * Network failures (fetch rejections) are retried with backoff; the
 * server deduplicates decisions by content, so a retried POST after a
 * lost response stores exactly one decision. Application errors (4xx)
 * are never retried - they surface as ApiRequestError with the server's
 * machine-readable code.
 */
import type {
  DecisionAck,
  DecisionRequest,
  HealthResponse,
  NextResponse,
  RetrainRequest,
  RetrainResponse,
  SessionResponse,
  StatsResponse,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiRequestError";
  }
}

export interface ClientOptions {
  token?: string;
  maxRetries?: number;
  retryDelayMs?: number;
  fetchImpl?: typeof fetch;
}

const RETRIABLE_STATUS = new Set([502, 503, 504]);

export class ApiClient {
  private readonly base: string;
  private readonly token?: string;
  private readonly maxRetries: number;
  private readonly retryDelayMs: number;
  private readonly fetchImpl: typeof fetch;

  constructor(baseUrl: string, options: ClientOptions = {}) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.token = options.token;
    this.maxRetries = options.maxRetries ?? 2;
    this.retryDelayMs = options.retryDelayMs ?? 250;
    // wrap the global so window-bound implementations keep their `this`
    this.fetchImpl = options.fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let lastError: Error | null = null;
    for (let attempt = 0; attempt <= this.maxRetries; attempt++) {
      let response: Response;
      try {
        response = await this.fetchImpl(`${this.base}${path}`, {
          method,
          headers,
          body: body === undefined ? undefined : JSON.stringify(body),
        });
      } catch (err) {
        // network failure: safe to retry, the server is idempotent
        lastError = err instanceof Error ? err : new Error(String(err));
        if (attempt < this.maxRetries) {
          await sleep(this.retryDelayMs * (attempt + 1));
          continue;
        }
        throw lastError;
      }
      if (response.ok) {
        return (await response.json()) as T;
      }
      if (RETRIABLE_STATUS.has(response.status) && attempt < this.maxRetries) {
        await sleep(this.retryDelayMs * (attempt + 1));
        continue;
      }
      throw await toApiError(response);
    }
    throw lastError ?? new Error("request failed");
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  createSession(annotatorId: string): Promise<SessionResponse> {
    return this.request("POST", "/api/v1/sessions", { annotator_id: annotatorId });
  }

  nextTask(sessionId: string): Promise<NextResponse> {
    return this.request("GET", `/api/v1/sessions/${sessionId}/next`);
  }

  submitDecision(sessionId: string, decision: DecisionRequest): Promise<DecisionAck> {
    return this.request("POST", `/api/v1/sessions/${sessionId}/decisions`, decision);
  }

  retrain(projectId: string, body: RetrainRequest = {}): Promise<RetrainResponse> {
    return this.request("POST", `/api/v1/projects/${projectId}/retrain`, body);
  }

  stats(projectId: string): Promise<StatsResponse> {
    return this.request("GET", `/api/v1/projects/${projectId}/stats`);
  }
}

async function toApiError(response: Response): Promise<ApiRequestError> {
  let code = `http_${response.status}`;
  let message = response.statusText;
  try {
    const body = (await response.json()) as { error?: { code?: string; message?: string } };
    if (body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiRequestError(code, message, response.status);
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
