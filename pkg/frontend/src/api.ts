import type {
  ApiError,
  FlagRecord,
  QueuePayload,
  RelatedPayload,
  SessionDetail,
  Verdict,
} from "./types.js";

export interface ClientConfig {
  baseUrl: string;
  token?: string;
  fetchImpl?: typeof fetch;
}

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

/** Thin typed client; all ranking and scoring stays on the server. */
export class ApiClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchImpl: typeof fetch;

  constructor(config: ClientConfig) {
    this.baseUrl = config.baseUrl.replace(/\/+$/, "");
    this.token = config.token;
    this.fetchImpl = config.fetchImpl ?? fetch;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const headers: Record<string, string> = {
      ...(init?.headers as Record<string, string> | undefined),
    };
    if (this.token) {
      headers["X-Proctor-Token"] = this.token;
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      ...init,
      headers,
    });
    if (!response.ok) {
      let payload: Partial<ApiError> = {};
      try {
        payload = (await response.json()) as ApiError;
      } catch {
        // non-JSON error body; fall through with generic fields
      }
      throw new ApiRequestError(
        response.status,
        payload.code ?? "http_error",
        payload.message ?? `HTTP ${response.status}`,
      );
    }
    return (await response.json()) as T;
  }

  getQueue(limit = 50): Promise<QueuePayload> {
    return this.request<QueuePayload>(`/v1/queue?limit=${limit}`);
  }

  getSession(sessionId: string): Promise<SessionDetail> {
    return this.request<SessionDetail>(
      `/v1/sessions/${encodeURIComponent(sessionId)}`,
    );
  }

  getRelated(sessionId: string, topK = 8): Promise<RelatedPayload> {
    return this.request<RelatedPayload>(
      `/v1/sessions/${encodeURIComponent(sessionId)}/related?top_k=${topK}`,
    );
  }

  submitReview(
    sessionId: string,
    verdict: Verdict,
    note: string,
  ): Promise<FlagRecord> {
    return this.request<FlagRecord>(
      `/v1/flags/${encodeURIComponent(sessionId)}/review`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ verdict, note }),
      },
    );
  }

  health(): Promise<{
    status: string;
    model_version: string | null;
    threshold: number | null;
    gallery_size: number;
  }> {
    return this.request("/v1/health");
  }
}

/** Badges show similarities at fixed precision; values come from the API
 * verbatim and are never recomputed client-side. */
export function formatSimilarity(value: number): string {
  return value.toFixed(4);
}

export function formatTimestamp(ms: number): string {
  return new Date(ms).toISOString().replace("T", " ").slice(0, 19);
}
