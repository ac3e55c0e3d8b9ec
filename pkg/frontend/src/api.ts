import type {
  AlertDetail,
  AlertPage,
  FeedbackResponse,
  Health,
  ModelsResponse,
  RetrainResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

/** Thin typed client; every call resolves to parsed JSON or throws ApiError. */
export class ApiClient {
  constructor(readonly base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `cannot reach service: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = `${response.status} ${response.statusText}`.trim();
      try {
        const body: unknown = await response.json();
        if (body && typeof body === "object" && typeof (body as { detail?: unknown }).detail === "string") {
          detail = (body as { detail: string }).detail;
        }
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response.json() as Promise<T>;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<Health> {
    return this.request("/api/v1/health");
  }

  listAlerts(opts: { status?: string; page?: number; pageSize?: number } = {}): Promise<AlertPage> {
    const query = new URLSearchParams();
    if (opts.status) query.set("status", opts.status);
    if (opts.page) query.set("page", String(opts.page));
    if (opts.pageSize) query.set("page_size", String(opts.pageSize));
    const qs = query.toString();
    return this.request(`/api/v1/alerts${qs ? "?" + qs : ""}`);
  }

  getAlert(alertId: string): Promise<AlertDetail> {
    return this.request(`/api/v1/alerts/${encodeURIComponent(alertId)}`);
  }

  submitFeedback(alertId: string, verdict: string, analyst: string): Promise<FeedbackResponse> {
    return this.post(`/api/v1/alerts/${encodeURIComponent(alertId)}/feedback`, { verdict, analyst });
  }

  retrain(lam?: number): Promise<RetrainResponse> {
    return this.post("/api/v1/retrain", lam == null ? {} : { lam });
  }

  models(): Promise<ModelsResponse> {
    return this.request("/api/v1/models");
  }

  async pendingFeedback(): Promise<number> {
    const body = await this.request<{ pending: number }>("/api/v1/feedback/pending");
    return body.pending;
  }
}
