// Thin typed client over the management API. The fetch implementation is
// injectable so the logic is testable without a browser or server.

import type {
  EventRecord,
  GraphDoc,
  GraphResponse,
  PlanResult,
  StatusDoc,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; text(): Promise<string> }>;

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public detail: unknown = null,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: { method: string; headers: Record<string, string>; body?: string } = {
      method,
      headers: {},
    };
    if (body !== undefined) {
      if (typeof body === "string") {
        init.headers["Content-Type"] = "text/plain";
        init.body = body;
      } else {
        init.headers["Content-Type"] = "application/json";
        init.body = JSON.stringify(body);
      }
    }
    const response = await this.fetchImpl(this.base + path, init);
    const text = await response.text();
    let payload: unknown = null;
    if (text) {
      try {
        payload = JSON.parse(text);
      } catch {
        payload = text;
      }
    }
    if (response.status >= 400) {
      const err = (payload ?? {}) as { code?: string; message?: string; detail?: unknown };
      throw new ApiError(err.code ?? "http", err.message ?? `HTTP ${response.status}`, err.detail);
    }
    return payload as T;
  }

  getGraph(): Promise<GraphResponse> {
    return this.request("GET", "/graph");
  }

  putGraph(doc: GraphDoc | string): Promise<GraphResponse> {
    return this.request("PUT", "/graph", doc);
  }

  graphFileText(): Promise<string> {
    return this.request("GET", "/graph/file");
  }

  validate(): Promise<{ findings: GraphResponse["findings"] }> {
    return this.request("POST", "/graph/validate", {});
  }

  translate(): Promise<{ commands: string[] }> {
    return this.request("POST", "/graph/translate", {});
  }

  executePlan(): Promise<PlanResult> {
    return this.request("POST", "/plan/execute", {});
  }

  startGmt(config: string): Promise<{ endpoint: string }> {
    return this.request("POST", "/gmt/start", { config });
  }

  startNode(name: string): Promise<{ name: string; running: boolean }> {
    return this.request("POST", `/nodes/${encodeURIComponent(name)}/start`, {});
  }

  stopNode(name: string): Promise<{ name: string; running: boolean }> {
    return this.request("POST", `/nodes/${encodeURIComponent(name)}/stop`, {});
  }

  registerNode(name: string): Promise<Record<string, unknown>> {
    return this.request("POST", `/nodes/${encodeURIComponent(name)}/register`, {});
  }

  allocate(args: {
    node_id: number;
    tier_type: string;
    config: string;
    dst_index?: number | null;
    count?: number;
  }): Promise<unknown[]> {
    return this.request("POST", "/allocate", args);
  }

  deallocate(args: {
    node_id: number;
    tier_type: string;
    tier_ids: (string | number)[];
  }): Promise<unknown[]> {
    return this.request("POST", "/deallocate", args);
  }

  startEval(tier: string): Promise<Record<string, unknown>> {
    return this.request("POST", "/eval/start", { tier });
  }

  stepGenerator(tier: string, count = 1): Promise<Record<string, unknown>> {
    return this.request("POST", "/eval/step", { tier, count });
  }

  status(): Promise<StatusDoc> {
    return this.request("GET", "/status");
  }

  eventsAfter(seq: number, limit = 1000): Promise<EventRecord[]> {
    return this.request<{ events: EventRecord[] }>(
      "GET",
      `/events/list?from=${seq}&limit=${limit}`,
    ).then((r) => r.events);
  }
}
