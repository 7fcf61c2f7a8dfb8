/**
 * Typed client for the runtime's /v1 surface. Every request the console can
 * make lives here; the rest of the app never touches a URL. 4xx/5xx replies
 * come back as values (status plus parsed body) so the UI can surface the
 * server's wording verbatim; only transport failures throw.
 */

export interface HealthDto {
  status: string;
  logical_time: number;
  trace_rows: number;
  planes_bound: string[];
  [extra: string]: unknown;
}

export interface TraceRowDto {
  request_id: string;
  module: string;
  kind: string;
  payload: Record<string, unknown>;
  logical_time: number;
  model_version: string | null;
  policy_version: string | null;
}

export type LensName = "operational" | "business" | "compliance";
export const LENSES: readonly LensName[] = ["operational", "business", "compliance"];

export interface LensSnapshotDto {
  lens: LensName;
  as_of: number;
  row_count: number;
  aggregates: Record<string, unknown>;
  rows: TraceRowDto[];
}

export interface PendingApprovalDto {
  approval_id: string;
  request_id: string;
  action: Record<string, unknown>;
  opened_at: number;
  sla_deadline: number;
  remaining_ms: number;
}

export interface PendingEscalationDto {
  escalation_id: string;
  row_id: string;
  reason: string;
  opened_at: number;
}

export interface StreamPageDto {
  next_cursor: number;
  rows: TraceRowDto[];
  logical_time: number;
}

export interface PendingReplyDto<T> {
  now: number;
  pending: T[];
}

export interface TraceReplyDto {
  request_id: string;
  rows: TraceRowDto[];
}

export interface ApiReply<T> {
  status: number;
  body: T;
}

export interface ErrorBodyDto {
  error: string;
  [extra: string]: unknown;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ConsoleApi {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async get<T>(path: string): Promise<ApiReply<T>> {
    const resp = await this.fetchFn(this.baseUrl + path);
    return { status: resp.status, body: (await resp.json()) as T };
  }

  private async post<T>(path: string, body: Record<string, unknown>): Promise<ApiReply<T>> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return { status: resp.status, body: (await resp.json()) as T };
  }

  health(): Promise<ApiReply<HealthDto>> {
    return this.get("/v1/health");
  }

  lens(name: LensName): Promise<ApiReply<LensSnapshotDto>> {
    return this.get(`/v1/lens/${name}`);
  }

  trace(requestId: string): Promise<ApiReply<TraceReplyDto>> {
    return this.get(`/v1/trace/${encodeURIComponent(requestId)}`);
  }

  stream(after: number): Promise<ApiReply<StreamPageDto>> {
    return this.get(`/v1/stream?after=${after}`);
  }

  approvalsPending(): Promise<ApiReply<PendingReplyDto<PendingApprovalDto>>> {
    return this.get("/v1/approvals/pending");
  }

  escalationsPending(): Promise<ApiReply<PendingReplyDto<PendingEscalationDto>>> {
    return this.get("/v1/escalations/pending");
  }

  adr(): Promise<ApiReply<Record<string, unknown>>> {
    return this.get("/v1/adr");
  }

  resolveApproval(
    approvalId: string,
    decision: "approved" | "denied",
    resolver = "console",
  ): Promise<ApiReply<Record<string, unknown>>> {
    return this.post(`/v1/approvals/${encodeURIComponent(approvalId)}/resolve`, {
      decision,
      resolver,
    });
  }

  resolveEscalation(
    escalationId: string,
    nextState: string,
    resolver = "console",
  ): Promise<ApiReply<Record<string, unknown>>> {
    return this.post(`/v1/escalations/${encodeURIComponent(escalationId)}/resolution`, {
      next_state: nextState,
      resolver,
    });
  }

  kill(reason: string): Promise<ApiReply<Record<string, unknown>>> {
    return this.post("/v1/kill", { reason });
  }

  setThrottle(perMinute: number, perDay: number, scope?: string): Promise<ApiReply<Record<string, unknown>>> {
    const body: Record<string, unknown> = { per_minute: perMinute, per_day: perDay };
    if (scope) body.scope = scope;
    return this.post("/v1/throttle", body);
  }
}
