/**
 * Session state and the pure functions that evolve it. Everything here is
 * reconstructible from the server: lens snapshots, pending queues, and the
 * trace stream are the only inputs, so a page refresh loses nothing.
 *
 * Time is server logical time throughout. SLA countdowns compare an
 * approval's deadline against the newest logical_time any reply carried;
 * the client wall clock is never consulted.
 */

import type {
  LensName,
  LensSnapshotDto,
  PendingApprovalDto,
  PendingEscalationDto,
  StreamPageDto,
  TraceRowDto,
} from "./api.js";
import { LENSES } from "./api.js";

export type ApprovalPhase =
  | { kind: "open" }
  | { kind: "sent"; decision: "approved" | "denied" }
  | { kind: "resolved"; decision: string; resolver: string }
  | { kind: "lapsed" };

export interface ApprovalItem {
  approvalId: string;
  requestId: string;
  action: Record<string, unknown>;
  openedAt: number;
  slaDeadline: number;
  phase: ApprovalPhase;
  stillPending: boolean;
}

export type KillState = "safe" | "armed" | "queued" | "revoked";

export interface SessionState {
  selectedLens: LensName;
  pivotRequestId: string | null;
  logicalNow: number;
  lastAsOf: number | null;
  stale: boolean;
  lenses: Partial<Record<LensName, LensSnapshotDto>>;
  approvals: Map<string, ApprovalItem>;
  escalations: PendingEscalationDto[];
  kill: KillState;
  streamCursor: number;
  tail: TraceRowDto[];
  errors: string[];
}

const TAIL_LIMIT = 400;
const ERROR_LIMIT = 8;

export function newSession(): SessionState {
  return {
    selectedLens: "operational",
    pivotRequestId: null,
    logicalNow: 0,
    lastAsOf: null,
    stale: false,
    lenses: {},
    approvals: new Map(),
    escalations: [],
    kill: "safe",
    streamCursor: 0,
    tail: [],
    errors: [],
  };
}

function bumpClock(state: SessionState, logicalTime: number): void {
  if (logicalTime > state.logicalNow) state.logicalNow = logicalTime;
  state.stale = false;
}

export function applyHealth(state: SessionState, logicalTime: number): void {
  bumpClock(state, logicalTime);
}

export function applyLens(state: SessionState, snapshot: LensSnapshotDto): void {
  state.lenses[snapshot.lens] = snapshot;
  state.lastAsOf = snapshot.as_of;
  bumpClock(state, snapshot.as_of);
}

export function applyApprovalsPending(
  state: SessionState,
  pending: PendingApprovalDto[],
  now: number,
): void {
  bumpClock(state, now);
  const open = new Set(pending.map((p) => p.approval_id));
  for (const dto of pending) {
    const existing = state.approvals.get(dto.approval_id);
    if (existing) {
      existing.stillPending = true;
      continue; // a sent decision stays sent until the stream settles it
    }
    state.approvals.set(dto.approval_id, {
      approvalId: dto.approval_id,
      requestId: dto.request_id,
      action: dto.action,
      openedAt: dto.opened_at,
      slaDeadline: dto.sla_deadline,
      phase: { kind: "open" },
      stillPending: true,
    });
  }
  for (const item of state.approvals.values()) {
    if (!open.has(item.approvalId)) item.stillPending = false;
  }
}

export function applyEscalationsPending(
  state: SessionState,
  pending: PendingEscalationDto[],
  now: number,
): void {
  bumpClock(state, now);
  state.escalations = pending;
}

export function applyStreamPage(state: SessionState, page: StreamPageDto): void {
  if (page.next_cursor > state.streamCursor) state.streamCursor = page.next_cursor;
  bumpClock(state, page.logical_time);
  for (const row of page.rows) {
    state.tail.push(row);
    if (row.kind === "approval" && row.payload["event"] === "resolved") {
      const item = state.approvals.get(String(row.payload["approval_id"]));
      if (item) {
        item.phase = {
          kind: "resolved",
          decision: String(row.payload["decision"]),
          resolver: String(row.payload["resolver"]),
        };
      }
    }
    if (row.kind === "audit" && row.payload["plane"] === "kill") {
      state.kill = "revoked";
    }
  }
  if (state.tail.length > TAIL_LIMIT) {
    state.tail.splice(0, state.tail.length - TAIL_LIMIT);
  }
}

export function markStale(state: SessionState): void {
  state.stale = true;
}

export function recordError(state: SessionState, text: string): void {
  state.errors.push(text);
  if (state.errors.length > ERROR_LIMIT) {
    state.errors.splice(0, state.errors.length - ERROR_LIMIT);
  }
}

// -- approvals

export function slaRemainingMs(item: ApprovalItem, logicalNow: number): number {
  return Math.max(0, item.slaDeadline - logicalNow);
}

/**
 * What the inbox shows for an item right now. A countdown that has reached
 * zero reads as the conservative deny even before the server's resolution
 * row arrives; the stream settles the final wording.
 */
export function approvalDisplay(item: ApprovalItem, logicalNow: number): string {
  if (item.phase.kind === "resolved") return item.phase.decision;
  if (item.phase.kind === "sent") return `${item.phase.decision} (sent)`;
  if (slaRemainingMs(item, logicalNow) === 0) return "sla_expired_denied";
  return "open";
}

export function approvalActionable(item: ApprovalItem, logicalNow: number): boolean {
  return item.phase.kind === "open" && slaRemainingMs(item, logicalNow) > 0;
}

export function markDecisionSent(
  state: SessionState,
  approvalId: string,
  decision: "approved" | "denied",
): void {
  const item = state.approvals.get(approvalId);
  if (item && item.phase.kind === "open") item.phase = { kind: "sent", decision };
}

/** Revert an optimistic mark after the server refused the command. */
export function revertDecision(state: SessionState, approvalId: string): void {
  const item = state.approvals.get(approvalId);
  if (item && item.phase.kind === "sent") item.phase = { kind: "open" };
}

export function inboxItems(state: SessionState): ApprovalItem[] {
  return [...state.approvals.values()].sort((a, b) =>
    a.approvalId < b.approvalId ? -1 : a.approvalId > b.approvalId ? 1 : 0,
  );
}

// -- countdown formatting

export function formatCountdown(ms: number): string {
  if (ms <= 0) return "0s";
  const s = Math.floor(ms / 1000);
  const days = Math.floor(s / 86_400);
  const hours = Math.floor((s % 86_400) / 3600);
  const minutes = Math.floor((s % 3600) / 60);
  const seconds = s % 60;
  if (days > 0) return `${days}d ${hours}h`;
  if (hours > 0) return `${hours}h ${minutes}m`;
  if (minutes > 0) return `${minutes}m ${seconds}s`;
  return `${seconds}s`;
}

// -- pivot

export function setPivot(state: SessionState, requestId: string | null): void {
  state.pivotRequestId = requestId;
}

/** Rows of one lens under the current pivot; all three views share it. */
export function visibleRows(state: SessionState, lens: LensName): TraceRowDto[] {
  const snapshot = state.lenses[lens];
  if (!snapshot) return [];
  if (state.pivotRequestId === null) return snapshot.rows;
  return snapshot.rows.filter((r) => r.request_id === state.pivotRequestId);
}

export function selectLens(state: SessionState, lens: LensName): void {
  if ((LENSES as readonly string[]).includes(lens)) state.selectedLens = lens;
}

// -- kill switch

export function armKill(state: SessionState): void {
  if (state.kill === "safe") state.kill = "armed";
}

export function disarmKill(state: SessionState): void {
  if (state.kill === "armed") state.kill = "safe";
}

export function markKillQueued(state: SessionState): void {
  if (state.kill !== "revoked") state.kill = "queued";
}
