/**
 * The polling loop and command glue between the API client and session
 * state. Headless by design: the browser entry point adds DOM rendering on
 * top, and the integration tests drive this directly.
 */

import type { ConsoleApi, LensName } from "./api.js";
import { LENSES } from "./api.js";
import type { SessionState } from "./model.js";
import {
  applyApprovalsPending,
  applyEscalationsPending,
  applyHealth,
  applyLens,
  applyStreamPage,
  markDecisionSent,
  markKillQueued,
  markStale,
  newSession,
  recordError,
  revertDecision,
  selectLens,
  setPivot,
} from "./model.js";

export class ConsoleSession {
  readonly state: SessionState;
  private readonly api: ConsoleApi;

  constructor(api: ConsoleApi) {
    this.api = api;
    this.state = newSession();
  }

  /** One poll tick: pull health, all three lenses, both queues, and drain
   * the stream cursor. Any transport failure flips the stale banner and
   * leaves the last good snapshot on screen. */
  async refresh(): Promise<void> {
    try {
      const health = await this.api.health();
      applyHealth(this.state, health.body.logical_time);
      for (const lens of LENSES) {
        const reply = await this.api.lens(lens);
        if (reply.status === 200) applyLens(this.state, reply.body);
      }
      const approvals = await this.api.approvalsPending();
      if (approvals.status === 200) {
        applyApprovalsPending(this.state, approvals.body.pending, approvals.body.now);
      }
      const escalations = await this.api.escalationsPending();
      if (escalations.status === 200) {
        applyEscalationsPending(this.state, escalations.body.pending, escalations.body.now);
      }
      let page = await this.api.stream(this.state.streamCursor);
      while (page.status === 200 && page.body.rows.length > 0) {
        applyStreamPage(this.state, page.body);
        page = await this.api.stream(this.state.streamCursor);
      }
    } catch {
      markStale(this.state);
    }
  }

  async resolveApproval(approvalId: string, decision: "approved" | "denied", resolver = "console"): Promise<void> {
    markDecisionSent(this.state, approvalId, decision);
    try {
      const reply = await this.api.resolveApproval(approvalId, decision, resolver);
      if (reply.status >= 400) {
        revertDecision(this.state, approvalId);
        recordError(this.state, `approval ${approvalId}: ${JSON.stringify(reply.body)}`);
      }
    } catch {
      revertDecision(this.state, approvalId);
      markStale(this.state);
    }
  }

  async resolveEscalation(escalationId: string, nextState: string, resolver = "console"): Promise<void> {
    try {
      const reply = await this.api.resolveEscalation(escalationId, nextState, resolver);
      if (reply.status >= 400) {
        recordError(this.state, `escalation ${escalationId}: ${JSON.stringify(reply.body)}`);
      }
    } catch {
      markStale(this.state);
    }
  }

  async fireKill(reason = "console kill"): Promise<void> {
    try {
      const reply = await this.api.kill(reason);
      if (reply.status === 202) {
        markKillQueued(this.state);
      } else {
        recordError(this.state, `kill: ${JSON.stringify(reply.body)}`);
      }
    } catch {
      markStale(this.state);
    }
  }

  async setThrottle(perMinute: number, perDay: number, scope: string): Promise<void> {
    try {
      const reply = await this.api.setThrottle(perMinute, perDay, scope || undefined);
      if (reply.status >= 400) {
        recordError(this.state, `throttle: ${JSON.stringify(reply.body)}`);
      }
    } catch {
      markStale(this.state);
    }
  }

  selectLens(lens: LensName): void {
    selectLens(this.state, lens);
  }

  pivot(requestId: string | null): void {
    setPivot(this.state, requestId);
  }
}
