/** DOM rendering. One render(root, state, handlers) call redraws the page
 * from session state alone, which keeps refresh trivially safe: there is
 * nothing on screen the next snapshot cannot rebuild. */

import type { LensName, TraceRowDto } from "./api.js";
import { LENSES } from "./api.js";
import type { SessionState } from "./model.js";
import {
  approvalActionable,
  approvalDisplay,
  formatCountdown,
  inboxItems,
  slaRemainingMs,
  visibleRows,
} from "./model.js";

export interface Handlers {
  selectLens(lens: LensName): void;
  pivot(requestId: string | null): void;
  approve(approvalId: string): void;
  deny(approvalId: string): void;
  resolveEscalation(escalationId: string, nextState: string): void;
  armKill(): void;
  disarmKill(): void;
  fireKill(): void;
  setThrottle(perMinute: number, perDay: number, scope: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) node.append(child);
  return node;
}

function requestIdButton(requestId: string, handlers: Handlers): HTMLButtonElement {
  const button = el("button", { class: "rid", "data-rid": requestId }, [requestId]);
  button.addEventListener("click", () => handlers.pivot(requestId));
  return button;
}

function compactJson(value: unknown, limit = 140): string {
  const text = JSON.stringify(value);
  return text.length > limit ? text.slice(0, limit - 1) + "…" : text;
}

function renderStaleBanner(state: SessionState): HTMLElement | null {
  if (!state.stale) return null;
  const asOf = state.lastAsOf === null ? "never" : String(state.lastAsOf);
  return el("div", { class: "banner stale", role: "alert" }, [
    `connection lost, showing data as of logical time ${asOf}`,
  ]);
}

function renderErrors(state: SessionState): HTMLElement | null {
  if (state.errors.length === 0) return null;
  return el(
    "ul",
    { class: "errors" },
    state.errors.map((text) => el("li", {}, [text])),
  );
}

function renderTabs(state: SessionState, handlers: Handlers): HTMLElement {
  const tabs = LENSES.map((lens) => {
    const selected = lens === state.selectedLens;
    const tab = el("button", { class: selected ? "tab selected" : "tab", "data-lens": lens }, [lens]);
    tab.addEventListener("click", () => handlers.selectLens(lens));
    return tab;
  });
  return el("nav", { class: "tabs" }, tabs);
}

function renderAggregates(state: SessionState): HTMLElement {
  const snapshot = state.lenses[state.selectedLens];
  const dl = el("dl", { class: "aggregates" });
  if (!snapshot) {
    dl.append(el("dt", {}, ["waiting for first snapshot"]));
    return dl;
  }
  for (const [key, value] of Object.entries(snapshot.aggregates)) {
    dl.append(el("dt", {}, [key]));
    dl.append(el("dd", {}, [typeof value === "number" ? String(value) : compactJson(value, 400)]));
  }
  return dl;
}

function renderRowTable(rows: TraceRowDto[], handlers: Handlers): HTMLElement {
  const header = el("tr", {}, [
    el("th", {}, ["request_id"]),
    el("th", {}, ["t"]),
    el("th", {}, ["kind"]),
    el("th", {}, ["module"]),
    el("th", {}, ["payload"]),
    el("th", {}, ["versions"]),
  ]);
  const body = rows.map((row) => {
    const versions = [row.model_version, row.policy_version].filter(Boolean).join(" / ");
    return el("tr", { class: "trace-row" }, [
      el("td", {}, [requestIdButton(row.request_id, handlers)]),
      el("td", {}, [String(row.logical_time)]),
      el("td", {}, [row.kind]),
      el("td", {}, [row.module]),
      el("td", { class: "payload" }, [compactJson(row.payload)]),
      el("td", {}, [versions]),
    ]);
  });
  return el("table", { class: "rows" }, [header, ...body]);
}

function renderLensPane(state: SessionState, handlers: Handlers): HTMLElement {
  const snapshot = state.lenses[state.selectedLens];
  const asOf = snapshot ? String(snapshot.as_of) : "-";
  const pane = el("section", { class: "lens-pane" }, [
    el("h2", {}, [`${state.selectedLens} lens`]),
    el("p", { class: "as-of" }, [`as of logical time ${asOf}`]),
  ]);
  if (state.pivotRequestId !== null) {
    const clear = el("button", { class: "clear-pivot" }, ["clear"]);
    clear.addEventListener("click", () => handlers.pivot(null));
    pane.append(el("p", { class: "pivot-note" }, [`pivoted to ${state.pivotRequestId} `, clear]));
  }
  pane.append(renderAggregates(state));
  pane.append(renderRowTable(visibleRows(state, state.selectedLens), handlers));
  return pane;
}

function renderInbox(state: SessionState, handlers: Handlers): HTMLElement {
  const section = el("section", { class: "inbox" }, [el("h2", {}, ["approvals"])]);
  const items = inboxItems(state);
  if (items.length === 0) {
    section.append(el("p", { class: "empty" }, ["inbox empty"]));
    return section;
  }
  for (const item of items) {
    const remaining = slaRemainingMs(item, state.logicalNow);
    const display = approvalDisplay(item, state.logicalNow);
    const card = el("div", { class: "approval", "data-approval": item.approvalId }, [
      el("span", { class: "approval-id" }, [item.approvalId]),
      requestIdButton(item.requestId, handlers),
      el("span", { class: "action" }, [compactJson(item.action)]),
      el("span", { class: "sla", "data-remaining": String(remaining) }, [
        `SLA ${formatCountdown(remaining)}`,
      ]),
      el("span", { class: `status status-${display.replaceAll(" ", "-")}` }, [display]),
    ]);
    if (approvalActionable(item, state.logicalNow)) {
      const approve = el("button", { class: "approve" }, ["approve"]);
      approve.addEventListener("click", () => handlers.approve(item.approvalId));
      const deny = el("button", { class: "deny" }, ["deny"]);
      deny.addEventListener("click", () => handlers.deny(item.approvalId));
      card.append(approve, deny);
    }
    section.append(card);
  }
  return section;
}

function renderEscalations(state: SessionState, handlers: Handlers): HTMLElement {
  const section = el("section", { class: "escalations" }, [el("h2", {}, ["escalations"])]);
  if (state.escalations.length === 0) {
    section.append(el("p", { class: "empty" }, ["none open"]));
    return section;
  }
  for (const esc of state.escalations) {
    const input = el("input", {
      class: "next-state",
      value: "outreach_sent",
      "aria-label": `next state for ${esc.escalation_id}`,
    });
    const submit = el("button", { class: "resolve" }, ["resolve"]);
    submit.addEventListener("click", () => handlers.resolveEscalation(esc.escalation_id, input.value));
    section.append(
      el("div", { class: "escalation", "data-escalation": esc.escalation_id }, [
        el("span", { class: "escalation-id" }, [esc.escalation_id]),
        requestIdButton(esc.row_id, handlers),
        el("span", { class: "reason" }, [esc.reason]),
        input,
        submit,
      ]),
    );
  }
  return section;
}

function renderKill(state: SessionState, handlers: Handlers): HTMLElement {
  const section = el("section", { class: "kill" }, [el("h2", {}, ["kill switch"])]);
  if (state.kill === "safe") {
    const arm = el("button", { class: "arm-kill" }, ["arm kill switch"]);
    arm.addEventListener("click", () => handlers.armKill());
    section.append(arm);
  } else if (state.kill === "armed") {
    const fire = el("button", { class: "fire-kill" }, ["confirm kill"]);
    fire.addEventListener("click", () => handlers.fireKill());
    const disarm = el("button", { class: "disarm-kill" }, ["stand down"]);
    disarm.addEventListener("click", () => handlers.disarmKill());
    section.append(fire, disarm);
  } else {
    section.append(el("p", { class: `kill-state kill-${state.kill}` }, [state.kill]));
  }
  return section;
}

function renderThrottle(handlers: Handlers): HTMLElement {
  const perMinute = el("input", { class: "per-minute", type: "number", value: "25", min: "1" });
  const perDay = el("input", { class: "per-day", type: "number", value: "2000", min: "1" });
  const scope = el("input", { class: "scope", placeholder: "scope (optional)" });
  const apply = el("button", { class: "apply-throttle" }, ["apply caps"]);
  apply.addEventListener("click", () => {
    handlers.setThrottle(Number(perMinute.value), Number(perDay.value), scope.value.trim());
  });
  return el("section", { class: "throttle" }, [
    el("h2", {}, ["throttle"]),
    el("label", {}, ["per minute ", perMinute]),
    el("label", {}, ["per day ", perDay]),
    scope,
    apply,
  ]);
}

export function render(root: HTMLElement, state: SessionState, handlers: Handlers): void {
  root.replaceChildren();
  const banner = renderStaleBanner(state);
  if (banner) root.append(banner);
  const errors = renderErrors(state);
  if (errors) root.append(errors);
  root.append(
    el("header", {}, [
      el("h1", {}, ["operations console"]),
      el("span", { class: "logical-now" }, [`logical time ${state.logicalNow}`]),
    ]),
    renderTabs(state, handlers),
    renderLensPane(state, handlers),
    el("aside", { class: "rail" }, [
      renderInbox(state, handlers),
      renderEscalations(state, handlers),
      renderKill(state, handlers),
      renderThrottle(handlers),
    ]),
  );
}
