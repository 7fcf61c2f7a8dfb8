/** Browser entry point: wires the session loop to the DOM. The API base
 * comes from ?api=, defaulting to the page's own origin. */

import { ConsoleApi } from "./api.js";
import { armKill, disarmKill } from "./model.js";
import { render, type Handlers } from "./render.js";
import { ConsoleSession } from "./session.js";

const POLL_MS = 750;

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return param ?? window.location.origin;
}

export function boot(root: HTMLElement): void {
  const session = new ConsoleSession(new ConsoleApi(apiBase()));
  const draw = (): void => render(root, session.state, handlers);
  const after = (work: Promise<void>): void => {
    void work.then(draw);
  };
  const handlers: Handlers = {
    selectLens: (lens) => {
      session.selectLens(lens);
      draw();
    },
    pivot: (requestId) => {
      session.pivot(requestId);
      draw();
    },
    approve: (id) => after(session.resolveApproval(id, "approved", "console-operator")),
    deny: (id) => after(session.resolveApproval(id, "denied", "console-operator")),
    resolveEscalation: (id, nextState) => after(session.resolveEscalation(id, nextState, "console-operator")),
    armKill: () => {
      armKill(session.state);
      draw();
    },
    disarmKill: () => {
      disarmKill(session.state);
      draw();
    },
    fireKill: () => after(session.fireKill("console kill switch")),
    setThrottle: (perMinute, perDay, scope) => after(session.setThrottle(perMinute, perDay, scope)),
  };

  const tick = async (): Promise<void> => {
    await session.refresh();
    draw();
  };
  void tick();
  window.setInterval(() => void tick(), POLL_MS);
}

const root = document.getElementById("app");
if (root) boot(root);
