"""agentrt: a deterministic agent-runtime kernel and simulation harness.

The package keeps a hard line between stochastic proposal and deterministic
execution: a simulated proposer suggests, deterministic verifiers and state
machines decide, and everything that happened is reconstructible from an
append-only trace. Modules:

- ``sdb``            proposal/verdict boundary and the commit loop
- ``eventlog``       append-only event spine, watermarks, replay, divergence
- ``statestore``     versioned state rows, CAS transitions, timers, snapshots
- ``coordination``   fan-out/merge delegation and compensating scatter-gather
- ``control``        supervision, policy gate, kill/escalation/approval/throttle
- ``selector``       workload classification and decision-record emission
- ``diagnostics``    failure signatures, replay-based triage, drift estimation
- ``observability``  trace lenses and the /v1 HTTP surface
- ``telco``          churn-dataset loading and scenario synthesis
- ``renewal``        the end-to-end contract-renewal simulation
- ``cli``            the ``agentrt`` command-line front door
"""

from __future__ import annotations

from agentrt.clock import DAY_MS, HOUR_MS, MINUTE_MS, SECOND_MS, LogicalClock
from agentrt.trace import AuditRecord, AuditTrail, MissingRequestId, TraceRow, TraceStore

__all__ = [
    "AuditRecord",
    "AuditTrail",
    "DAY_MS",
    "HOUR_MS",
    "LogicalClock",
    "MINUTE_MS",
    "MissingRequestId",
    "SECOND_MS",
    "TraceRow",
    "TraceStore",
]

__version__ = "0.1.0"
