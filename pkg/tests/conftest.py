from __future__ import annotations

import pytest

from agentrt.clock import LogicalClock
from agentrt.trace import AuditTrail, TraceStore


@pytest.fixture
def clock() -> LogicalClock:
    return LogicalClock()


@pytest.fixture
def trace() -> TraceStore:
    return TraceStore()


@pytest.fixture
def audit(trace: TraceStore) -> AuditTrail:
    return AuditTrail(trace)
