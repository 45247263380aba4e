"""Job execution fabrics: a deterministic simulated grid and local worker processes."""

from .agent import AgentError, AgentState, ExecutionRecord, LocalNode, result_names, staged_names
from .local import LocalGrid
from .sim import SimEvent, SimGrid, simulate
from .testbed import (
    InvalidTestbed,
    ServiceModel,
    SimResource,
    fixed,
    format_testbed,
    parse_testbed,
)
from .trace import TraceRow, emit_trace, read_trace, snapshot
