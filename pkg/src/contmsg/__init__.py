"""contmsg: non-blocking message passing with continuation callbacks.

A continuation (callback + context) is attached to one or more in-flight
operations and invoked once all of them complete.  Continuation requests
aggregate continuations, drive progress when tested or waited on, and carry
the behavior controls (poll_only, enqueue_complete, max_poll, exec_context,
async_signal_safe).  The package also ships the two polling-style
application-space baselines and the scenario harness comparing them.
"""

from . import errors
from .core import (ANY_SOURCE, ANY_TAG, EMPTY_STATUS, ExecContext, InfoConfig,
                   OpHandle, OpKind, OpState, Status, StatusError,
                   info_config_new)
from .engine import (CR_EDGES, ContinuationRequest, CrCounters, CREvent,
                     CRState, Runtime)
from .transport import Endpoint, LoopbackFabric, op_test
from .tcp import TcpFabric, format_roster, parse_roster
from .baseline import ActiveSetManager, RequestGroupManager, testsome
from .taskpool import PollingService, Task, TaskPool, blocking_wait

__version__ = "0.1.0"

__all__ = [
    "ANY_SOURCE", "ANY_TAG", "EMPTY_STATUS",
    "ActiveSetManager", "ContinuationRequest", "CrCounters", "CREvent",
    "CRState", "CR_EDGES", "Endpoint", "ExecContext", "InfoConfig",
    "LoopbackFabric", "OpHandle", "OpKind", "OpState", "PollingService",
    "RequestGroupManager", "Runtime", "Status", "StatusError", "Task",
    "TaskPool", "TcpFabric", "blocking_wait", "errors", "format_roster",
    "info_config_new", "op_test", "parse_roster", "testsome",
    "__version__",
]
