"""Core domain types: operation handles, statuses, and behavior configuration.

Everything here is plain data.  Matching, completion, and continuation
dispatch live in :mod:`contmsg.transport` and :mod:`contmsg.engine`; the
types below are mutated only under those modules' locks.
"""

from __future__ import annotations

import enum
import itertools
from typing import NamedTuple

from . import errors

# Wildcards for receive matching.  Application tags are 64-bit unsigned,
# so a negative sentinel can never collide with one.
ANY_SOURCE = -1
ANY_TAG = -1

MAX_TAG = 2**64 - 1

_op_ids = itertools.count(1)


class OpKind(enum.Enum):
    SEND = "send"
    RECV = "recv"
    PERSISTENT_SEND = "persistent_send"
    PERSISTENT_RECV = "persistent_recv"


class OpState(enum.Enum):
    INACTIVE = "inactive"
    ACTIVE = "active"
    COMPLETE = "complete"
    CANCELLED = "cancelled"
    CONSUMED = "consumed"


class StatusError(enum.Enum):
    OK = "ok"
    TRUNCATED = "truncated"


class ExecContext(enum.Enum):
    APPLICATION = "application"
    ANY = "any"


class Status(NamedTuple):
    """Completion record for one operation.  Immutable once written.

    For a completed send: source is the sender's own rank, tag is the send
    tag, count is the number of bytes sent.  For a cancelled receive the
    count is zero and error is OK.
    """

    source: int
    tag: int
    count: int
    cancelled: bool = False
    error: StatusError = StatusError.OK


#: Status written for operands that are continuation requests (which carry
#: no message of their own) when statuses are collected.
EMPTY_STATUS = Status(source=0, tag=0, count=0, cancelled=False, error=StatusError.OK)


class OpHandle:
    """Handle for one non-blocking send or receive.

    Non-persistent handles move ACTIVE -> COMPLETE/CANCELLED and become
    CONSUMED as soon as a continuation is attached (the engine keeps driving
    the underlying operation; the handle itself is then unusable for
    cancel/test/start).  Persistent handles cycle INACTIVE -> ACTIVE ->
    COMPLETE/CANCELLED -> INACTIVE and accept one continuation per
    activation.
    """

    __slots__ = (
        "id", "kind", "state", "persistent", "endpoint",
        "peer", "tag", "payload", "capacity", "source_filter",
        "data", "_status", "_done", "_slot", "_seq",
    )

    def __init__(self, kind: OpKind, endpoint, *, peer: int = -1, tag: int = 0,
                 payload: bytes = b"", capacity: int = 0,
                 source_filter: int = ANY_SOURCE):
        self.id = next(_op_ids)
        self.kind = kind
        self.endpoint = endpoint
        self.persistent = kind in (OpKind.PERSISTENT_SEND, OpKind.PERSISTENT_RECV)
        self.state = OpState.INACTIVE if self.persistent else OpState.ACTIVE
        self.peer = peer
        self.tag = tag
        self.payload = payload
        self.capacity = capacity
        self.source_filter = source_filter
        self.data: bytes | None = None   # delivered payload, clipped to capacity
        self._status: Status | None = None
        self._done = False
        self._slot = None                # (continuation group, operand index)
        self._seq = 0                    # posting order within the endpoint

    @property
    def status(self) -> Status | None:
        """Completion record of the most recent activation, if any."""
        return self._status

    def is_recv(self) -> bool:
        return self.kind in (OpKind.RECV, OpKind.PERSISTENT_RECV)

    def start(self) -> None:
        """Restart a persistent handle (see transport rules)."""
        self.endpoint._start(self)

    def cancel(self) -> None:
        """Cancel an unmatched receive (sends cannot be cancelled)."""
        self.endpoint._cancel(self)

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"<OpHandle {self.id} {self.kind.value} {self.state.value}>"


_INFO_KEYS = ("poll_only", "enqueue_complete", "max_poll", "exec_context",
              "async_signal_safe")


def _parse_bool(key, value):
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        low = value.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
    raise errors.InvalidInfoValue(f"{key}: expected a boolean, got {value!r}")


def _parse_int(key, value):
    if isinstance(value, bool):
        raise errors.InvalidInfoValue(f"{key}: expected an integer, got {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise errors.InvalidInfoValue(f"{key}: expected an integer, got {value!r}") from None


class InfoConfig:
    """The five behavior controls of a continuation request.

    poll_only        callbacks run only inside test/wait on the owning CR.
    enqueue_complete attach never reports immediate completion; already
                     complete groups go onto the ready queue instead.
    max_poll         cap on callbacks executed per test call; -1 = unlimited.
    exec_context     APPLICATION restricts execution to application agents;
                     ANY additionally allows a dedicated progress agent.
    async_signal_safe  accepted and recorded; no signal delivery path exists,
                     so it is a behavioral no-op surfaced via introspection.
    """

    __slots__ = ("poll_only", "enqueue_complete", "max_poll", "exec_context",
                 "async_signal_safe")

    def __init__(self, poll_only=False, enqueue_complete=False, max_poll=-1,
                 exec_context=ExecContext.APPLICATION, async_signal_safe=False):
        self.poll_only = bool(poll_only)
        self.enqueue_complete = bool(enqueue_complete)
        self.max_poll = int(max_poll)
        self.exec_context = exec_context
        self.async_signal_safe = bool(async_signal_safe)
        if self.max_poll < -1:
            raise errors.InvalidInfoValue(f"max_poll must be >= -1, got {self.max_poll}")
        if self.poll_only and self.max_poll == 0:
            raise errors.InvalidInfoCombination(
                "poll_only=true with max_poll=0 would never execute a continuation")

    def __repr__(self):  # pragma: no cover
        return (f"InfoConfig(poll_only={self.poll_only}, "
                f"enqueue_complete={self.enqueue_complete}, max_poll={self.max_poll}, "
                f"exec_context={self.exec_context.value}, "
                f"async_signal_safe={self.async_signal_safe})")


def info_config_new(overrides: dict | None = None) -> InfoConfig:
    """Build an InfoConfig from key/value overrides, applying defaults.

    Values may be given as native types or as strings (as they arrive from a
    command line); strings are parsed per the key's type.
    """
    overrides = overrides or {}
    kwargs = {}
    for key, value in overrides.items():
        if key not in _INFO_KEYS:
            raise errors.UnknownInfoKey(f"unknown info key: {key!r}")
        if key in ("poll_only", "enqueue_complete", "async_signal_safe"):
            kwargs[key] = _parse_bool(key, value)
        elif key == "max_poll":
            kwargs[key] = _parse_int(key, value)
        elif key == "exec_context":
            if isinstance(value, ExecContext):
                kwargs[key] = value
            elif isinstance(value, str) and value.strip().lower() in ("application", "any"):
                kwargs[key] = ExecContext(value.strip().lower())
            else:
                raise errors.InvalidInfoValue(
                    f"exec_context: expected 'application' or 'any', got {value!r}")
    return InfoConfig(**kwargs)


def check_rank(rank: int, world_size: int) -> int:
    if not isinstance(rank, int) or isinstance(rank, bool) or not 0 <= rank < world_size:
        raise errors.InvalidRank(f"rank {rank!r} not in [0, {world_size})")
    return rank


def check_tag(tag: int, *, allow_any: bool) -> int:
    if tag == ANY_TAG:
        if allow_any:
            return tag
        raise errors.InvalidTag("ANY_TAG is only legal on receives")
    if not isinstance(tag, int) or isinstance(tag, bool) or not 0 <= tag <= MAX_TAG:
        raise errors.InvalidTag(f"tag {tag!r} not a 64-bit unsigned value")
    return tag
