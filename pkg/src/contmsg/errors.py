"""Exception types raised by the contmsg runtime."""


class ContmsgError(Exception):
    """Base class for all contmsg errors."""


class UnknownInfoKey(ContmsgError):
    """An info key is not one of the recognized behavior controls."""


class InvalidInfoValue(ContmsgError):
    """An info value cannot be parsed for its key's type."""


class InvalidInfoCombination(ContmsgError):
    """The combination of info values can never execute a continuation."""


class InvalidRank(ContmsgError):
    """A rank is outside [0, world_size)."""


class InvalidTag(ContmsgError):
    """A tag is outside the 64-bit unsigned range or misuses a wildcard."""


class NotActive(ContmsgError):
    """The operation handle is not in a usable state for this call."""


class ConsumedHandle(ContmsgError):
    """The non-persistent handle was released by a continuation attachment."""


class AlreadyAttached(ContmsgError):
    """A continuation is already attached to this operation activation."""


class SecondStart(ContmsgError):
    """start() was called on a handle that is already active."""


class NotPersistent(ContmsgError):
    """start() is only valid on persistent handles."""


class CannotCancelSend(ContmsgError):
    """Send operations cannot be cancelled."""


class FreedRequest(ContmsgError):
    """The continuation request has been freed."""


class DoubleFree(ContmsgError):
    """free() was called twice on the same continuation request."""


class SelfChain(ContmsgError):
    """A continuation request cannot be used as an operand of its own attach."""


class ConcurrentCompletionCall(ContmsgError):
    """Two agents attempted to test/wait the same continuation request."""


class IllegalTransition(ContmsgError):
    """An event would move a continuation request along a non-edge."""


class EventUnderflow(ContmsgError):
    """A task event counter would go below zero."""


class EventBindingError(ContmsgError):
    """Event counter increase attempted outside the owning task's body."""


class WireFormatError(ContmsgError):
    """A frame failed to decode (bad magic, version, or kind)."""


class ConnectionLost(ContmsgError):
    """A TCP peer connection failed; surfaces as a runtime fault."""


class RosterError(ContmsgError):
    """The roster file is malformed or inconsistent with the world size."""
