"""Shared exception types for the runtime and management plane."""


class TiernetError(Exception):
    """Base class for all package errors."""

    code = "error"


class InvalidContextError(TiernetError):
    code = "invalid-context"


class StateMachineError(TiernetError):
    """Illegal demand-state transition; names the current state and event."""

    code = "state-machine"


class ProtocolError(TiernetError):
    """A store operation violated its protocol preconditions."""

    code = "protocol"


class OwnershipError(TiernetError):
    """Result returned by a tier that does not hold the demand."""

    code = "ownership"


class NotFoundError(TiernetError):
    code = "not-found"


class UnknownTierError(TiernetError):
    code = "unknown-tier"


class TransportError(TiernetError):
    """Session-level failure (closed socket, framing corruption)."""

    code = "transport"


class ConnectError(TransportError):
    code = "connect"


class HandshakeError(TransportError):
    code = "handshake"


class ConfigError(TiernetError):
    """Configuration text could not be parsed."""

    code = "config"


class FactoryError(TiernetError):
    code = "factory"


class GraphError(TiernetError):
    """Graph mutation or load rejected; message carries the reason."""

    code = "graph"


class TranslationError(TiernetError):
    code = "translation"


class CommandError(TiernetError):
    """Management command failed (unknown node, timeout, refusal)."""

    code = "command"

    def __init__(self, message, code=None, detail=None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.detail = detail or {}


class UsageError(TiernetError):
    """Command line did not match the grammar."""

    code = "usage"
