"""Exception hierarchy shared across the simulator."""


class NetsliceError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(NetsliceError, ValueError):
    """Invalid scenario or experiment configuration.

    ``key`` names the offending configuration path (e.g. ``cn.fat_tree_k``)
    when the error originates from a config document.
    """

    def __init__(self, message, key=None, value=None):
        self.key = key
        self.value = value
        if key is not None:
            message = f"{key}={value!r}: {message}"
        super().__init__(message)


class DomainError(NetsliceError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class InvariantViolation(NetsliceError):
    """A conservation or consistency invariant does not hold."""


class NoPathError(NetsliceError):
    pass


class DuplicateError(NetsliceError):
    pass


class NotFoundError(NetsliceError, KeyError):
    pass


class IntegrityError(NetsliceError):
    """An embedding refers to nodes or links that do not exist."""


class CapacityError(NetsliceError):
    """A capacity change would drop below current usage."""


class SchemaError(NetsliceError):
    pass


class OrderingError(NetsliceError):
    pass


class PositionalParseError(NetsliceError, ValueError):
    """Parse failure carrying the 0-based character position of the fault."""

    def __init__(self, message, text, position):
        self.text = text
        self.position = position
        super().__init__(f"{message} (at position {position})")


class QueryParseError(PositionalParseError):
    pass


class DirectiveParseError(PositionalParseError):
    pass


class ReasonerParseError(PositionalParseError):
    pass


class PolicyViolation(NetsliceError):
    """A control tool was invoked where only perception is permitted."""


class EnforcementError(NetsliceError):
    """An enforcement adapter failed to apply a directive."""


class OracleCapError(NetsliceError):
    """Instance too large for exhaustive search."""
