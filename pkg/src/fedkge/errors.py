"""Exception types shared across the package."""


class FedkgeError(Exception):
    """Base class for all package errors."""


class TripleParseError(FedkgeError, ValueError):
    """A triple file line could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class UnknownNameError(FedkgeError, KeyError):
    """An entity/relation name is missing from a supplied dictionary."""


class ConfigError(FedkgeError, ValueError):
    """Invalid configuration value or illegal flag combination."""


class ContractError(FedkgeError, ValueError):
    """A caller violated an operation precondition (e.g. shape mismatch)."""


class EncodingRangeError(FedkgeError, ValueError):
    """A real value does not fit the fixed-point codec range."""


class UnresolvedMaskError(FedkgeError, RuntimeError):
    """Secure-sum attempted with an incomplete participant set."""


class InsufficientKnowledgeError(FedkgeError, RuntimeError):
    """The adversary lacks the inputs required to run the attack."""


class MetricError(FedkgeError, ValueError):
    """A metric is undefined for the given input (e.g. empty split)."""
