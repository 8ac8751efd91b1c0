"""Shared exception types."""


class NodeGaeError(Exception):
    """Base class for all package errors."""


class ConfigError(NodeGaeError):
    """Invalid configuration or arguments."""


class ContractError(NodeGaeError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes do not conform to an operation's rule."""


class IngestionError(NodeGaeError):
    """A dataset file failed validation."""


class MetricError(NodeGaeError):
    """Inputs to a metric are degenerate (e.g. a single class)."""
