"""Shared exception types."""


class ContractError(ValueError):
    """A caller violated a documented precondition (shape, range, ordering)."""


class DivergenceError(RuntimeError):
    """A training step produced non-finite values and was rejected."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or does not match the expected shapes."""


class CorrelationUndefined(ValueError):
    """Pearson correlation is undefined (too few points or zero variance)."""
