"""Shared exception types."""


class ConfigError(ValueError):
    """Malformed or semantically incompatible configuration."""


class BudgetError(RuntimeError):
    """A step/rejection/memory budget was exhausted before completion."""


class DegenerateError(RuntimeError):
    """An operation was requested on a degenerate limit (all projections vanish)."""


class EnumerationError(ValueError):
    """An exact enumeration would exceed its feasibility budget."""
