"""Exact-arithmetic dynamics on [0, 1): interval sets, entropy, towers, averaging."""

from ergolab.measure import (
    DomainError,
    IntervalSet,
    JoinBudgetError,
    Partition,
    Rational,
    as_rational,
    digit_set,
    dyadic_interval,
    format_rational,
    induced_partition,
    join_all,
    join_partitions,
    join_sets,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "IntervalSet",
    "JoinBudgetError",
    "Partition",
    "Rational",
    "as_rational",
    "digit_set",
    "dyadic_interval",
    "format_rational",
    "induced_partition",
    "join_all",
    "join_partitions",
    "join_sets",
    "__version__",
]
