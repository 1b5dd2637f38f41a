"""Deterministically enumerated families of interval sets.

A family is a fixed finite enumeration member(0), member(1), ... up to a
horizon.  The built-in kinds:

* ``explicit``        -- a literal tuple of sets
* ``dyadic_intervals``-- all dyadic intervals of levels 1..L, level by level,
                         left to right (horizon 2^(L+1) - 2)
* ``digit_sets``      -- {x : k-th binary digit is 1} for k = 1..K
* ``orbit``           -- seed, t(seed), t^2(seed), ... (preimages when t is
                         not invertible)
* ``unions_closure``  -- unions of 1..max_terms members of a base family,
                         index combinations ordered by (size, lex)

Families carry an ``analytic_entropy`` annotation ("0", "1", or "") recording
what is provable about the family's sequence entropy; the annotation is
advisory and never consulted by computations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Iterator

from ergolab.dynamics import PiecewiseMap
from ergolab.measure import DomainError, IntervalSet, digit_set, dyadic_interval

__all__ = ["SetFamily", "explicit", "dyadic_intervals", "digit_sets", "orbit", "unions_closure"]


@dataclass(frozen=True)
class SetFamily:
    kind: str
    horizon: int
    base_sets: tuple[IntervalSet, ...] = ()
    max_level: int = 0
    max_index: int = 0
    seed: IntervalSet | None = None
    map: PiecewiseMap | None = None
    max_terms: int = 0
    analytic_entropy: str = ""

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DomainError("family horizon must be >= 1")

    def member(self, i: int) -> IntervalSet:
        if not (0 <= i < self.horizon):
            raise DomainError(f"member index {i} outside horizon {self.horizon}")
        if self.kind == "explicit":
            return self.base_sets[i]
        if self.kind == "dyadic_intervals":
            level = (i + 2).bit_length() - 1
            return dyadic_interval(level, i + 2 - 2**level)
        if self.kind == "digit_sets":
            return digit_set(i + 1)
        if self.kind == "orbit":
            return _orbit_member(self, i)
        if self.kind == "unions_closure":
            acc = IntervalSet.empty()
            for j in _combo_table(len(self.base_sets), self.max_terms)[i]:
                acc = acc | self.base_sets[j]
            return acc
        raise DomainError(f"unknown family kind {self.kind!r}")

    def members(self) -> Iterator[IntervalSet]:
        return (self.member(i) for i in range(self.horizon))

    def label(self, i: int) -> str:
        """Human-readable member tag used in reports and CSV rows."""
        if self.kind == "dyadic_intervals":
            level = (i + 2).bit_length() - 1
            return f"L{level}.{i + 2 - 2 ** level}"
        if self.kind == "digit_sets":
            return f"d{i + 1}"
        if self.kind == "unions_closure":
            combo = _combo_table(len(self.base_sets), self.max_terms)[i]
            return "u" + "+".join(str(j) for j in combo)
        return str(i)


@lru_cache(maxsize=None)
def _combo_table(n: int, max_terms: int) -> tuple[tuple[int, ...], ...]:
    out: list[tuple[int, ...]] = []
    for size in range(1, max_terms + 1):
        out.extend(combinations(range(n), size))
    return tuple(out)


@lru_cache(maxsize=None)
def _orbit_member(fam: SetFamily, i: int) -> IntervalSet:
    if i == 0:
        return fam.seed
    prev = _orbit_member(fam, i - 1)
    t = fam.map
    return t.image(prev) if t.invertible else t.preimage(prev)


def explicit(sets, analytic_entropy: str = "") -> SetFamily:
    sets = tuple(sets)
    return SetFamily(
        kind="explicit",
        horizon=len(sets),
        base_sets=sets,
        analytic_entropy=analytic_entropy,
    )


def dyadic_intervals(max_level: int) -> SetFamily:
    """All dyadic intervals of levels 1..max_level; zero sequence entropy."""
    if max_level < 1:
        raise DomainError("need max_level >= 1")
    return SetFamily(
        kind="dyadic_intervals",
        horizon=2 ** (max_level + 1) - 2,
        max_level=max_level,
        analytic_entropy="0",
    )


def digit_sets(max_index: int) -> SetFamily:
    """Binary digit sets 1..max_index; carries one full bit of entropy per step."""
    if max_index < 1:
        raise DomainError("need max_index >= 1")
    return SetFamily(
        kind="digit_sets",
        horizon=max_index,
        max_index=max_index,
        analytic_entropy="1",
    )


def orbit(t: PiecewiseMap, seed: IntervalSet, horizon: int) -> SetFamily:
    if seed.is_empty:
        raise DomainError("orbit seed must be nonempty")
    return SetFamily(kind="orbit", horizon=horizon, seed=seed, map=t)


def unions_closure(base: SetFamily, max_terms: int) -> SetFamily:
    """All unions of up to max_terms base members (duplicates not removed).

    The base family is materialized; horizon is sum of C(n, s) so keep
    max_terms small.
    """
    if not (1 <= max_terms <= base.horizon):
        raise DomainError("need 1 <= max_terms <= base horizon")
    sets = tuple(base.members())
    horizon = sum(comb(len(sets), s) for s in range(1, max_terms + 1))
    return SetFamily(
        kind="unions_closure",
        horizon=horizon,
        base_sets=sets,
        max_terms=max_terms,
        analytic_entropy=base.analytic_entropy if base.analytic_entropy == "0" else "",
    )
