"""Exact interval-set and partition algebra on the half-open unit interval.

Every set is a finite disjoint union of half-open rational pieces [lo, hi)
inside [0, 1); every endpoint and every measure is a `fractions.Fraction`.
No floats enter the set algebra, so downstream certificates can compare
measures bit-exactly.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Sequence

__all__ = [
    "Rational",
    "ZERO",
    "ONE",
    "DomainError",
    "JoinBudgetError",
    "as_rational",
    "format_rational",
    "IntervalSet",
    "Partition",
    "join_sets",
    "join_partitions",
    "join_all",
    "induced_partition",
    "dyadic_interval",
    "digit_set",
]

Rational = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


class DomainError(ValueError):
    """An endpoint escapes [0, 1), or a measure precondition fails."""


class JoinBudgetError(RuntimeError):
    """A join or sweep would exceed the configured cell budget."""


def as_rational(value: int | str | Fraction) -> Fraction:
    """Coerce an int, a Fraction, or a "p/q" / "p" string to Fraction.

    Floats are rejected on purpose: a binary float that looks like 0.1 is not
    1/10, and letting one slip in would silently poison exact comparisons.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a rational scalar")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a rational literal: {value!r}") from exc
    raise TypeError(f"refusing to coerce {type(value).__name__} to a rational")


def format_rational(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def _push(out: list[tuple[Fraction, Fraction]], lo: Fraction, hi: Fraction) -> None:
    # append [lo, hi), fusing with the previous piece when adjacent
    if out and out[-1][1] == lo:
        out[-1] = (out[-1][0], hi)
    else:
        out.append((lo, hi))


@dataclass(frozen=True)
class IntervalSet:
    """Canonical finite union of half-open pieces [lo, hi) within [0, 1).

    Pieces are sorted, pairwise disjoint, non-adjacent (gaps are strict), and
    nonempty.  The raw constructor insists on canonical input; use
    :meth:`from_pieces` to normalize arbitrary piece soup.
    """

    pieces: tuple[tuple[Fraction, Fraction], ...]

    def __post_init__(self) -> None:
        prev_hi = None
        for lo, hi in self.pieces:
            if not (isinstance(lo, Fraction) and isinstance(hi, Fraction)):
                raise TypeError("piece endpoints must be Fractions")
            if not (ZERO <= lo < hi <= ONE):
                raise DomainError(f"piece [{lo}, {hi}) escapes [0, 1)")
            if prev_hi is not None and lo <= prev_hi:
                raise DomainError(
                    f"pieces not canonical near {lo} (unsorted, overlapping, or unmerged)"
                )
            prev_hi = hi

    # -- constructors ------------------------------------------------------

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls(((ZERO, ONE),))

    @classmethod
    def interval(cls, lo, hi) -> "IntervalSet":
        lo, hi = as_rational(lo), as_rational(hi)
        if lo > hi:
            raise DomainError(f"interval has lo {lo} > hi {hi}")
        if lo == hi:
            return cls(())
        return cls(((lo, hi),))

    @classmethod
    def from_pieces(cls, raw: Iterable[tuple]) -> "IntervalSet":
        """Normalize arbitrary (lo, hi) pairs: sort, drop empties, merge overlaps."""
        cleaned = []
        for lo, hi in raw:
            lo, hi = as_rational(lo), as_rational(hi)
            if lo > hi:
                raise DomainError(f"piece has lo {lo} > hi {hi}")
            if lo < ZERO or hi > ONE:
                raise DomainError(f"piece [{lo}, {hi}) escapes [0, 1)")
            if lo < hi:
                cleaned.append((lo, hi))
        cleaned.sort()
        out: list[tuple[Fraction, Fraction]] = []
        for lo, hi in cleaned:
            if out and lo <= out[-1][1]:
                if hi > out[-1][1]:
                    out[-1] = (out[-1][0], hi)
            else:
                out.append((lo, hi))
        return cls(tuple(out))

    @classmethod
    def from_text(cls, text: str) -> "IntervalSet":
        """Parse the serialization produced by :meth:`to_text`."""
        text = text.strip()
        if not text:
            return cls(())
        pieces = []
        for chunk in text.split(";"):
            lo_txt, sep, hi_txt = chunk.partition("..")
            if not sep:
                raise ValueError(f"bad piece {chunk!r}: expected 'lo..hi'")
            pieces.append((as_rational(lo_txt), as_rational(hi_txt)))
        return cls.from_pieces(pieces)

    # -- basic queries -----------------------------------------------------

    @cached_property
    def measure(self) -> Fraction:
        return sum((hi - lo for lo, hi in self.pieces), ZERO)

    @cached_property
    def _los(self) -> tuple[Fraction, ...]:
        return tuple(lo for lo, _ in self.pieces)

    @property
    def is_empty(self) -> bool:
        return not self.pieces

    def __bool__(self) -> bool:
        return bool(self.pieces)

    def __contains__(self, x) -> bool:
        x = as_rational(x)
        idx = bisect_right(self._los, x) - 1
        return idx >= 0 and x < self.pieces[idx][1]

    def overlap_measure(self, lo: Fraction, hi: Fraction) -> Fraction:
        """Exact measure of self ∩ [lo, hi), in O(log pieces + hits)."""
        if lo >= hi:
            return ZERO
        total = ZERO
        idx = max(bisect_right(self._los, lo) - 1, 0)
        for plo, phi in self.pieces[idx:]:
            if plo >= hi:
                break
            cut_lo = plo if plo > lo else lo
            cut_hi = phi if phi < hi else hi
            if cut_lo < cut_hi:
                total += cut_hi - cut_lo
        return total

    def clip(self, lo: Fraction, hi: Fraction) -> "IntervalSet":
        """self ∩ [lo, hi) without a full sweep."""
        if lo >= hi:
            return IntervalSet(())
        out = []
        idx = max(bisect_right(self._los, lo) - 1, 0)
        for plo, phi in self.pieces[idx:]:
            if plo >= hi:
                break
            cut_lo = plo if plo > lo else lo
            cut_hi = phi if phi < hi else hi
            if cut_lo < cut_hi:
                out.append((cut_lo, cut_hi))
        return IntervalSet(tuple(out))

    # -- boolean algebra ---------------------------------------------------

    def _covers(self, x: Fraction) -> bool:
        idx = bisect_right(self._los, x) - 1
        return idx >= 0 and x < self.pieces[idx][1]

    def _combine(self, other: "IntervalSet", keep: Callable[[bool, bool], bool]) -> "IntervalSet":
        # Sweep the elementary gaps cut by both boundary sets; membership is
        # constant on each gap, so testing the left endpoint decides it.
        pts = {p for piece in self.pieces for p in piece}
        pts.update(p for piece in other.pieces for p in piece)
        bounds = sorted(pts)
        out: list[tuple[Fraction, Fraction]] = []
        for lo, hi in zip(bounds, bounds[1:]):
            if keep(self._covers(lo), other._covers(lo)):
                _push(out, lo, hi)
        return IntervalSet(tuple(out))

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return self._combine(other, lambda a, b: a or b)

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        return self._combine(other, lambda a, b: a and b)

    def difference(self, other: "IntervalSet") -> "IntervalSet":
        return self._combine(other, lambda a, b: a and not b)

    def symmetric_difference(self, other: "IntervalSet") -> "IntervalSet":
        return self._combine(other, lambda a, b: a != b)

    def complement(self) -> "IntervalSet":
        out = []
        prev = ZERO
        for lo, hi in self.pieces:
            if prev < lo:
                out.append((prev, lo))
            prev = hi
        if prev < ONE:
            out.append((prev, ONE))
        return IntervalSet(tuple(out))

    __or__ = union
    __and__ = intersect
    __sub__ = difference
    __xor__ = symmetric_difference
    __invert__ = complement

    def is_subset_of(self, other: "IntervalSet") -> bool:
        return not self.difference(other)

    # -- serialization -----------------------------------------------------

    def to_text(self) -> str:
        return ";".join(f"{format_rational(lo)}..{format_rational(hi)}" for lo, hi in self.pieces)

    def __repr__(self) -> str:  # pragma: no cover - debugging nicety
        body = self.to_text() or "empty"
        return f"IntervalSet({body})"


@dataclass(frozen=True)
class Partition:
    """Finite partition of [0, 1) into positive-measure IntervalSet cells.

    Disjointness and full coverage are checked exactly at construction by a
    single sweep over all pieces: sorted by lo they must tile [0, 1) with no
    gap and no overlap.
    """

    cells: tuple[IntervalSet, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.cells:
            raise DomainError("partition needs at least one cell")
        if self.labels is not None and len(self.labels) != len(self.cells):
            raise DomainError("label count does not match cell count")
        all_pieces = sorted(p for c in self.cells for p in c.pieces)
        if not all_pieces:
            raise DomainError("partition cells are all empty")
        cursor = ZERO
        for lo, hi in all_pieces:
            if lo != cursor:
                kind = "overlap" if lo < cursor else "gap"
                raise DomainError(f"partition has a {kind} at {min(lo, cursor)}")
            cursor = hi
        if cursor != ONE:
            raise DomainError(f"partition has a gap at {cursor}")
        for c in self.cells:
            if c.is_empty:
                raise DomainError("partition cell has measure 0")

    @classmethod
    def trivial(cls) -> "Partition":
        return cls((IntervalSet.full(),))

    @classmethod
    def dyadic(cls, level: int) -> "Partition":
        if level < 0:
            raise DomainError("dyadic level must be >= 0")
        return cls(tuple(dyadic_interval(level, j) for j in range(2**level)))

    @classmethod
    def two_set(cls, s: IntervalSet) -> "Partition":
        """The partition {S, S^c}; collapses to the trivial one when degenerate."""
        comp = s.complement()
        if s.is_empty or comp.is_empty:
            return cls.trivial()
        return cls((s, comp))

    def __len__(self) -> int:
        return len(self.cells)

    @cached_property
    def weights(self) -> tuple[Fraction, ...]:
        return tuple(c.measure for c in self.cells)

    def label(self, k: int) -> str:
        return self.labels[k] if self.labels is not None else str(k)

    def cell_of(self, x) -> int:
        x = as_rational(x)
        for k, c in enumerate(self.cells):
            if x in c:
                return k
        raise DomainError(f"{x} is not in [0, 1)")

    def refines(self, other: "Partition") -> bool:
        return all(
            any(c.is_subset_of(d) for d in other.cells) for c in self.cells
        )

    def to_text(self) -> str:
        return "|".join(c.to_text() for c in self.cells)

    @classmethod
    def from_text(cls, text: str) -> "Partition":
        return cls(tuple(IntervalSet.from_text(chunk) for chunk in text.split("|")))


def join_partitions(p: Partition, q: Partition, max_cells: int | None = None) -> Partition:
    """Common refinement; cells ordered p-major, zero-measure intersections dropped."""
    cells = []
    labels = [] if (p.labels or q.labels) else None
    for i, a in enumerate(p.cells):
        for j, b in enumerate(q.cells):
            inter = a & b
            if inter:
                cells.append(inter)
                if labels is not None:
                    labels.append(f"{p.label(i)}&{q.label(j)}")
                if max_cells is not None and len(cells) > max_cells:
                    raise JoinBudgetError(f"join exceeds {max_cells} cells")
    return Partition(tuple(cells), tuple(labels) if labels is not None else None)


def join_all(parts: Sequence[Partition], max_cells: int | None = None) -> Partition:
    if not parts:
        return Partition.trivial()
    acc = parts[0]
    for p in parts[1:]:
        acc = join_partitions(acc, p, max_cells=max_cells)
    return acc


def join_sets(sets: Sequence[IntervalSet], max_cells: int | None = None) -> Partition:
    """Partition generated by S_1..S_n: nonempty cells of ∩ S̃_i, S̃ ∈ {S, S^c}.

    Refines incrementally, so the cost tracks the number of surviving cells
    (≤ 2^n) rather than the full sign-pattern lattice.
    """
    cells = [IntervalSet.full()]
    for s in sets:
        nxt = []
        for c in cells:
            inside = c & s
            outside = c - s
            if inside:
                nxt.append(inside)
            if outside:
                nxt.append(outside)
            if max_cells is not None and len(nxt) > max_cells:
                raise JoinBudgetError(f"join of {len(sets)} sets exceeds {max_cells} cells")
        cells = nxt
    cells.sort(key=lambda c: c.pieces[0][0])
    return Partition(tuple(cells))


def induced_partition(p: Partition, base: IntervalSet) -> Partition:
    """Restriction of p to a positive-measure base, ordered by infimum.

    The result partitions `base`, not [0, 1), so it comes back as
    :class:`InducedCells` rather than a Partition; labels run A0..AK.
    """
    if base.measure == ZERO:
        raise DomainError("induced partition needs a base of positive measure")
    cells = []
    for c in p.cells:
        inter = c & base
        if inter:
            cells.append(inter)
    cells.sort(key=lambda c: c.pieces[0][0])
    labels = tuple(f"A{k}" for k in range(len(cells)))
    return InducedCells(tuple(cells), labels)


@dataclass(frozen=True)
class InducedCells:
    """Partition of a sub-base: disjoint positive-measure cells, labeled A0..AK."""

    cells: tuple[IntervalSet, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        pieces = sorted(p for c in self.cells for p in c.pieces)
        for (a_lo, a_hi), (b_lo, b_hi) in zip(pieces, pieces[1:]):
            if b_lo < a_hi:
                raise DomainError(f"induced cells overlap at {b_lo}")

    def __len__(self) -> int:
        return len(self.cells)

    @cached_property
    def base(self) -> IntervalSet:
        acc = IntervalSet.empty()
        for c in self.cells:
            acc = acc | c
        return acc

    @cached_property
    def weights(self) -> tuple[Fraction, ...]:
        return tuple(c.measure for c in self.cells)


def dyadic_interval(level: int, index: int) -> IntervalSet:
    """The index-th level cell [index/2^level, (index+1)/2^level)."""
    if level < 0 or not (0 <= index < 2**level):
        raise DomainError(f"no dyadic interval at level {level}, index {index}")
    den = 2**level
    return IntervalSet(((Fraction(index, den), Fraction(index + 1, den)),))


def digit_set(k: int) -> IntervalSet:
    """Points of [0, 1) whose k-th binary digit is 1 (k >= 1); measure 1/2."""
    if k < 1:
        raise DomainError("digit index starts at 1")
    den = 2**k
    return IntervalSet(
        tuple((Fraction(2 * j + 1, den), Fraction(2 * j + 2, den)) for j in range(2 ** (k - 1)))
    )
