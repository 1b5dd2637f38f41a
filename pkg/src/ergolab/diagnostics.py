"""Exact deviation functionals for ergodic averages and mixing correlations.

Every value is a Fraction; engine choice never changes results, only
speed.  Three engines cover the input shapes that occur in practice:

* an atom-permutation engine for invertible piecewise translations whose
  breakpoints, offsets and set endpoints share a modest common
  denominator (ergodic averages walk permutation cycles);
* an endpoint-sweep engine over preimage orbits of interval sets, the
  general fallback, capped by a piece budget;
* a bitmask engine for mixing correlations, packing the atom grid into
  big integers so digit-level families stay tractable.

Budgets make refusal explicit: past a cap the evaluator raises instead
of approximating.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Union

import numpy as np

from .dynamics import PiecewiseMap, map_resolution
from .families import SetFamily
from .measure import (
    DomainError,
    IntervalSet,
    JoinBudgetError,
    Partition,
    as_rational,
)

DEFAULT_CELL_BUDGET = 2**16
ATOM_BUDGET = 2**16
MASK_BIT_CAP = 2**25

MemberIndex = Union[int, tuple]


@dataclass(frozen=True)
class DeviationReport:
    """Per-member exact deviations with their supremum.

    ``per_member`` holds (index, value) pairs; pair functionals use
    (a, b) index tuples and retain only the ten largest entries.  The
    truncation term records n/2^R for odometer-derived maps, since at
    horizon n the truncated odometer may differ from the infinite one
    on a set of at most that measure.
    """

    n: int
    per_member: tuple
    sup: Fraction
    argmax: MemberIndex
    truncation_error: Fraction


def _truncation_error(t: PiecewiseMap, n: int) -> Fraction:
    resolution = map_resolution(t)
    if resolution is None:
        return Fraction(0)
    return min(Fraction(1), Fraction(n, 2**resolution))


def _atom_index(value: Fraction, atoms: int) -> int:
    scaled = value * atoms
    if scaled.denominator != 1:
        raise DomainError(f"value {value} is off the {atoms}-atom grid")
    return scaled.numerator


def _grid_size(t: PiecewiseMap, sets: Iterable[IntervalSet]) -> int:
    """Least common denominator of all map data and set endpoints."""
    den = 1
    for piece in t.pieces:
        den = math.lcm(den, piece.lo.denominator, piece.hi.denominator,
                       piece.offset.denominator)
    for s in sets:
        for lo, hi in s.pieces:
            den = math.lcm(den, lo.denominator, hi.denominator)
    return den


# ---------------------------------------------------------------------------
# atom-permutation engine


@lru_cache(maxsize=16)
def _grid_dynamics(t: PiecewiseMap, den: int):
    """Return (permutation, cycles) of t acting on the den-atom grid."""
    perm = []
    for a in range(den):
        # midpoints map to midpoints under a grid-aligned translation
        image = t.apply(Fraction(2 * a + 1, 2 * den))
        perm.append(int(image * den))
    seen = [False] * den
    cycles = []
    for start in range(den):
        if seen[start]:
            continue
        cycle = [start]
        seen[start] = True
        nxt = perm[start]
        while nxt != start:
            cycle.append(nxt)
            seen[nxt] = True
            nxt = perm[nxt]
        cycles.append(tuple(cycle))
    return tuple(perm), tuple(cycles)


def _atom_flags(s: IntervalSet, den: int) -> list:
    flags = [False] * den
    for lo, hi in s.pieces:
        for a in range(_atom_index(lo, den), _atom_index(hi, den)):
            flags[a] = True
    return flags


def _cycle_l1(cycles, flags, den: int, n: int) -> Fraction:
    # sum over atoms of |count/n - mu|, all in integers until the end
    c_atoms = sum(flags)
    dev = 0
    for cycle in cycles:
        length = len(cycle)
        ind = [1 if flags[a] else 0 for a in cycle]
        total = sum(ind)
        prefix = [0] * (2 * length + 1)
        for m in range(2 * length):
            prefix[m + 1] = prefix[m] + ind[m % length]
        q, r = divmod(n, length)
        base = q * total
        for pos in range(length):
            count = base + prefix[pos + r] - prefix[pos]
            dev += abs(count * den - n * c_atoms)
    return Fraction(dev, n * den * den)


# ---------------------------------------------------------------------------
# endpoint-sweep engine


def _sweep_l1(t: PiecewiseMap, c: IntervalSet, n: int, max_cells: int) -> Fraction:
    mu = c.measure
    events: dict = defaultdict(int)
    current = c
    pieces_total = 0
    for i in range(n):
        pieces_total += len(current.pieces)
        if pieces_total > max_cells:
            raise JoinBudgetError(
                f"preimage orbit exceeds the {max_cells}-piece budget at step {i}"
            )
        for lo, hi in current.pieces:
            events[lo] += 1
            events[hi] -= 1
        if i + 1 < n:
            current = t.preimage(current)
    points = sorted(set(events) | {Fraction(0), Fraction(1)})
    deviation = Fraction(0)
    coverage = 0
    for x, nxt in zip(points, points[1:]):
        coverage += events.get(x, 0)
        deviation += abs(Fraction(coverage, n) - mu) * (nxt - x)
    return deviation


# ---------------------------------------------------------------------------
# bitmask engine

_PAIR_LUT = np.array(
    [
        sum(((b >> (2 * i)) & (b >> (2 * i + 1)) & 1) << i for i in range(4))
        for b in range(256)
    ],
    dtype=np.uint8,
)


def _pair_and_compress(w: int, width: int) -> int:
    """AND adjacent bit pairs of w (width bits) and pack into width//2 bits."""
    nbytes = (width + 7) // 8
    raw = np.frombuffer(w.to_bytes(nbytes, "little"), dtype=np.uint8)
    if nbytes & 1:
        raw = np.concatenate([raw, np.zeros(1, dtype=np.uint8)])
    nibbles = _PAIR_LUT[raw]
    packed = nibbles[0::2] | (nibbles[1::2] << 4)
    return int.from_bytes(packed.tobytes(), "little")


def _mask_from_set(s: IntervalSet, atoms: int) -> int:
    spans = [(_atom_index(lo, atoms), _atom_index(hi, atoms)) for lo, hi in s.pieces]

    def build(spans, lo, hi):
        if not spans:
            return 0
        if len(spans) == 1 and spans[0] == (lo, hi):
            return (1 << (hi - lo)) - 1
        mid = (lo + hi) // 2
        left = [(a, min(b, mid)) for a, b in spans if a < mid]
        right = [(max(a, mid), b) for a, b in spans if b > mid]
        return build(left, lo, mid) | (build(right, mid, hi) << (mid - lo))

    return build(spans, 0, atoms)


def _mask_preimage(t: PiecewiseMap, mask: int, atoms: int) -> int:
    out = 0
    compressed: dict = {}
    for piece in t.pieces:
        a = _atom_index(piece.lo, atoms)
        b = _atom_index(piece.hi, atoms)
        if piece.slope == 1:
            shift = _atom_index(piece.offset, atoms)
            chunk = (mask >> (a + shift)) & ((1 << (b - a)) - 1)
        else:
            src_lo = 2 * a + _atom_index(piece.offset, atoms)
            key = (src_lo, b - a)
            if key not in compressed:
                w = (mask >> src_lo) & ((1 << (2 * (b - a))) - 1)
                compressed[key] = _pair_and_compress(w, 2 * (b - a))
            chunk = compressed[key]
        out |= chunk << a
    return out


class _Correlator:
    """Shared state for pair-correlation sweeps at preimage depth <= depth."""

    def __init__(self, t, members, depth, max_cells):
        self.t = t
        self.members = members
        self.depth = depth
        self.max_cells = max_cells
        self.mu = [m.measure for m in members]
        slopes = {piece.slope for piece in t.pieces}
        self.mode = "sets"
        if slopes <= {1, 2}:
            atoms = _grid_size(t, members)
            if 2 in slopes:
                atoms <<= depth
            if atoms <= MASK_BIT_CAP:
                self.mode = "mask"
                self.atoms = atoms
                self.masks = [_mask_from_set(m, atoms) for m in members]

    def orbit(self, b: int):
        """Yield representations of T^{-i}(members[b]) for i = 0..depth."""
        if self.mode == "mask":
            current = self.masks[b]
            yield current
            for _ in range(self.depth):
                current = _mask_preimage(self.t, current, self.atoms)
                yield current
        else:
            current = self.members[b]
            pieces_total = len(current.pieces)
            yield current
            for i in range(self.depth):
                current = self.t.preimage(current)
                pieces_total += len(current.pieces)
                if pieces_total > self.max_cells:
                    raise JoinBudgetError(
                        f"preimage orbit of member {b} exceeds the "
                        f"{self.max_cells}-piece budget at depth {i + 1}"
                    )
                yield current

    def correlation(self, a: int, b: int, pulled) -> Fraction:
        if self.mode == "mask":
            joint = Fraction((self.masks[a] & pulled).bit_count(), self.atoms)
        else:
            joint = (self.members[a] & pulled).measure
        return abs(joint - self.mu[a] * self.mu[b])


def _pair_report(t, n, values, truncation) -> DeviationReport:
    ranked = sorted(values, key=lambda kv: (-kv[1], kv[0]))
    sup = ranked[0][1]
    return DeviationReport(
        n=n,
        per_member=tuple(ranked[:10]),
        sup=sup,
        argmax=ranked[0][0],
        truncation_error=truncation,
    )


# ---------------------------------------------------------------------------
# public functionals


def l1_ergodic_deviation(
    t: PiecewiseMap,
    c: IntervalSet,
    n: int,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> Fraction:
    """Exact integral of |(1/n) sum_{i<n} I_C(T^i x) - mu(C)|.

    The ergodic average is piecewise constant on the join of the first n
    preimages of C, so both engines reduce the integral to a finite sum.
    """
    if n < 1:
        raise DomainError("averaging horizon must be at least 1")
    if t.invertible and t.is_translation_family:
        den = _grid_size(t, [c])
        if den <= ATOM_BUDGET:
            _, cycles = _grid_dynamics(t, den)
            return _cycle_l1(cycles, _atom_flags(c, den), den, n)
    return _sweep_l1(t, c, n, max_cells)


def uniform_l1_deviation(
    t: PiecewiseMap,
    family: SetFamily,
    n: int,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> DeviationReport:
    """Sup of the L1 ergodic deviation over the family horizon."""
    if n < 1:
        raise DomainError("averaging horizon must be at least 1")
    members = list(family.members())
    if not members:
        raise DomainError("family has no members to take a supremum over")

    shared_cycles = None
    if t.invertible and t.is_translation_family:
        den = _grid_size(t, members)
        if den <= ATOM_BUDGET:
            _, shared_cycles = _grid_dynamics(t, den)

    per_member = []
    for index, member in enumerate(members):
        if shared_cycles is not None:
            value = _cycle_l1(shared_cycles, _atom_flags(member, den), den, n)
        else:
            value = l1_ergodic_deviation(t, member, n, max_cells=max_cells)
        per_member.append((index, value))

    sup = max(value for _, value in per_member)
    argmax = next(index for index, value in per_member if value == sup)
    return DeviationReport(
        n=n,
        per_member=tuple(per_member),
        sup=sup,
        argmax=argmax,
        truncation_error=_truncation_error(t, n),
    )


def strong_mixing_deviation(
    t: PiecewiseMap,
    family: SetFamily,
    n: int,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> DeviationReport:
    """Sup over ordered pairs of |mu(A ∩ T^{-n}B) - mu(A)mu(B)|."""
    if n < 0:
        raise DomainError("correlation lag must be nonnegative")
    members = list(family.members())
    if not members:
        raise DomainError("family has no members to take a supremum over")
    ctx = _Correlator(t, members, n, max_cells)
    values = []
    for b in range(len(members)):
        pulled = None
        for pulled in ctx.orbit(b):
            pass
        for a in range(len(members)):
            values.append(((a, b), ctx.correlation(a, b, pulled)))
    return _pair_report(t, n, values, _truncation_error(t, n))


def weak_mixing_deviation(
    t: PiecewiseMap,
    family: SetFamily,
    n: int,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> DeviationReport:
    """Sup over ordered pairs of the Cesaro mean of absolute correlations."""
    if n < 1:
        raise DomainError("averaging horizon must be at least 1")
    members = list(family.members())
    if not members:
        raise DomainError("family has no members to take a supremum over")
    ctx = _Correlator(t, members, n - 1, max_cells)
    sums: dict = defaultdict(lambda: Fraction(0))
    for b in range(len(members)):
        for pulled in ctx.orbit(b):
            for a in range(len(members)):
                sums[(a, b)] += ctx.correlation(a, b, pulled)
    values = [(pair, total / n) for pair, total in sums.items()]
    return _pair_report(t, n, values, _truncation_error(t, n))


def lipschitz_uniform_bound(
    family: SetFamily,
    cert: Partition,
    evaluator: Callable[[IntervalSet], Fraction],
    lipschitz,
    approx_err,
    *,
    max_unions: int = DEFAULT_CELL_BUDGET,
) -> Fraction:
    """Bound a Lipschitz set functional over a family via a certificate.

    Every horizon member must be approximable within ``approx_err`` by a
    union of certificate cells; the best union error per cell is the
    smaller of the overlap and its complement, so the audit is linear in
    the cell count.  The returned value is the evaluator's maximum over
    all cell unions plus the Lipschitz slack, an upper bound for the sup
    over the family itself.
    """
    slack = as_rational(approx_err)
    constant = as_rational(lipschitz)
    if slack < 0 or constant < 0:
        raise DomainError("Lipschitz constant and approximation error must be >= 0")
    cells = cert.cells
    if 2 ** len(cells) > max_unions:
        raise JoinBudgetError(
            f"{len(cells)} certificate cells need {2 ** len(cells)} unions, "
            f"over the {max_unions} cap"
        )
    for index, member in enumerate(family.members()):
        best = Fraction(0)
        for cell in cells:
            overlap = (cell & member).measure
            best += min(overlap, cell.measure - overlap)
        if best > slack:
            raise DomainError(
                f"member {index} is only approximable to error {best}, "
                f"worse than {slack}"
            )
    largest = Fraction(0)
    for selector in range(2 ** len(cells)):
        pieces = [
            piece
            for k, cell in enumerate(cells)
            if (selector >> k) & 1
            for piece in cell.pieces
        ]
        value = evaluator(IntervalSet.from_pieces(pieces))
        if value > largest:
            largest = value
    return largest + constant * slack
