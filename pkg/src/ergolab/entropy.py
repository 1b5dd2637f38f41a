"""Partition entropy with certified enclosures, and what it buys downstream.

Probabilities are exact rationals; -p*log2(p) is irrational for all but the
powers of two, so every entropy comes back as an EntropyValue carrying exact
rational lower/upper bounds.  Terms with p = 1/2^k short-circuit to the exact
rational k/2^k, which keeps dyadic constructions (digit sets, dyadic joins,
tower cells) bit-exact end to end; everything else goes through mpmath
interval arithmetic at 96-bit precision.

Beyond H and H(.|.) this module hosts the constructive split/approximation
machinery: the threshold delta(eps) for mixed-cell mass, majority-vote union
approximation, greedy sequence entropy lower bounds, dyadic zero-entropy
certificates, dual VC dimension, and per-iterate transformation entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

from mpmath import iv

from ergolab.families import SetFamily
from ergolab.dynamics import PiecewiseMap
from ergolab.measure import (
    ONE,
    ZERO,
    DomainError,
    IntervalSet,
    Partition,
    join_partitions,
)

__all__ = [
    "EntropyValue",
    "EntropyAuditError",
    "partition_entropy",
    "conditional_entropy",
    "set_conditional_entropy",
    "mixing_mass_threshold",
    "mixed_cell_mass",
    "best_union_approx",
    "UnionApprox",
    "greedy_family_sequence",
    "GreedyResult",
    "family_entropy_profile",
    "zero_entropy_certificate",
    "vc_dual_dimension",
    "VCResult",
    "transformation_entropy_estimate",
    "binary_entropy_bounds",
    "DEFAULT_CELL_BUDGET",
]

DEFAULT_CELL_BUDGET = 2**16

iv.prec = 96


class EntropyAuditError(RuntimeError):
    """An internal exact identity (e.g. the chain rule) failed its audit."""


def _raw_mpf_to_fraction(raw) -> Fraction:
    # raw is mpmath's wire format (sign, mantissa, exponent, bitcount)
    sign, man, exp, _ = raw
    if man == 0:
        return ZERO
    value = Fraction(int(man)) * Fraction(2) ** exp
    return -value if sign else value


@lru_cache(maxsize=None)
def _term_bounds(num: int, den: int) -> tuple[Fraction, Fraction]:
    """Enclosure of -p*log2(p) for p = num/den in lowest terms, p in [0, 1]."""
    if num == 0 or num == den:
        return (ZERO, ZERO)
    if num == 1 and den & (den - 1) == 0:
        exact = Fraction(den.bit_length() - 1, den)
        return (exact, exact)
    p = iv.mpf(num) / iv.mpf(den)
    term = -p * iv.log(p) / iv.log(2)
    raw_lo, raw_hi = term._mpi_
    return (max(_raw_mpf_to_fraction(raw_lo), ZERO), _raw_mpf_to_fraction(raw_hi))


@dataclass(frozen=True)
class EntropyValue:
    """An entropy in bits, enclosed by exact rational bounds lo <= true <= hi."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise DomainError(f"empty entropy enclosure [{self.lo}, {self.hi}]")

    @classmethod
    def exact(cls, q) -> "EntropyValue":
        q = Fraction(q)
        return cls(q, q)

    @property
    def value(self) -> float:
        return float((self.lo + self.hi) / 2)

    @property
    def error_bound(self) -> float:
        return float((self.hi - self.lo) / 2)

    @property
    def is_exact(self) -> bool:
        return self.lo == self.hi

    def __add__(self, other: "EntropyValue") -> "EntropyValue":
        return EntropyValue(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "EntropyValue") -> "EntropyValue":
        return EntropyValue(self.lo - other.hi, self.hi - other.lo)

    def scaled(self, q) -> "EntropyValue":
        q = Fraction(q)
        if q < 0:
            raise DomainError("entropy scales by nonnegative rationals")
        return EntropyValue(self.lo * q, self.hi * q)

    def clipped(self) -> "EntropyValue":
        """Intersect with [0, inf); entropies are nonnegative."""
        return EntropyValue(max(self.lo, ZERO), max(self.hi, ZERO))

    def certified_gt(self, q) -> bool:
        return self.lo > Fraction(q)

    def certified_lt(self, q) -> bool:
        return self.hi < Fraction(q)

    def certified_le(self, q) -> bool:
        return self.hi <= Fraction(q)

    def intersects(self, other: "EntropyValue") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def __repr__(self) -> str:
        return f"EntropyValue({self.value:.12g} ± {self.error_bound:.3g})"


def entropy_of_weights(weights: Sequence[Fraction]) -> EntropyValue:
    lo = hi = ZERO
    for w in weights:
        wlo, whi = _term_bounds(w.numerator, w.denominator)
        lo += wlo
        hi += whi
    return EntropyValue(lo, hi)


def binary_entropy_bounds(p) -> EntropyValue:
    """Enclosure of h(p) = -p log2 p - (1-p) log2 (1-p)."""
    p = Fraction(p)
    if not (ZERO <= p <= ONE):
        raise DomainError("binary entropy needs p in [0, 1]")
    return entropy_of_weights((p, ONE - p))


def partition_entropy(p: Partition) -> EntropyValue:
    return entropy_of_weights(p.weights)


def conditional_entropy(p1: Partition, p0: Partition, max_cells: int | None = DEFAULT_CELL_BUDGET) -> EntropyValue:
    """H(p1 | p0) = H(p1 v p0) - H(p0), clipped at 0."""
    joint = partition_entropy(join_partitions(p1, p0, max_cells=max_cells))
    return (joint - partition_entropy(p0)).clipped()


def set_conditional_entropy(c: IntervalSet, p: Partition) -> EntropyValue:
    """H({C, C^c} | p) via per-cell overlap queries; never materializes the join."""
    joint_lo = joint_hi = ZERO
    for cell in p.cells:
        inside = ZERO
        for lo, hi in cell.pieces:
            inside += c.overlap_measure(lo, hi)
        for part in (inside, cell.measure - inside):
            tlo, thi = _term_bounds(part.numerator, part.denominator)
            joint_lo += tlo
            joint_hi += thi
    base = entropy_of_weights(p.weights)
    return (EntropyValue(joint_lo, joint_hi) - base).clipped()


def mixing_mass_threshold(eps) -> Fraction:
    """The delta in (0, eps/2) with -x log2 x < eps/4 on (0, delta] u [1-delta, 1).

    Found by bisection over dyadic midpoints against the smaller root of
    -x log2 x = eps/4; every acceptance is certified by interval arithmetic, so
    the returned rational provably satisfies both conditions.  48 halvings give
    a deterministic, reproducible value.
    """
    eps = Fraction(eps)
    if not (ZERO < eps <= ONE):
        raise DomainError("need 0 < eps <= 1")
    target = eps / 4

    def certified(x: Fraction) -> bool:
        # -x log2 x is increasing on (0, 1/4], so x <= 1/4 certifies all of (0, x];
        # the mirror check at 1-x covers [1-x, 1) where the map is decreasing
        if x >= eps / 2 or x > Fraction(1, 4):
            return False
        flo, fhi = _term_bounds(x.numerator, x.denominator)
        if fhi >= target:
            return False
        glo, ghi = _term_bounds((ONE - x).numerator, (ONE - x).denominator)
        return ghi < target

    lo, hi = ZERO, Fraction(1, 4)
    for _ in range(48):
        mid = (lo + hi) / 2
        if certified(mid):
            lo = mid
        else:
            hi = mid
    if lo == ZERO:
        raise DomainError(f"no certified threshold found for eps = {eps}")
    return lo


def mixed_cell_mass(p, c: IntervalSet, delta1) -> Fraction:
    """Exact mass of cells whose C-fraction lies in [delta1, 1 - delta1].

    Accepts a Partition or anything with a `cells` tuple (induced partitions).
    """
    delta1 = Fraction(delta1)
    if not (ZERO < delta1 < Fraction(1, 2)):
        raise DomainError("need 0 < delta1 < 1/2")
    mass = ZERO
    for cell in p.cells:
        w = cell.measure
        inside = sum((c.overlap_measure(lo, hi) for lo, hi in cell.pieces), ZERO)
        if delta1 * w <= inside <= (ONE - delta1) * w:
            mass += w
    return mass


@dataclass(frozen=True)
class UnionApprox:
    indices: tuple[int, ...]
    union: IntervalSet
    error: Fraction


def best_union_approx(p: Partition, c: IntervalSet, threshold=Fraction(1, 2)) -> UnionApprox:
    """Majority vote: keep cells with mu(A n C) > threshold * mu(A)."""
    threshold = Fraction(threshold)
    if not (ZERO < threshold < ONE):
        raise DomainError("need 0 < threshold < 1")
    picked = []
    union = IntervalSet.empty()
    for k, cell in enumerate(p.cells):
        inside = sum((c.overlap_measure(lo, hi) for lo, hi in cell.pieces), ZERO)
        if inside > threshold * cell.measure:
            picked.append(k)
            union = union | cell
    return UnionApprox(tuple(picked), union, (union ^ c).measure)


@dataclass(frozen=True)
class GreedyResult:
    indices: tuple[int, ...]
    steps: tuple[EntropyValue, ...]
    prefix_entropies: tuple[EntropyValue, ...]
    joined: Partition

    @property
    def total(self) -> EntropyValue:
        return self.prefix_entropies[-1]


def greedy_family_sequence(
    family: SetFamily, n: int, max_cells: int | None = DEFAULT_CELL_BUDGET
) -> GreedyResult:
    """Pick n members greedily by conditional entropy against the running join.

    Ties (candidates not certified greater than the incumbent) keep the
    smallest index.  The scan short-circuits once an incumbent provably hits
    the 1-bit ceiling of a two-cell conditioning.  The chain rule
    H(join) = sum of steps is audited against the directly computed join
    entropy; disagreement raises EntropyAuditError.
    """
    if not (1 <= n <= family.horizon):
        raise DomainError(f"need 1 <= n <= horizon {family.horizon}")
    current = Partition.trivial()
    indices: list[int] = []
    steps: list[EntropyValue] = []
    prefixes: list[EntropyValue] = []
    for _ in range(n):
        best_idx = None
        best_val = None
        for j in range(family.horizon):
            val = set_conditional_entropy(family.member(j), current)
            if best_val is None or val.certified_gt(best_val.hi):
                best_idx, best_val = j, val
            if best_val.lo >= 1:
                break
        chosen = family.member(best_idx)
        indices.append(best_idx)
        steps.append(best_val)
        current = join_partitions(current, Partition.two_set(chosen), max_cells=max_cells)
        prefixes.append(partition_entropy(current))
    total = steps[0]
    for s in steps[1:]:
        total = total + s
    if not total.intersects(prefixes[-1]):
        raise EntropyAuditError(
            f"chain rule audit failed: sum of steps {total} vs join entropy {prefixes[-1]}"
        )
    return GreedyResult(tuple(indices), tuple(steps), tuple(prefixes), current)


def family_entropy_profile(
    family: SetFamily, n_max: int, max_cells: int | None = DEFAULT_CELL_BUDGET
) -> tuple[tuple[int, EntropyValue], ...]:
    """Certified lower bounds (1/n) H(greedy join of n members) for n = 1..n_max.

    Lower bounds on the family's sequence entropy at each horizon; no limit
    or liminf is claimed.
    """
    result = greedy_family_sequence(family, n_max, max_cells=max_cells)
    return tuple(
        (i + 1, h.scaled(Fraction(1, i + 1)))
        for i, h in enumerate(result.prefix_entropies)
    )


def zero_entropy_certificate(
    family: SetFamily, delta, ladder_max_level: int
) -> Partition | None:
    """Coarsest dyadic-ladder partition with H(C|Pi) <= delta across the horizon.

    Returns None when no level 1..ladder_max_level works; a returned
    certificate proves smallness for the enumerated horizon only.  The <= is
    certified (upper enclosure bound below delta), so dyadic-exact entropies
    compare crisply at the threshold.
    """
    delta = Fraction(delta)
    if delta <= ZERO:
        raise DomainError("need delta > 0")
    for level in range(1, ladder_max_level + 1):
        ladder = Partition.dyadic(level)
        if all(
            set_conditional_entropy(c, ladder).certified_le(delta)
            for c in family.members()
        ):
            return ladder
    return None


@dataclass(frozen=True)
class VCResult:
    dimension: int
    witness: tuple[int, ...]


def vc_dual_dimension(family: SetFamily, k_max: int) -> VCResult:
    """Largest k <= k_max where some k members' join has all 2^k cells alive.

    Depth-first over index-increasing tuples; a candidate that leaves any
    current cell unsplit cannot extend the tuple, which prunes hard.
    """
    if k_max < 1:
        raise DomainError("need k_max >= 1")
    best = VCResult(0, ())

    def extend(start: int, cells: list[IntervalSet], chosen: list[int]) -> bool:
        nonlocal best
        if len(chosen) > best.dimension:
            best = VCResult(len(chosen), tuple(chosen))
        if len(chosen) == k_max:
            return True
        for j in range(start, family.horizon):
            s = family.member(j)
            refined = []
            for cell in cells:
                inside = cell & s
                outside = cell - s
                if inside.is_empty or outside.is_empty:
                    refined = None
                    break
                refined.append(inside)
                refined.append(outside)
            if refined is not None:
                chosen.append(j)
                if extend(j + 1, refined, chosen):
                    return True
                chosen.pop()
        return False

    extend(0, [IntervalSet.full()], [])
    return best


def transformation_entropy_estimate(
    t: PiecewiseMap, p: Partition, n: int, max_cells: int | None = DEFAULT_CELL_BUDGET
) -> EntropyValue:
    """(1/n) H(p v T^-1 p v ... v T^-(n-1) p) with exact preimages."""
    if n < 1:
        raise DomainError("need n >= 1")
    joined = p
    pulled = p
    for _ in range(1, n):
        pulled = Partition(
            tuple(t.preimage(c) for c in pulled.cells), pulled.labels
        )
        joined = join_partitions(joined, pulled, max_cells=max_cells)
    return partition_entropy(joined).scaled(Fraction(1, n))
