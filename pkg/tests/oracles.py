"""Independent brute-force reference implementations used to freeze expectations.

Everything here works on an atom grid: pick a common denominator D for all
endpoints in sight, identify a set with the set of atom indices
{j : [j/D, (j+1)/D) inside the set}, and do plain Python set arithmetic.
Deliberately dumb and O(D), sharing no code with the package's sweeps.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Sequence

from ergolab.measure import IntervalSet


def common_denominator(sets: Iterable[IntervalSet], extra: Iterable[Fraction] = ()) -> int:
    den = 1
    for s in sets:
        for lo, hi in s.pieces:
            den = math.lcm(den, lo.denominator, hi.denominator)
    for q in extra:
        den = math.lcm(den, q.denominator)
    return den


def atoms(s: IntervalSet, den: int) -> frozenset[int]:
    out = set()
    for lo, hi in s.pieces:
        a = lo.numerator * (den // lo.denominator)
        b = hi.numerator * (den // hi.denominator)
        out.update(range(a, b))
    return frozenset(out)


def from_atoms(idx: Iterable[int], den: int) -> IntervalSet:
    return IntervalSet.from_pieces(
        (Fraction(j, den), Fraction(j + 1, den)) for j in sorted(idx)
    )


def oracle_measure(s: IntervalSet) -> Fraction:
    den = common_denominator([s])
    return Fraction(len(atoms(s, den)), den)


def oracle_apply(a: IntervalSet, b: IntervalSet, op: str) -> IntervalSet:
    den = common_denominator([a, b])
    x, y = atoms(a, den), atoms(b, den)
    full = frozenset(range(den))
    picked = {
        "union": x | y,
        "intersect": x & y,
        "diff": x - y,
        "symdiff": x ^ y,
        "complement": full - x,
    }[op]
    return from_atoms(picked, den)


def oracle_join_sets(sets: Sequence[IntervalSet]) -> list[frozenset[int]]:
    """All nonempty sign-pattern cells, as atom sets, enumerated over 2^n patterns."""
    den = common_denominator(sets)
    full = frozenset(range(den))
    marks = [atoms(s, den) for s in sets]
    cells = []
    for pattern in range(2 ** len(sets)):
        cell = full
        for i, mark in enumerate(marks):
            cell = cell & (mark if (pattern >> i) & 1 else full - mark)
            if not cell:
                break
        if cell:
            cells.append(cell)
    return cells


def oracle_entropy_bits(weights: Sequence[Fraction], dps: int = 60) -> Fraction:
    """High-precision -sum p log2 p via mpmath real arithmetic (not intervals).

    Returned as the exact Fraction of the computed dyadic float, so callers
    can compare without any further rounding.
    """
    import mpmath

    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for w in weights:
            if w == 0:
                continue
            p = mpmath.mpf(w.numerator) / w.denominator
            total -= p * mpmath.log(p, 2)
        sign, man, exp, _ = total._mpf_
        value = Fraction(int(man)) * Fraction(2) ** exp
        return -value if sign else value
