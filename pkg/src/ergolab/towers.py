"""Rokhlin towers for odometer-derived maps.

A tower of height h stacks the sets base, T(base), ..., T^{h-1}(base);
they must be pairwise disjoint and their union may leave out a residual
of measure strictly below 1/h.  Construction is restricted to maps that
carry odometer provenance, where the column structure is exact: the
orbit of the finest cell visits every cell of the dyadic grid once per
period, so towers come out of pure arithmetic instead of a measurable
selection argument.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

from .dynamics import PiecewiseMap, map_conjugator, map_resolution
from .measure import IntervalSet, format_rational


class TowerError(ValueError):
    """Raised when no valid tower exists at the requested height."""


@dataclass(frozen=True)
class Tower:
    """Exact level stack: ``levels[i]`` is the i-fold image of ``base``."""

    base: IntervalSet
    height: int
    levels: tuple[IntervalSet, ...]
    residual: IntervalSet
    map: PiecewiseMap

    @cached_property
    def covered(self) -> IntervalSet:
        pieces = [piece for level in self.levels for piece in level.pieces]
        return IntervalSet.from_pieces(pieces)

    @property
    def top(self) -> IntervalSet:
        return self.levels[-1]


@dataclass(frozen=True)
class TowerCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class TowerReport:
    """Outcome of the exact tower checks, one entry per check."""

    checks: tuple[TowerCheck, ...]

    @property
    def ok(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> tuple[TowerCheck, ...]:
        return tuple(check for check in self.checks if not check.passed)

    def lines(self) -> list[str]:
        out = []
        for check in self.checks:
            status = "pass" if check.passed else "FAIL"
            text = f"{status} {check.name}"
            if check.detail:
                text += f": {check.detail}"
            out.append(text)
        return out


def _first_difference(expected: IntervalSet, actual: IntervalSet) -> str:
    gap = expected ^ actual
    lo, hi = gap.pieces[0]
    return f"[{format_rational(lo)}, {format_rational(hi)})"


def validate_tower(tower: Tower) -> TowerReport:
    """Re-check every tower invariant, reporting exact witnesses on failure."""
    checks: list[TowerCheck] = []

    shape_ok = len(tower.levels) == tower.height and tower.height >= 1
    first_ok = shape_ok and tower.levels[0] == tower.base
    checks.append(
        TowerCheck(
            "first-level",
            first_ok,
            "" if first_ok else f"{len(tower.levels)} levels for height {tower.height}"
            if not shape_ok else "levels[0] differs from base near "
            + _first_difference(tower.base, tower.levels[0]),
        )
    )

    if not tower.map.invertible:
        checks.append(TowerCheck("level-images", False, "map is not invertible"))
    else:
        bad = ""
        for i in range(1, len(tower.levels)):
            expected = tower.map.image(tower.levels[i - 1])
            if expected != tower.levels[i]:
                bad = f"level {i} differs from the image of level {i - 1} near " + \
                    _first_difference(expected, tower.levels[i])
                break
        checks.append(TowerCheck("level-images", not bad, bad))

    total = sum((level.measure for level in tower.levels), Fraction(0))
    union = tower.covered
    if total == union.measure:
        checks.append(TowerCheck("disjointness", True))
    else:
        detail = f"levels overlap: masses sum to {format_rational(total)} " \
            f"but cover only {format_rational(union.measure)}"
        for i in range(len(tower.levels)):
            hit = next(
                (j for j in range(i + 1, len(tower.levels))
                 if (tower.levels[i] & tower.levels[j]).measure > 0),
                None,
            )
            if hit is not None:
                detail += f"; first collision at levels {i} and {hit}"
                break
        checks.append(TowerCheck("disjointness", False, detail))

    complement_ok = tower.residual == ~union
    checks.append(
        TowerCheck(
            "residual-complement",
            complement_ok,
            "" if complement_ok
            else "residual differs from the uncovered part near "
            + _first_difference(~union, tower.residual),
        )
    )

    leftover = tower.residual.measure
    bound_ok = leftover * tower.height < 1
    checks.append(
        TowerCheck(
            "residual-bound",
            bound_ok,
            f"residual measure {format_rational(leftover)} vs bound 1/{tower.height}",
        )
    )

    base_mass = tower.base.measure
    offender = next(
        (i for i, level in enumerate(tower.levels) if level.measure != base_mass), None
    )
    checks.append(
        TowerCheck(
            "level-measures",
            offender is None,
            "" if offender is None
            else f"level {offender} has measure "
            f"{format_rational(tower.levels[offender].measure)}, "
            f"base has {format_rational(base_mass)}",
        )
    )

    return TowerReport(tuple(checks))


def rokhlin_tower(t: PiecewiseMap, height: int) -> Tower:
    """Build the height-``height`` tower for an odometer-derived map.

    The base is a union of sub-columns of the full-period column over the
    finest dyadic cell, so power-of-two heights tile [0,1) with empty
    residual and other heights leave exactly the cells the height does
    not divide into the period.
    """
    resolution = map_resolution(t)
    if resolution is None:
        raise TowerError(
            "map carries no odometer provenance; refusing to guess a column structure"
        )
    if height < 1:
        raise TowerError("height must be a positive integer")
    period = 2**resolution
    if height > period:
        raise TowerError(
            f"height {height} exceeds the period {period} at resolution {resolution}"
        )
    columns, leftover = divmod(period, height)
    if leftover * height >= period:
        raise TowerError(
            f"residual would be {leftover}/{period}, not below 1/{height}; "
            "no usable tower at this height"
        )

    seed = IntervalSet.interval(Fraction(0), Fraction(1, period))
    conjugator = map_conjugator(t)
    if conjugator is not None:
        seed = conjugator.preimage(seed)

    orbit = [seed]
    for _ in range(columns * height - 1):
        orbit.append(t.image(orbit[-1]))

    levels = tuple(
        IntervalSet.from_pieces(
            [piece for j in range(columns) for piece in orbit[j * height + i].pieces]
        )
        for i in range(height)
    )
    covered = IntervalSet.from_pieces(
        [piece for level in levels for piece in level.pieces]
    )
    tower = Tower(
        base=levels[0],
        height=height,
        levels=levels,
        residual=~covered,
        map=t,
    )
    report = validate_tower(tower)
    if not report.ok:
        raise TowerError("construction self-check failed: " + report.failures[0].detail)
    return tower
