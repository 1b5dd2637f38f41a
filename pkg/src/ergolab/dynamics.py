"""Measure-preserving piecewise-affine maps of [0, 1), exactly.

A map is a finite list of affine branches y = slope*x + offset with integer
slope >= 1 whose domains tile [0, 1).  Measure preservation is audited at
construction: on every elementary gap of the image space the branch densities
1/slope must sum to exactly 1.  Slope-1 maps with tiling images are the
invertible interval exchanges; slope-2 branches cover the doubling map.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

from ergolab.measure import (
    ONE,
    ZERO,
    DomainError,
    IntervalSet,
    as_rational,
    format_rational,
)

__all__ = [
    "MapError",
    "MapPiece",
    "PiecewiseMap",
    "GeneratingSequence",
    "identity",
    "rotation",
    "doubling",
    "odometer",
    "interval_exchange",
    "exchange_two",
    "compose",
    "invert",
    "iterate",
    "conjugate",
    "weak_metric",
    "restrict_pieces",
    "compose_onto",
    "shift_pieces",
    "map_resolution",
    "map_conjugator",
]


class MapError(ValueError):
    """Invalid branch data, or an operation that needs invertibility lacks it."""


@dataclass(frozen=True)
class MapPiece:
    lo: Fraction
    hi: Fraction
    slope: int
    offset: Fraction

    def __post_init__(self) -> None:
        for end in (self.lo, self.hi, self.offset):
            if not isinstance(end, Fraction):
                raise TypeError("piece data must be Fractions (offset) and ints (slope)")
        if not isinstance(self.slope, int) or self.slope < 1:
            raise MapError(f"slope must be a positive integer, got {self.slope!r}")
        if not (ZERO <= self.lo < self.hi <= ONE):
            raise MapError(f"branch domain [{self.lo}, {self.hi}) escapes [0, 1)")
        if self.img_lo < ZERO or self.img_hi > ONE:
            raise MapError(
                f"branch image [{self.img_lo}, {self.img_hi}) escapes [0, 1)"
            )

    @property
    def img_lo(self) -> Fraction:
        return self.slope * self.lo + self.offset

    @property
    def img_hi(self) -> Fraction:
        return self.slope * self.hi + self.offset

    def apply(self, x: Fraction) -> Fraction:
        return self.slope * x + self.offset

    def pull(self, y: Fraction) -> Fraction:
        return (y - self.offset) / self.slope


def _merge_pieces(pieces: Iterable[MapPiece]) -> tuple[MapPiece, ...]:
    out: list[MapPiece] = []
    for p in pieces:
        if (
            out
            and out[-1].hi == p.lo
            and out[-1].slope == p.slope
            and out[-1].offset == p.offset
        ):
            out[-1] = MapPiece(out[-1].lo, p.hi, p.slope, p.offset)
        else:
            out.append(p)
    return tuple(out)


@dataclass(frozen=True)
class PiecewiseMap:
    """Piecewise-affine measure-preserving map; branches tile [0, 1).

    `origin` carries provenance metadata (e.g. the resolution of an odometer
    and the conjugator it was transported by) for tower construction and
    truncation-error reporting; it never participates in equality.
    """

    pieces: tuple[MapPiece, ...]
    origin: tuple | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        merged = _merge_pieces(self.pieces)
        object.__setattr__(self, "pieces", merged)
        if not merged:
            raise MapError("map needs at least one branch")
        cursor = ZERO
        for p in merged:
            if p.lo != cursor:
                raise MapError(f"branch domains do not tile [0, 1): jump at {cursor}")
            cursor = p.hi
        if cursor != ONE:
            raise MapError(f"branch domains stop at {cursor}, not 1")
        self._audit_measure_preserving(merged)

    @staticmethod
    def _audit_measure_preserving(pieces: tuple[MapPiece, ...]) -> None:
        # density of T_* Lebesgue at y is sum of 1/slope over branches covering y;
        # preservation of mu == density exactly 1 on every elementary image gap
        deltas: dict[Fraction, Fraction] = {}
        for p in pieces:
            w = Fraction(1, p.slope)
            deltas[p.img_lo] = deltas.get(p.img_lo, ZERO) + w
            deltas[p.img_hi] = deltas.get(p.img_hi, ZERO) - w
        bounds = sorted(deltas)
        if bounds[0] != ZERO or bounds[-1] != ONE:
            raise MapError("branch images do not cover [0, 1)")
        density = ZERO
        for q in bounds[:-1]:
            density += deltas[q]
            if density != 1:
                raise MapError(f"not measure-preserving: image density {density} at {q}")

    # -- queries -------------------------------------------------------------

    @cached_property
    def _los(self) -> tuple[Fraction, ...]:
        return tuple(p.lo for p in self.pieces)

    def piece_at(self, x: Fraction) -> MapPiece:
        idx = bisect_right(self._los, x) - 1
        if idx < 0 or x >= self.pieces[idx].hi:
            raise MapError(f"{x} is outside [0, 1)")
        return self.pieces[idx]

    def apply(self, x) -> Fraction:
        return self.piece_at(as_rational(x)).apply(as_rational(x))

    def __call__(self, x) -> Fraction:
        return self.apply(x)

    @property
    def piece_count(self) -> int:
        return len(self.pieces)

    @cached_property
    def invertible(self) -> bool:
        if any(p.slope != 1 for p in self.pieces):
            return False
        images = sorted((p.img_lo, p.img_hi) for p in self.pieces)
        cursor = ZERO
        for lo, hi in images:
            if lo != cursor:
                return False
            cursor = hi
        return cursor == ONE

    @property
    def is_translation_family(self) -> bool:
        """True when every branch is a translation (slope 1), tiling or not."""
        return all(p.slope == 1 for p in self.pieces)

    # -- set transport ---------------------------------------------------------

    def image(self, s: IntervalSet) -> IntervalSet:
        if not self.invertible:
            raise MapError("forward images need an invertible map")
        out = []
        for p in self.pieces:
            for lo, hi in s.clip(p.lo, p.hi).pieces:
                out.append((p.apply(lo), p.apply(hi)))
        return IntervalSet.from_pieces(out)

    def preimage(self, s: IntervalSet) -> IntervalSet:
        out = []
        for p in self.pieces:
            for lo, hi in s.clip(p.img_lo, p.img_hi).pieces:
                out.append((p.pull(lo), p.pull(hi)))
        return IntervalSet.from_pieces(out)

    # -- serialization ----------------------------------------------------------

    def to_text(self) -> str:
        return ";".join(
            f"{format_rational(p.lo)}..{format_rational(p.hi)}"
            f":{p.slope}:{format_rational(p.offset)}"
            for p in self.pieces
        )

    @classmethod
    def from_text(cls, text: str) -> "PiecewiseMap":
        pieces = []
        for chunk in text.strip().split(";"):
            span, slope_txt, offset_txt = chunk.split(":")
            lo_txt, _, hi_txt = span.partition("..")
            pieces.append(
                MapPiece(
                    as_rational(lo_txt),
                    as_rational(hi_txt),
                    int(slope_txt),
                    as_rational(offset_txt),
                )
            )
        return cls(tuple(pieces))

    def __repr__(self) -> str:  # pragma: no cover - debugging nicety
        tag = f" origin={self.origin[0]})" if self.origin else ")"
        return f"PiecewiseMap({self.piece_count} pieces{tag}"


# -- builders ------------------------------------------------------------------


def identity() -> PiecewiseMap:
    return PiecewiseMap((MapPiece(ZERO, ONE, 1, ZERO),))


def rotation(angle) -> PiecewiseMap:
    """x -> x + angle mod 1."""
    a = as_rational(angle) % 1
    if a == 0:
        return identity()
    cut = ONE - a
    return PiecewiseMap(
        (MapPiece(ZERO, cut, 1, a), MapPiece(cut, ONE, 1, a - ONE))
    )


def doubling() -> PiecewiseMap:
    half = Fraction(1, 2)
    return PiecewiseMap(
        (MapPiece(ZERO, half, 2, ZERO), MapPiece(half, ONE, 2, -ONE))
    )


def odometer(resolution: int) -> PiecewiseMap:
    """Binary odometer truncated at `resolution` binary digits.

    Acts as the +1 counter on the reversed first R digits: the branch for
    "first k-1 digits are 1, digit k is 0" carries [1-2^(1-k), 1-2^(1-k)+2^-k)
    to [2^-k, 2^(1-k)), and the all-ones cell wraps to the origin.  It is an
    interval exchange with R+1 branches, periodic with period 2^R.
    """
    if resolution < 1:
        raise MapError("odometer resolution must be >= 1")
    pieces = []
    for k in range(1, resolution + 1):
        lo = ONE - Fraction(1, 2 ** (k - 1))
        hi = lo + Fraction(1, 2**k)
        pieces.append(MapPiece(lo, hi, 1, Fraction(1, 2**k) - lo))
    wrap_lo = ONE - Fraction(1, 2**resolution)
    pieces.append(MapPiece(wrap_lo, ONE, 1, -wrap_lo))
    return PiecewiseMap(tuple(pieces), origin=("odometer", resolution, None))


def interval_exchange(lengths: Sequence, order: Sequence[int]) -> PiecewiseMap:
    """Exchange consecutive blocks of the given lengths into the given order.

    `order[j] = i` places the i-th source block at target slot j.
    """
    lens = [as_rational(q) for q in lengths]
    if sum(lens, ZERO) != 1:
        raise MapError("block lengths must sum to 1")
    if sorted(order) != list(range(len(lens))):
        raise MapError("order must be a permutation of block indices")
    src_lo = []
    acc = ZERO
    for q in lens:
        src_lo.append(acc)
        acc += q
    pieces = []
    acc = ZERO
    for i in order:
        pieces.append(MapPiece(src_lo[i], src_lo[i] + lens[i], 1, acc - src_lo[i]))
        acc += lens[i]
    return PiecewiseMap(tuple(sorted(pieces, key=lambda p: p.lo)))


def exchange_two(lo, mid, hi) -> PiecewiseMap:
    """Swap the adjacent blocks [lo, mid) and [mid, hi); identity elsewhere."""
    lo, mid, hi = as_rational(lo), as_rational(mid), as_rational(hi)
    if not (ZERO <= lo < mid < hi <= ONE):
        raise MapError("need 0 <= lo < mid < hi <= 1")
    pieces = []
    if lo > ZERO:
        pieces.append(MapPiece(ZERO, lo, 1, ZERO))
    pieces.append(MapPiece(lo, mid, 1, hi - mid))
    pieces.append(MapPiece(mid, hi, 1, lo - mid))
    if hi < ONE:
        pieces.append(MapPiece(hi, ONE, 1, ZERO))
    return PiecewiseMap(tuple(pieces))


# -- algebra ---------------------------------------------------------------------


def compose(outer: PiecewiseMap, inner: PiecewiseMap) -> PiecewiseMap:
    """The map x -> outer(inner(x))."""
    return PiecewiseMap(compose_onto(outer, inner.pieces))


def compose_onto(outer: PiecewiseMap, pieces: Sequence[MapPiece]) -> tuple[MapPiece, ...]:
    """Compose outer after a (possibly partial) run of branches."""
    out = []
    breaks = outer._los
    for p in pieces:
        # split p's domain wherever its image crosses an outer branch boundary
        cut_lo = p.img_lo
        while cut_lo < p.img_hi:
            idx = bisect_right(breaks, cut_lo) - 1
            o = outer.pieces[idx]
            cut_hi = min(o.hi, p.img_hi)
            out.append(
                MapPiece(
                    p.pull(cut_lo),
                    p.pull(cut_hi),
                    o.slope * p.slope,
                    o.slope * p.offset + o.offset,
                )
            )
            cut_lo = cut_hi
    return tuple(out)


def invert(t: PiecewiseMap) -> PiecewiseMap:
    if not t.invertible:
        raise MapError("map is not invertible")
    pieces = tuple(
        MapPiece(p.img_lo, p.img_hi, 1, -p.offset)
        for p in sorted(t.pieces, key=lambda p: p.img_lo)
    )
    return PiecewiseMap(pieces)


def iterate(t: PiecewiseMap, n: int) -> PiecewiseMap:
    """n-fold composition, n >= 0, by binary powering."""
    if n < 0:
        raise MapError("negative powers: invert first")
    acc = identity()
    square = t
    while n:
        if n & 1:
            acc = compose(square, acc)
        n >>= 1
        if n:
            square = compose(square, square)
    return acc


def conjugate(t: PiecewiseMap, phi: PiecewiseMap) -> PiecewiseMap:
    """phi^-1 . t . phi, with odometer provenance transported through phi."""
    if not phi.invertible:
        raise MapError("conjugation needs an invertible map")
    result = compose(compose(invert(phi), t), phi)
    if t.origin is not None and t.origin[0] == "odometer":
        resolution, prev = t.origin[1], t.origin[2]
        conj = phi if prev is None else compose(prev, phi)
        result = PiecewiseMap(result.pieces, origin=("odometer", resolution, conj))
    return result


def map_resolution(t: PiecewiseMap) -> int | None:
    """Odometer resolution R when t is an odometer or a conjugate of one."""
    if t.origin is not None and t.origin[0] == "odometer":
        return t.origin[1]
    return None


def map_conjugator(t: PiecewiseMap) -> PiecewiseMap | None:
    """The phi with t = phi^-1 . odometer . phi, identity reported as None."""
    if t.origin is not None and t.origin[0] == "odometer":
        return t.origin[2]
    return None


# -- partial-map plumbing (used by the construction assembly) ---------------------


def restrict_pieces(t: PiecewiseMap, s: IntervalSet) -> tuple[MapPiece, ...]:
    """Branches of t clipped to the domain set s."""
    out = []
    for p in t.pieces:
        for lo, hi in s.clip(p.lo, p.hi).pieces:
            out.append(MapPiece(lo, hi, p.slope, p.offset))
    return tuple(out)


def shift_pieces(pieces: Sequence[MapPiece], delta: Fraction) -> tuple[MapPiece, ...]:
    """Post-translate a run of branches by delta."""
    return tuple(MapPiece(p.lo, p.hi, p.slope, p.offset + delta) for p in pieces)


# -- the weak metric ----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratingSequence:
    """The dyadic generating sequence E_1, E_2, ... enumerated level by level.

    E_i for i = 2^l + j - 1 is the j-th level-l dyadic interval, so E_1 and
    E_2 are the two halves, E_3..E_6 the quarters, and so on.
    """

    kind: str = "dyadic"

    def member(self, i: int) -> IntervalSet:
        if i < 1:
            raise DomainError("generating sequence is 1-based")
        level = (i + 1).bit_length() - 1
        j = i + 1 - 2**level
        den = 2**level
        return IntervalSet(((Fraction(j, den), Fraction(j + 1, den)),))

    def tail_bound(self, m: int) -> Fraction:
        """Upper bound on the metric mass of all terms past m (each term <= 2*2^-i)."""
        if m < 0:
            raise DomainError("tail index must be >= 0")
        return Fraction(2, 2**m)


def weak_metric(
    phi: PiecewiseMap,
    psi: PiecewiseMap,
    gen: GeneratingSequence | None = None,
    m: int = 16,
) -> tuple[Fraction, Fraction]:
    """Truncated weak distance sum(2^-i * (mu(phi E_i ^ psi E_i) + inverse term)).

    Returns (partial sum over i <= m, tail bound 2^(1-m)); the true distance
    lies in [partial, partial + tail].
    """
    gen = gen or GeneratingSequence()
    if not (phi.invertible and psi.invertible):
        raise MapError("the weak metric lives on invertible maps")
    total = ZERO
    for i in range(1, m + 1):
        e = gen.member(i)
        fwd = (phi.image(e) ^ psi.image(e)).measure
        bwd = (phi.preimage(e) ^ psi.preimage(e)).measure
        total += Fraction(1, 2**i) * (fwd + bwd)
    return total, gen.tail_bound(m)
