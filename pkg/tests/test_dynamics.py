"""Piecewise map algebra: builders, composition, transport, the weak metric."""

from __future__ import annotations

import random
from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergolab.dynamics import (
    GeneratingSequence,
    MapError,
    MapPiece,
    PiecewiseMap,
    compose,
    conjugate,
    doubling,
    exchange_two,
    identity,
    interval_exchange,
    invert,
    iterate,
    map_conjugator,
    map_resolution,
    odometer,
    rotation,
    weak_metric,
)
from ergolab.measure import IntervalSet, digit_set, dyadic_interval


def counter_of(x: F, resolution: int) -> int:
    """Value of the first `resolution` binary digits read as a little-endian counter."""
    c = 0
    for i in range(resolution):
        x *= 2
        bit = int(x)
        x -= bit
        c |= bit << i
    return c


def rational_points(den: int = 256, count: int = 64, seed: int = 11):
    rng = random.Random(seed)
    return [F(rng.randrange(den * 16), den * 16) for _ in range(count)]


SMALL_MAPS = [
    identity(),
    rotation(F(1, 3)),
    rotation(F(5, 8)),
    odometer(3),
    odometer(5),
    exchange_two(F(1, 8), F(1, 4), F(3, 4)),
    interval_exchange([F(1, 2), F(1, 3), F(1, 6)], [2, 0, 1]),
]


# -- construction audits -------------------------------------------------------


def test_rejects_non_tiling_domains():
    with pytest.raises(MapError):
        PiecewiseMap((MapPiece(F(0), F(1, 2), 1, F(0)),))
    with pytest.raises(MapError):
        PiecewiseMap(
            (MapPiece(F(0), F(1, 2), 1, F(0)), MapPiece(F(3, 4), F(1), 1, F(0)))
        )


def test_rejects_measure_distortion():
    # both halves land on [0, 1/2): density 2 there, 0 elsewhere
    with pytest.raises(MapError):
        PiecewiseMap(
            (MapPiece(F(0), F(1, 2), 1, F(0)), MapPiece(F(1, 2), F(1), 1, F(-1, 2)))
        )


def test_rejects_bad_slope_and_escape():
    with pytest.raises(MapError):
        MapPiece(F(0), F(1), 0, F(0))
    with pytest.raises(MapError):
        MapPiece(F(0), F(1), 1, F(1, 2))  # image [1/2, 3/2)
    with pytest.raises(MapError):
        MapPiece(F(1, 2), F(1, 4), 1, F(0))


def test_adjacent_equal_law_branches_merge():
    t = PiecewiseMap(
        (MapPiece(F(0), F(1, 2), 1, F(0)), MapPiece(F(1, 2), F(1), 1, F(0)))
    )
    assert t.piece_count == 1
    assert t == identity()


# -- odometer against the counter oracle ------------------------------------------


@pytest.mark.parametrize("resolution", [1, 2, 4, 6])
def test_odometer_is_plus_one_on_counters(resolution):
    t = odometer(resolution)
    den = 2**resolution
    for j in range(den):
        x = F(j, den)
        assert counter_of(t.apply(x), resolution) == (counter_of(x, resolution) + 1) % den


def test_odometer_period():
    t = odometer(3)
    assert iterate(t, 8) == identity()
    for k in range(1, 8):
        assert iterate(t, k) != identity()


def test_odometer_piece_count_and_provenance():
    t = odometer(6)
    assert t.piece_count == 7
    assert map_resolution(t) == 6
    assert map_conjugator(t) is None
    assert map_resolution(rotation(F(1, 3))) is None


# -- composition and inversion ---------------------------------------------------


@pytest.mark.parametrize("t", SMALL_MAPS, ids=lambda t: f"{t.piece_count}p")
def test_invert_left_and_right_inverse(t):
    assert compose(invert(t), t) == identity()
    assert compose(t, invert(t)) == identity()


def test_compose_pointwise():
    maps = SMALL_MAPS + [doubling()]
    for f in maps:
        for g in maps:
            fg = compose(f, g)
            for x in rational_points():
                assert fg.apply(x) == f.apply(g.apply(x))


def test_rotation_group_laws():
    assert compose(rotation(F(1, 3)), rotation(F(1, 3))) == rotation(F(2, 3))
    assert iterate(rotation(F(1, 4)), 4) == identity()
    assert invert(rotation(F(1, 3))) == rotation(F(2, 3))


def test_exchange_two_inverse():
    # equal blocks swap back; unequal blocks invert by swapping at the mirror cut
    even = exchange_two(F(1, 4), F(1, 2), F(3, 4))
    assert compose(even, even) == identity()
    sw = exchange_two(F(1, 8), F(1, 4), F(3, 4))
    assert invert(sw) == exchange_two(F(1, 8), F(1, 8) + F(1, 2), F(3, 4))
    assert sw.image(IntervalSet.interval(F(1, 8), F(1, 4))) == IntervalSet.interval(
        F(5, 8), F(3, 4)
    )


def test_interval_exchange_validation():
    with pytest.raises(MapError):
        interval_exchange([F(1, 2), F(1, 3)], [1, 0])
    with pytest.raises(MapError):
        interval_exchange([F(1, 2), F(1, 2)], [0, 0])


def test_iterate_matches_repeated_compose():
    t = odometer(4)
    acc = identity()
    for n in range(6):
        assert iterate(t, n) == acc
        acc = compose(t, acc)
    with pytest.raises(MapError):
        iterate(t, -1)


# -- set transport -----------------------------------------------------------------


def test_doubling_is_not_invertible_but_preserves_measure():
    d = doubling()
    assert not d.invertible
    with pytest.raises(MapError):
        d.image(IntervalSet.interval(0, F(1, 2)))
    pre = d.preimage(IntervalSet.interval(0, F(1, 2)))
    assert pre == IntervalSet.from_pieces([(F(0), F(1, 4)), (F(1, 2), F(3, 4))])
    # T^-1 of the k-th digit set is the (k+1)-th
    for k in (1, 2, 3):
        assert d.preimage(digit_set(k)) == digit_set(k + 1)


@pytest.mark.parametrize("t", SMALL_MAPS, ids=lambda t: f"{t.piece_count}p")
def test_image_preimage_round_trip(t):
    for s in [digit_set(2), dyadic_interval(3, 5), IntervalSet.empty(), IntervalSet.full()]:
        assert t.image(t.preimage(s)) == s
        assert t.preimage(t.image(s)) == s
        assert t.preimage(s).measure == s.measure


def test_preimage_measure_preserved_under_doubling():
    rng = random.Random(5)
    for _ in range(25):
        cuts = sorted(F(rng.randrange(65), 64) for _ in range(6))
        s = IntervalSet.from_pieces(zip(cuts[0::2], cuts[1::2]))
        assert doubling().preimage(s).measure == s.measure


def test_conjugate_transports_provenance():
    t = conjugate(odometer(4), rotation(F(1, 4)))
    assert map_resolution(t) == 4
    assert map_conjugator(t) == rotation(F(1, 4))
    again = conjugate(t, rotation(F(1, 4)))
    assert map_conjugator(again) == rotation(F(1, 2))
    assert conjugate(odometer(3), identity()) == odometer(3)
    with pytest.raises(MapError):
        conjugate(odometer(3), doubling())


def test_conjugate_pointwise():
    phi = exchange_two(F(0), F(1, 4), F(1, 2))
    t = conjugate(rotation(F(1, 8)), phi)
    inv = invert(phi)
    for x in rational_points():
        assert t.apply(x) == inv.apply(rotation(F(1, 8)).apply(phi.apply(x)))


# -- serialization --------------------------------------------------------------------


@pytest.mark.parametrize("t", SMALL_MAPS + [doubling()], ids=lambda t: f"{t.piece_count}p")
def test_map_text_round_trip(t):
    assert PiecewiseMap.from_text(t.to_text()) == t


def test_apply_outside_domain():
    with pytest.raises(MapError):
        identity().apply(F(3, 2))


# -- weak metric -------------------------------------------------------------------


def test_generating_sequence_enumeration():
    gen = GeneratingSequence()
    texts = [gen.member(i).to_text() for i in range(1, 7)]
    assert texts == ["0/1..1/2", "1/2..1/1", "0/1..1/4", "1/4..1/2", "1/2..3/4", "3/4..1/1"]
    assert gen.tail_bound(2) == F(1, 2)


def test_weak_metric_identity_vs_half_swap():
    swap = exchange_two(F(0), F(1, 2), F(1))
    value, tail = weak_metric(identity(), swap, m=2)
    assert (value, tail) == (F(3, 2), F(1, 2))


def test_weak_metric_axioms():
    a, b = rotation(F(1, 3)), odometer(3)
    assert weak_metric(a, a, m=6)[0] == 0
    assert weak_metric(a, b, m=6)[0] == weak_metric(b, a, m=6)[0]
    d_ab = weak_metric(a, b, m=6)[0]
    c = exchange_two(F(0), F(1, 4), F(1, 2))
    assert d_ab <= weak_metric(a, c, m=6)[0] + weak_metric(c, b, m=6)[0]


def test_weak_metric_rejects_noninvertible():
    with pytest.raises(MapError):
        weak_metric(identity(), doubling(), m=3)
