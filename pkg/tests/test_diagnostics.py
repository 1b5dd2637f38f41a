"""Deviation functionals against pointwise orbit oracles."""

from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergolab import diagnostics
from ergolab.diagnostics import (
    DeviationReport,
    _mask_from_set,
    _pair_and_compress,
    _sweep_l1,
    l1_ergodic_deviation,
    lipschitz_uniform_bound,
    strong_mixing_deviation,
    uniform_l1_deviation,
    weak_mixing_deviation,
)
from ergolab.dynamics import (
    conjugate,
    doubling,
    exchange_two,
    identity,
    odometer,
    rotation,
)
from ergolab.families import digit_sets, dyadic_intervals, explicit
from ergolab.measure import (
    DomainError,
    IntervalSet,
    JoinBudgetError,
    Partition,
)


def pointwise_l1(t, c, n, den):
    # forward orbits of atom midpoints; den must refine every set the
    # orbit can meet, including the 2^n-fold splitting under doubling
    total = F(0)
    mu = c.measure
    for a in range(den):
        x = F(2 * a + 1, 2 * den)
        count = 0
        for _ in range(n):
            if x in c:
                count += 1
            x = t.apply(x)
        total += abs(F(count, n) - mu) / den
    return total


@st.composite
def grid_sets(draw, den, max_cuts=6):
    cuts = sorted(
        draw(
            st.lists(
                st.integers(min_value=0, max_value=den),
                min_size=0,
                max_size=max_cuts,
                unique=True,
            )
        )
    )
    pieces = [
        (F(lo, den), F(hi, den)) for lo, hi in zip(cuts[::2], cuts[1::2]) if lo < hi
    ]
    return IntervalSet.from_pieces(pieces)


HALF = IntervalSet.interval(F(0), F(1, 2))


@pytest.mark.parametrize(
    "t", [identity(), rotation(F(1, 3)), odometer(3)], ids=["id", "rot", "odo"]
)
def test_single_step_deviation_of_half(t):
    assert l1_ergodic_deviation(t, HALF, 1) == F(1, 2)


@given(grid_sets(den=16))
def test_single_step_deviation_is_twice_variance(c):
    mu = c.measure
    assert l1_ergodic_deviation(odometer(4), c, 1) == 2 * mu * (1 - mu)


def test_halves_average_out_after_two_steps():
    assert l1_ergodic_deviation(odometer(2), HALF, 2) == 0


@pytest.mark.parametrize("level", [1, 2, 3, 4, 5])
def test_dyadic_intervals_average_out_at_their_period(level):
    c = IntervalSet.interval(F(1, 2**level), F(2, 2**level))
    assert l1_ergodic_deviation(odometer(5), c, 2**level) == 0


@given(grid_sets(den=24), st.integers(min_value=1, max_value=6))
@settings(max_examples=40)
def test_engines_agree_on_rotation(c, n):
    t = rotation(F(1, 3))
    value = l1_ergodic_deviation(t, c, n)
    assert value == _sweep_l1(t, c, n, 2**16)
    assert value == pointwise_l1(t, c, n, 24)


@given(grid_sets(den=16), st.integers(min_value=1, max_value=8))
@settings(max_examples=40)
def test_engines_agree_on_odometer(c, n):
    t = odometer(4)
    value = l1_ergodic_deviation(t, c, n)
    assert value == _sweep_l1(t, c, n, 2**16)
    assert value == pointwise_l1(t, c, n, 16)


@given(grid_sets(den=4, max_cuts=4), st.integers(min_value=1, max_value=4))
@settings(max_examples=25)
def test_doubling_matches_pointwise_oracle(c, n):
    value = l1_ergodic_deviation(doubling(), c, n)
    assert value == pointwise_l1(doubling(), c, n, 64)


@given(grid_sets(den=16), grid_sets(den=16), st.integers(min_value=1, max_value=5))
@settings(max_examples=40)
def test_deviation_is_lipschitz_in_the_set(c, c2, n):
    t = odometer(4)
    gap = 2 * (c ^ c2).measure
    assert l1_ergodic_deviation(t, c, n) <= gap + l1_ergodic_deviation(t, c2, n)


@given(grid_sets(den=8), st.integers(min_value=1, max_value=6))
@settings(max_examples=40)
def test_one_step_horizon_shift_is_small(c, n):
    t = odometer(3)
    a = l1_ergodic_deviation(t, c, n)
    b = l1_ergodic_deviation(t, c, n + 1)
    assert abs(a - b) <= F(2, n + 1)


@given(grid_sets(den=8), st.integers(min_value=1, max_value=6))
@settings(max_examples=30)
def test_conjugation_transports_deviations(c, n):
    t = odometer(3)
    phi = exchange_two(F(0), F(3, 8), F(1))
    twisted = conjugate(t, phi)
    assert l1_ergodic_deviation(twisted, phi.preimage(c), n) == l1_ergodic_deviation(
        t, c, n
    )


def test_horizon_must_be_positive():
    with pytest.raises(DomainError):
        l1_ergodic_deviation(odometer(2), HALF, 0)


def test_sweep_budget_is_enforced():
    with pytest.raises(JoinBudgetError):
        l1_ergodic_deviation(doubling(), HALF, 20, max_cells=50)


def test_uniform_report_on_a_tiling_horizon():
    report = uniform_l1_deviation(odometer(4), dyadic_intervals(3), 16)
    assert report.sup == 0
    assert report.argmax == 0
    assert len(report.per_member) == 14
    assert report.truncation_error == 1
    assert all(0 <= value <= 1 for _, value in report.per_member)


def test_uniform_report_sup_and_argmax_are_frozen():
    report = uniform_l1_deviation(odometer(6), dyadic_intervals(5), 16)
    assert report.sup == F(1, 32)
    assert report.argmax == 30
    assert report.truncation_error == F(1, 4)
    for index, value in report.per_member:
        level = (index + 2).bit_length() - 1
        if level <= 4:
            assert value == 0
        else:
            assert value == F(1, 32)
    assert report.sup == max(v for _, v in report.per_member)


def test_single_step_uniform_sup_is_twice_variance():
    family = dyadic_intervals(2)
    report = uniform_l1_deviation(odometer(3), family, 1)
    for index, value in report.per_member:
        mu = family.member(index).measure
        assert value == 2 * mu * (1 - mu)
    assert report.sup == F(1, 2)


def test_strong_mixing_forgets_coarse_dyadic_data():
    report = strong_mixing_deviation(doubling(), dyadic_intervals(3), 3)
    assert report.sup == 0


def test_zero_lag_correlation_of_half():
    family = explicit([HALF])
    report = strong_mixing_deviation(doubling(), family, 0)
    assert report.sup == F(1, 4)
    assert report.argmax == (0, 0)


@pytest.mark.parametrize("n", [0, 1, 5])
def test_identity_never_mixes(n):
    report = strong_mixing_deviation(identity(), explicit([HALF]), n)
    assert report.sup == F(1, 4)


@given(grid_sets(den=8))
@settings(max_examples=30)
def test_identity_lag_correlation_is_variance(c):
    report = strong_mixing_deviation(identity(), explicit([c]), 3)
    assert report.sup == c.measure * (1 - c.measure)


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_digit_correlations_match_the_shift_oracle(n, monkeypatch):
    family = digit_sets(3)
    report = strong_mixing_deviation(doubling(), family, n)
    hits = [(a, b) for a in range(3) for b in range(3) if a + 1 == b + 1 + n]
    if hits:
        assert report.sup == F(1, 4)
        assert report.argmax == min(hits)
    else:
        assert report.sup == 0
    monkeypatch.setattr(diagnostics, "MASK_BIT_CAP", 0)
    assert strong_mixing_deviation(doubling(), family, n) == report


def test_mask_and_set_engines_agree_on_intervals(monkeypatch):
    family = dyadic_intervals(2)
    by_mask = weak_mixing_deviation(doubling(), family, 4)
    monkeypatch.setattr(diagnostics, "MASK_BIT_CAP", 0)
    assert weak_mixing_deviation(doubling(), family, 4) == by_mask


def test_full_interval_has_no_correlation():
    family = explicit([IntervalSet.full()])
    assert weak_mixing_deviation(doubling(), family, 8).sup == 0


def test_weak_mixing_of_level_two_intervals():
    family = dyadic_intervals(2)
    report = weak_mixing_deviation(doubling(), family, 16)
    assert report.sup <= F(1, 16)
    assert report.sup == F(1, 64)


def test_weak_mixing_matches_preimage_oracle():
    t = doubling()
    family = dyadic_intervals(2)
    n = 6
    report = weak_mixing_deviation(t, family, n)
    members = list(family.members())
    best = F(0)
    for b_set in members:
        chain = [b_set]
        for _ in range(n - 1):
            chain.append(t.preimage(chain[-1]))
        for a_set in members:
            product = a_set.measure * b_set.measure
            total = sum(abs((a_set & pulled).measure - product) for pulled in chain)
            best = max(best, total / n)
    assert report.sup == best


def test_weak_mixing_below_running_strong_maximum():
    family = dyadic_intervals(2)
    weak = weak_mixing_deviation(doubling(), family, 4)
    strongest = max(
        strong_mixing_deviation(doubling(), family, i).sup for i in range(4)
    )
    assert weak.sup <= strongest


def test_pair_reports_keep_the_ten_largest():
    report = strong_mixing_deviation(doubling(), dyadic_intervals(2), 1)
    assert len(report.per_member) == 10
    values = [value for _, value in report.per_member]
    assert values == sorted(values, reverse=True)
    assert report.per_member[0] == (report.argmax, report.sup)


def test_negative_lag_is_rejected():
    with pytest.raises(DomainError):
        strong_mixing_deviation(doubling(), dyadic_intervals(2), -1)


@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_pair_compress_matches_bit_oracle(x):
    width = 32
    out = _pair_and_compress(x, width)
    for p in range(width // 2):
        expected = (x >> (2 * p)) & (x >> (2 * p + 1)) & 1
        assert (out >> p) & 1 == expected


@given(grid_sets(den=16))
def test_mask_round_trip_preserves_measure(c):
    mask = _mask_from_set(c, 64)
    assert F(mask.bit_count(), 64) == c.measure


def test_lipschitz_bound_dominates_direct_sup():
    family = dyadic_intervals(2)
    cert = Partition.dyadic(2)
    t = odometer(3)
    evaluate = lambda s: l1_ergodic_deviation(t, s, 4)
    bound = lipschitz_uniform_bound(family, cert, evaluate, 2, 0)
    direct = uniform_l1_deviation(odometer(3), family, 4)
    assert bound >= direct.sup
    cells = cert.cells
    widest = max(
        evaluate(
            IntervalSet.from_pieces(
                [p for k, cell in enumerate(cells) if (sel >> k) & 1 for p in cell.pieces]
            )
        )
        for sel in range(2 ** len(cells))
    )
    assert bound == widest


def test_lipschitz_rejects_unapproximable_members():
    family = dyadic_intervals(3)
    cert = Partition.dyadic(2)
    t = odometer(3)
    evaluate = lambda s: l1_ergodic_deviation(t, s, 4)
    with pytest.raises(DomainError, match="approximable"):
        lipschitz_uniform_bound(family, cert, evaluate, 2, 0)
    bound = lipschitz_uniform_bound(family, cert, evaluate, 2, F(1, 8))
    assert bound >= uniform_l1_deviation(odometer(3), family, 4).sup


def test_lipschitz_union_scan_budget():
    family = dyadic_intervals(2)
    with pytest.raises(JoinBudgetError):
        lipschitz_uniform_bound(
            family, Partition.dyadic(3), lambda s: F(0), 2, F(1, 8), max_unions=100
        )


def test_lipschitz_bound_at_the_tiling_scale():
    family = dyadic_intervals(4)
    cert = Partition.dyadic(4)
    t = odometer(4)
    evaluate = lambda s: l1_ergodic_deviation(t, s, 16)
    bound = lipschitz_uniform_bound(family, cert, evaluate, 2, 0)
    direct = uniform_l1_deviation(t, family, 16)
    assert bound == 0
    assert bound - direct.sup <= 2 * F(0)
