"""Averaging-failure constructions over a conjugated odometer base.

Given an invertible conjugator phi, a Rokhlin tower for T_phi, and a family
with certified conditional entropy, this module assembles the three maps of
the failure mechanism: a packing map psi that straightens the tower into
consecutive intervals while pushing each cell's bad-set portion to the left
end of its target, a column shift S that walks the straightened tower upward,
and a level-matching isomorphism tau that conjugates S back to T_phi.  The
certificate then shows, in exact rational arithmetic, that S_psi = psi^-1 S
psi is close to T_phi in the weak metric yet its ergodic averages over one
tower period miss the mean of the bad set by more than delta1^3/64.  An
openness margin makes the failure stable: every conjugator within the margin
keeps the deviation above the same threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from ergolab.diagnostics import l1_ergodic_deviation
from ergolab.dynamics import (
    GeneratingSequence,
    MapError,
    MapPiece,
    PiecewiseMap,
    compose,
    compose_onto,
    conjugate,
    exchange_two,
    invert,
    iterate,
    map_conjugator,
    map_resolution,
    odometer,
    restrict_pieces,
    shift_pieces,
    weak_metric,
)
from ergolab.entropy import (
    EntropyValue,
    mixed_cell_mass,
    mixing_mass_threshold,
    set_conditional_entropy,
    zero_entropy_certificate,
)
from ergolab.families import SetFamily
from ergolab.measure import (
    ONE,
    ZERO,
    DomainError,
    InducedCells,
    IntervalSet,
    JoinBudgetError,
    Partition,
    as_rational,
    format_rational,
    induced_partition,
    join_partitions,
    join_sets,
)
from ergolab.towers import Tower, rokhlin_tower

__all__ = [
    "ConstructionError",
    "ConstructionPlan",
    "CertificateTrace",
    "TraceCheck",
    "make_plan",
    "assemble_plan",
    "plan_with_feasible_window",
    "feasible_window_r",
    "select_bad_set",
    "build_psi",
    "build_s_map",
    "build_tau",
    "verify_tower_conjugacy",
    "verify_metric_proximity",
    "averaging_failure_certificate",
    "openness_margin",
    "swap_perturbation",
    "dyadic_generator_weight",
]

DEFAULT_CELL_BUDGET = 2**16
DEFAULT_CHAIN_BUDGET = 2**20


class ConstructionError(RuntimeError):
    """An assembled map or certificate violates an exact audit."""


def _ceil(q: Fraction) -> int:
    return -((-q.numerator) // q.denominator)


def _floor(q: Fraction) -> int:
    return q.numerator // q.denominator


@dataclass(frozen=True)
class ConstructionPlan:
    """Frozen inputs and derived structure for one failure construction.

    The tower has height 2n over the conjugated odometer t_phi.  `pi0` cuts
    the base into cells A0..AK ordered by infimum; `betas` holds their
    cumulative measures, so cell k owns the packed span [betas[k],
    betas[k+1]) inside each straightened level.  `pi1` lists the transported
    cells T_phi^i(A_k) in i-major order and `pi1_ext` appends the tower
    residual when it is nonempty.  `alphas[i] = i * mu(base)` are the level
    offsets of the straightened tower.
    """

    phi: PiecewiseMap
    t_phi: PiecewiseMap
    epsilon: Fraction
    m: int
    n: int
    resolution: int
    tower: Tower
    gamma0: Partition
    gamma1: Partition
    pi0: InducedCells
    pi1: InducedCells
    pi1_ext: Partition
    alphas: tuple[Fraction, ...]
    betas: tuple[Fraction, ...]
    delta0: Fraction
    delta1: Fraction
    delta: Fraction

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise DomainError("plan needs m >= 1 and n >= 1")
        if Fraction(16, self.n) >= self.epsilon:
            raise DomainError(
                f"averaging horizon n = {self.n} is too short for epsilon = "
                f"{format_rational(self.epsilon)}"
            )
        if Fraction(2, 2**self.m) >= self.epsilon / 2:
            raise DomainError(f"metric depth m = {self.m} is too shallow")
        if self.tower.height != 2 * self.n:
            raise DomainError("tower height must be twice the averaging horizon")
        mu0 = self.tower.base.measure
        if len(self.betas) != len(self.pi0) + 1 or self.betas[-1] != mu0:
            raise DomainError("base offsets must accumulate to the base measure")
        for prev, nxt in zip(self.betas, self.betas[1:]):
            if nxt <= prev:
                raise DomainError("base offsets must increase strictly")
        expected = tuple(i * mu0 for i in range(2 * self.n + 1))
        if self.alphas != expected:
            raise DomainError("level offsets must step by the base measure")
        if len(self.pi1) != 2 * self.n * len(self.pi0):
            raise DomainError("level cell count must be height times base cells")
        if not (ZERO < self.delta1 < Fraction(1, 2)) or self.delta0 <= ZERO:
            raise DomainError("thresholds must satisfy 0 < delta1 < 1/2 and delta0 > 0")
        if self.delta != self.delta1**3 / 64:
            raise DomainError("failure threshold must equal delta1^3 / 64")

    @property
    def base_measure(self) -> Fraction:
        return self.betas[-1]

    def cell(self, i: int, k: int) -> IntervalSet:
        """The transported cell T_phi^i(A_k)."""
        width = len(self.pi0)
        if not (0 <= i < 2 * self.n and 0 <= k < width):
            raise DomainError(f"no cell at level {i}, base index {k}")
        return self.pi1.cells[i * width + k]


_GEN = GeneratingSequence()


def assemble_plan(
    phi: PiecewiseMap,
    epsilon,
    m: int,
    n: int,
    resolution: int,
    delta0,
    delta1=None,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> ConstructionPlan:
    """Build the tower, partitions, and offsets for given m, n, thresholds.

    `make_plan` chooses m, n, and delta0 and then delegates here; calling
    this directly permits a deliberately lossy tower (2n not dividing the
    period) or a hand-picked delta1, both of which exercise the residual
    branches of the construction.  delta1 defaults to the certified mass
    threshold for delta0.
    """
    epsilon = as_rational(epsilon)
    delta0 = as_rational(delta0)
    if not phi.invertible:
        raise MapError("the conjugator must be invertible")
    if resolution < 1:
        raise DomainError("resolution must be >= 1")
    if 2 * n > 2**resolution:
        raise DomainError(
            f"tower height {2 * n} needs resolution at least "
            f"{(2 * n - 1).bit_length()}, got {resolution}"
        )
    delta1 = mixing_mass_threshold(delta0) if delta1 is None else as_rational(delta1)

    t_phi = conjugate(odometer(resolution), phi)
    tower = rokhlin_tower(t_phi, 2 * n)

    members = [_GEN.member(i) for i in range(1, m + 1)]
    gamma0 = join_sets(
        members + [phi.preimage(e) for e in members], max_cells=max_cells
    )
    gamma1 = gamma0
    pulled = list(gamma0.cells)
    for _ in range(1, 2 * n):
        pulled = [t_phi.preimage(c) for c in pulled]
        gamma1 = join_partitions(gamma1, Partition(tuple(pulled)), max_cells=max_cells)

    pi0 = induced_partition(gamma1, tower.base)
    betas = [ZERO]
    for w in pi0.weights:
        betas.append(betas[-1] + w)

    rows = [list(pi0.cells)]
    for _ in range(1, 2 * n):
        rows.append([t_phi.image(c) for c in rows[-1]])
    level_cells = tuple(c for row in rows for c in row)
    labels = tuple(
        f"L{i}.A{k}" for i in range(2 * n) for k in range(len(pi0))
    )
    pi1 = InducedCells(level_cells, labels)
    if tower.residual:
        pi1_ext = Partition(level_cells + (tower.residual,), labels + ("rest",))
    else:
        pi1_ext = Partition(level_cells, labels)

    mu0 = tower.base.measure
    return ConstructionPlan(
        phi=phi,
        t_phi=t_phi,
        epsilon=epsilon,
        m=m,
        n=n,
        resolution=resolution,
        tower=tower,
        gamma0=gamma0,
        gamma1=gamma1,
        pi0=pi0,
        pi1=pi1,
        pi1_ext=pi1_ext,
        alphas=tuple(i * mu0 for i in range(2 * n + 1)),
        betas=tuple(betas),
        delta0=delta0,
        delta1=delta1,
        delta=delta1**3 / 64,
    )


def make_plan(
    phi: PiecewiseMap,
    family: SetFamily,
    epsilon,
    start: int,
    resolution: int,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> ConstructionPlan:
    """Choose the smallest admissible horizon and metric depth, then assemble.

    The horizon is the least power of two n >= max(start, ceil(16/eps) + 1),
    so the tower height 2n divides the odometer period whenever it fits; m is
    the least depth with 2^(1-m) < eps/2.  The entropy floor delta0 is the
    largest threshold on the halving grid 1, 1/2, 1/4, ... at which the
    family refuses a zero-entropy certificate over coarse grids up to the
    odometer resolution.
    """
    epsilon = as_rational(epsilon)
    if epsilon <= ZERO:
        raise DomainError("epsilon must be positive")
    if start < 1:
        raise DomainError("the minimum horizon must be >= 1")

    lower = max(start, _ceil(Fraction(16) / epsilon) + 1)
    n = 1 << (lower - 1).bit_length()
    m = 1
    while Fraction(2, 2**m) >= epsilon / 2:
        m += 1

    delta0 = None
    probe = ONE
    for _ in range(13):
        if zero_entropy_certificate(family, probe, resolution) is None:
            delta0 = probe
            break
        probe /= 2
    if delta0 is None:
        raise DomainError(
            "family admits zero-entropy certificates at every probed threshold "
            "down to 1/4096; no bad set exists at this resolution"
        )
    return assemble_plan(
        phi, epsilon, m, n, resolution, delta0, max_cells=max_cells
    )


def feasible_window_r(n: int, delta1) -> int | None:
    """Smallest integer r with delta1/8 < r/n < delta1/4, if one exists."""
    delta1 = as_rational(delta1)
    r = _floor(n * delta1 / 8) + 1
    return r if r < n * delta1 / 4 else None


def plan_with_feasible_window(
    phi: PiecewiseMap,
    family: SetFamily,
    epsilon,
    start: int,
    resolution: int,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> ConstructionPlan:
    """Regenerate plans with growing horizons until the shift window opens.

    The averaging argument needs an integer r strictly inside
    (n delta1 / 8, n delta1 / 4), which fails for small n because delta1 is
    tiny; each retry restarts the search just above the previous horizon.
    Raises once the doubled horizon no longer fits the resolution.
    """
    while True:
        plan = make_plan(
            phi, family, epsilon, start, resolution, max_cells=max_cells
        )
        if feasible_window_r(plan.n, plan.delta1) is not None:
            return plan
        start = plan.n + 1


def select_bad_set(plan: ConstructionPlan, family: SetFamily) -> IntervalSet:
    """First family member that stays unpredictable given the tower cells.

    Scans in index order for certified conditional entropy above delta0 and
    double-checks the mass consequence: the mixed-cell mass at delta1 must
    itself exceed delta1.
    """
    for idx in range(family.horizon):
        c = family.member(idx)
        h = set_conditional_entropy(c, plan.pi1_ext)
        if h.certified_gt(plan.delta0):
            mass = mixed_cell_mass(plan.pi1_ext, c, plan.delta1)
            if mass <= plan.delta1:
                raise ConstructionError(
                    f"member {idx} has conditional entropy above "
                    f"{format_rational(plan.delta0)} but mixed-cell mass "
                    f"{format_rational(mass)}; the mass bound is broken"
                )
            return c
    raise DomainError(
        f"no member of the {family.horizon}-set family has certified "
        f"conditional entropy above {format_rational(plan.delta0)} given the "
        "tower partition; the family behaves zero-entropy at this resolution"
    )


def _packed(source: IntervalSet, cursor: Fraction) -> tuple[list[MapPiece], Fraction]:
    # order-preserving translation of `source` onto [cursor, cursor + measure)
    out = []
    for lo, hi in source.pieces:
        out.append(MapPiece(lo, hi, 1, cursor - lo))
        cursor += hi - lo
    return out, cursor


def build_psi(
    plan: ConstructionPlan,
    c: IntervalSet,
    *,
    max_pieces: int = DEFAULT_CELL_BUDGET,
) -> PiecewiseMap:
    """The packing map: straighten the tower, bad-set fragments first.

    Each transported cell T_phi^i(A_k) lands on [alpha_i + beta_k, alpha_i +
    beta_{k+1}) with its intersection with `c` packed order-preservingly onto
    the left end and the rest following; the tower residual lands on
    [alpha_{2n}, 1) unchanged in order.  The result is an invertible
    piecewise translation.
    """
    pieces: list[MapPiece] = []
    width = len(plan.pi0)
    for i in range(2 * plan.n):
        for k in range(width):
            cell = plan.cell(i, k)
            cursor = plan.alphas[i] + plan.betas[k]
            inside, cursor = _packed(cell & c, cursor)
            outside, cursor = _packed(cell - c, cursor)
            pieces.extend(inside)
            pieces.extend(outside)
            if len(pieces) > max_pieces:
                raise JoinBudgetError(
                    f"packing map exceeds the {max_pieces}-piece budget at "
                    f"level {i}"
                )
    tail, _ = _packed(plan.tower.residual, plan.alphas[2 * plan.n])
    pieces.extend(tail)
    psi = PiecewiseMap(tuple(sorted(pieces, key=lambda p: p.lo)))
    if not psi.invertible:
        raise ConstructionError("packing map failed its invertibility audit")
    return psi


def build_s_map(plan: ConstructionPlan, psi: PiecewiseMap) -> PiecewiseMap:
    """The column shift on the straightened tower.

    Below the top level the shift is the plain translation x + mu(base).  On
    the packed image of the top level and residual it follows T_phi through
    psi: points whose T_phi-step lands in the residual move by psi T_phi
    psi^-1, and points whose step returns to the base wrap to the bottom via
    psi T_phi^(2n) psi^-1 shifted down by alpha_{2n-1}, which is exactly the
    value forced by composing the first case backwards 2n - 1 times.
    """
    two_n = 2 * plan.n
    mu0 = plan.base_measure
    top_cut = plan.alphas[two_n - 1]
    pieces: list[MapPiece] = [MapPiece(ZERO, top_cut, 1, mu0)]

    psi_inv = invert(psi)
    dom_residual = plan.t_phi.preimage(plan.tower.residual)
    dom_base = plan.t_phi.preimage(plan.tower.base)
    im_residual = psi.image(dom_residual) if dom_residual else IntervalSet.empty()
    im_base = psi.image(dom_base)
    if (im_residual | im_base) != IntervalSet.interval(top_cut, ONE):
        raise ConstructionError(
            "the top of the straightened tower does not split between the "
            "residual and wrap cases"
        )
    if im_residual:
        through = compose(compose(psi, plan.t_phi), psi_inv)
        pieces.extend(restrict_pieces(through, im_residual))
    wrap = compose(compose(psi, iterate(plan.t_phi, two_n)), psi_inv)
    pieces.extend(shift_pieces(restrict_pieces(wrap, im_base), -top_cut))

    try:
        s = PiecewiseMap(tuple(sorted(pieces, key=lambda p: p.lo)))
    except MapError as exc:
        raise ConstructionError(f"column shift assembly failed: {exc}") from exc
    if not s.invertible:
        raise ConstructionError("column shift failed its invertibility audit")
    return s


def build_tau(
    plan: ConstructionPlan, psi: PiecewiseMap, s_map: PiecewiseMap
) -> PiecewiseMap:
    """The level-matching isomorphism conjugating the shift back to T_phi.

    On the top level and the residual tau equals psi.  Level 2n-1-i carries
    tau = S^-i psi T_phi^i, and because S^-1 is the translation by -mu(base)
    everywhere above the first level offset, each level's branch collapses
    to psi composed with the walk to the top, shifted down by i steps.  The
    claimed S^-i form is audited against s_map on the first level below the
    top before the assembled map is returned.
    """
    two_n = 2 * plan.n
    mu0 = plan.base_measure
    pieces = list(restrict_pieces(psi, plan.tower.top | plan.tower.residual))

    walk = plan.t_phi
    audit: tuple[tuple[MapPiece, ...], tuple[MapPiece, ...]] | None = None
    for i in range(1, two_n):
        level = plan.tower.levels[two_n - 1 - i]
        lifted = compose_onto(psi, restrict_pieces(walk, level))
        branch = shift_pieces(lifted, -i * mu0)
        pieces.extend(branch)
        if i == 1:
            definitional = compose_onto(
                invert(s_map), compose_onto(psi, restrict_pieces(walk, level))
            )
            audit = (tuple(branch), definitional)
        if i < two_n - 1:
            walk = compose(plan.t_phi, walk)

    if audit is not None:
        witness = _piece_disagreement(audit[0], audit[1])
        if witness:
            raise ConstructionError(
                f"level translation disagrees with the shift inverse: {witness}"
            )
    try:
        tau = PiecewiseMap(tuple(sorted(pieces, key=lambda p: p.lo)))
    except MapError as exc:
        raise ConstructionError(
            f"level images overlap; the matching map is ill-defined: {exc}"
        ) from exc
    if not tau.invertible:
        raise ConstructionError("level matching failed its invertibility audit")
    return tau


def _piece_disagreement(
    a: Sequence[MapPiece], b: Sequence[MapPiece]
) -> str | None:
    """First elementary gap where two partial piece runs differ, or None."""
    a = sorted(a, key=lambda p: p.lo)
    b = sorted(b, key=lambda p: p.lo)
    bounds = sorted(
        {q for p in a for q in (p.lo, p.hi)} | {q for p in b for q in (p.lo, p.hi)}
    )

    def locate(run: list[MapPiece], x: Fraction) -> MapPiece | None:
        for p in run:
            if p.lo <= x < p.hi:
                return p
        return None

    for lo, hi in zip(bounds, bounds[1:]):
        pa, pb = locate(a, lo), locate(b, lo)
        if (pa is None) != (pb is None):
            side = "first" if pa is not None else "second"
            return f"only the {side} map covers [{format_rational(lo)}, {format_rational(hi)})"
        if pa is None:
            continue
        if pa.slope != pb.slope or pa.offset != pb.offset:
            return (
                f"on [{format_rational(lo)}, {format_rational(hi)}): "
                f"x -> {pa.slope} x + {format_rational(pa.offset)} vs "
                f"x -> {pb.slope} x + {format_rational(pb.offset)}"
            )
    return None


@dataclass(frozen=True)
class TraceCheck:
    name: str
    passed: bool
    detail: str = ""


def verify_tower_conjugacy(
    plan: ConstructionPlan, s_map: PiecewiseMap, tau: PiecewiseMap
) -> TraceCheck:
    """Exact test that tau^-1 S tau reproduces T_phi, with a witness gap."""
    back = conjugate(s_map, tau)
    if back == plan.t_phi:
        return TraceCheck("tower-conjugacy", True)
    witness = _piece_disagreement(back.pieces, plan.t_phi.pieces)
    return TraceCheck("tower-conjugacy", False, witness or "piece lists differ")


def _level_union(plan: ConstructionPlan, target: IntervalSet) -> IntervalSet:
    """Union of transported cells contained in the target set."""
    acc = IntervalSet.empty()
    for cell in plan.pi1.cells:
        if cell.is_subset_of(target):
            acc = acc | cell
    return acc


def verify_metric_proximity(
    plan: ConstructionPlan, psi: PiecewiseMap, tau: PiecewiseMap
) -> tuple[Fraction, Fraction, bool]:
    """Weak distance from phi to phi tau^-1 psi, with its truncation tail.

    Returns (partial, tail, ok) where ok means partial + tail < epsilon.
    Before measuring, the structural facts behind the bound are audited
    exactly: each generator is approximated by a union of transported cells
    to within half the residual budget, and tau^-1 psi and psi^-1 tau fix
    those unions setwise.  A violation raises, since the distance bound
    would then be meaningless.
    """
    theta = compose(invert(tau), psi)
    theta_inv = invert(theta)
    half_bound = Fraction(1, 2 * plan.n)
    for j in range(1, plan.m + 1):
        e = _GEN.member(j)
        f = _level_union(plan, e)
        if (f ^ e).measure >= half_bound:
            raise ConstructionError(
                f"generator {j} is not approximated by level cells within "
                f"{format_rational(half_bound)}"
            )
        if theta.image(f) != f:
            raise ConstructionError(
                f"the matching composition moves the level approximation of "
                f"generator {j}"
            )
        e_back = plan.phi.preimage(e)
        f_back = _level_union(plan, e_back)
        if (f_back ^ e_back).measure >= half_bound:
            raise ConstructionError(
                f"pulled-back generator {j} is not approximated by level "
                "cells within the residual budget"
            )
        if theta_inv.image(f_back) != f_back:
            raise ConstructionError(
                f"the inverse composition moves the level approximation of "
                f"pulled-back generator {j}"
            )
    perturbed = compose(plan.phi, theta)
    partial, tail = weak_metric(plan.phi, perturbed, _GEN, m=plan.m)
    return partial, tail, partial + tail < plan.epsilon


@dataclass(frozen=True)
class CertificateTrace:
    """Exact audit trail of one averaging-failure certificate.

    `delta1_set` and `delta2_set` are the left and right delta1-fraction
    columns of the packed base cells; the per-step tuples record, for each
    i below the horizon, the measures mu(column cap S_psi^-i X) for X the
    bad set `c`, the mixed-cell union `delta_set`, and their intersection.
    `column_integrals` holds the exact integrals of |average - mu(c)| over
    the two columns, `window_integrals` the same integral over the first r
    forward images of the chosen column, and `bad_average` the integral
    over the whole space.  Every displayed inequality of the argument is
    replayed in `checks`; `accepted` requires all of them to pass.
    """

    c: IntervalSet
    psi: PiecewiseMap
    s_map: PiecewiseMap
    tau: PiecewiseMap
    delta_set: IntervalSet
    delta1_set: IntervalSet
    delta2_set: IntervalSet
    b_set: IntervalSet
    r: int
    branch: str
    horizon: int
    bad_average: Fraction
    metric_distance: tuple[Fraction, Fraction]
    delta1: Fraction
    threshold: Fraction
    bad_set_entropy: EntropyValue
    left_c_hits: tuple[Fraction, ...]
    right_c_hits: tuple[Fraction, ...]
    left_mixed_c_hits: tuple[Fraction, ...]
    right_mixed_c_hits: tuple[Fraction, ...]
    left_mixed_hits: tuple[Fraction, ...]
    base_mixed_hits: tuple[Fraction, ...]
    column_integrals: tuple[Fraction, Fraction]
    window_integrals: tuple[Fraction, ...]
    checks: tuple[TraceCheck, ...]

    @property
    def accepted(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> tuple[TraceCheck, ...]:
        return tuple(check for check in self.checks if not check.passed)

    def report_lines(self) -> list[str]:
        partial, tail = self.metric_distance
        lines = [
            f"bad set: {self.c.to_text()}",
            f"bad set entropy given tower cells: "
            f"{format_rational(self.bad_set_entropy.lo)}"
            f"..{format_rational(self.bad_set_entropy.hi)}",
            f"delta1 = {format_rational(self.delta1)}",
            f"threshold = {format_rational(self.threshold)}",
            f"horizon = {self.horizon}, window r = {self.r}, branch = {self.branch}",
            f"column integrals: left {format_rational(self.column_integrals[0])}, "
            f"right {format_rational(self.column_integrals[1])}",
            f"bad average = {format_rational(self.bad_average)}",
            f"metric distance <= {format_rational(partial)} + {format_rational(tail)}",
            f"accepted = {self.accepted}",
        ]
        for check in self.checks:
            status = "pass" if check.passed else "FAIL"
            text = f"{status} {check.name}"
            if check.detail:
                text += f": {check.detail}"
            lines.append(text)
        return lines


def _measure_on(small: IntervalSet, big: IntervalSet) -> Fraction:
    total = ZERO
    for lo, hi in small.pieces:
        total += big.overlap_measure(lo, hi)
    return total


def _integral_over(
    gaps: Sequence[tuple[Fraction, Fraction, Fraction]], e: IntervalSet
) -> Fraction:
    # gaps are sorted constancy intervals (lo, hi, |value|) of the average
    total = ZERO
    pieces = e.pieces
    idx = 0
    for lo, hi, weight in gaps:
        if weight == ZERO:
            continue
        while idx < len(pieces) and pieces[idx][1] <= lo:
            idx += 1
        j = idx
        while j < len(pieces) and pieces[j][0] < hi:
            cut_lo = max(lo, pieces[j][0])
            cut_hi = min(hi, pieces[j][1])
            if cut_lo < cut_hi:
                total += weight * (cut_hi - cut_lo)
            j += 1
    return total


def averaging_failure_certificate(
    plan: ConstructionPlan,
    c: IntervalSet,
    psi: PiecewiseMap,
    s_map: PiecewiseMap,
    tau: PiecewiseMap,
    *,
    max_cells: int = DEFAULT_CHAIN_BUDGET,
) -> CertificateTrace:
    """Replay the whole averaging-failure argument in exact arithmetic.

    Builds S_psi = psi^-1 S psi, the mixed-cell union, the two packed
    columns, and the pullback chains S_psi^-i of the bad set; verifies every
    intermediate inequality of the argument as a named check; and computes
    the exact integral of |average - mu(c)| from the piecewise-constant
    occupancy of the chains.  Raises only for an empty shift window or a
    blown piece budget; a broken inequality instead lands in `checks` so the
    trace reports what failed.
    """
    two_n = 2 * plan.n
    d1 = plan.delta1
    r = feasible_window_r(plan.n, d1)
    if r is None:
        raise DomainError(
            f"no integer in the shift window ("
            f"{format_rational(plan.n * d1 / 8)}, "
            f"{format_rational(plan.n * d1 / 4)}); regenerate the plan with "
            "a larger horizon"
        )
    checks: list[TraceCheck] = []

    s_psi = conjugate(s_map, psi)
    relabeled = conjugate(plan.t_phi, compose(invert(tau), psi))
    if s_psi == relabeled:
        checks.append(TraceCheck("conjugacy-identity", True))
    else:
        witness = _piece_disagreement(s_psi.pieces, relabeled.pieces)
        checks.append(
            TraceCheck("conjugacy-identity", False, witness or "piece lists differ")
        )

    # mixed cells of the extended level partition
    delta_pieces: list[tuple[Fraction, Fraction]] = []
    mixed_mass = ZERO
    for cell in plan.pi1_ext.cells:
        w = cell.measure
        inside = _measure_on(cell, c)
        if d1 * w <= inside <= (ONE - d1) * w:
            delta_pieces.extend(cell.pieces)
            mixed_mass += w
    delta_set = IntervalSet.from_pieces(delta_pieces)
    checks.append(
        TraceCheck(
            "mixed-mass",
            mixed_mass > d1,
            f"mixed cells carry {format_rational(mixed_mass)} vs delta1 "
            f"{format_rational(d1)}",
        )
    )

    mu0 = plan.base_measure
    left_parts: list[tuple[Fraction, Fraction]] = []
    right_parts: list[tuple[Fraction, Fraction]] = []
    for k, w in enumerate(plan.pi0.weights):
        lo, hi = plan.betas[k], plan.betas[k + 1]
        left_parts.extend(psi.preimage(IntervalSet.interval(lo, lo + d1 * w)).pieces)
        right_parts.extend(psi.preimage(IntervalSet.interval(hi - d1 * w, hi)).pieces)
    delta1_set = IntervalSet.from_pieces(left_parts)
    delta2_set = IntervalSet.from_pieces(right_parts)
    checks.append(
        TraceCheck(
            "column-measures",
            delta1_set.measure == d1 * mu0 and delta2_set.measure == d1 * mu0,
            f"columns carry {format_rational(delta1_set.measure)} and "
            f"{format_rational(delta2_set.measure)}, expected "
            f"{format_rational(d1 * mu0)}",
        )
    )

    # packed bad-set fragments start at the left edge of every cell target
    packing_witness = ""
    for i in range(two_n):
        if packing_witness:
            break
        for k in range(len(plan.pi0)):
            cell = plan.cell(i, k)
            start = plan.alphas[i] + plan.betas[k]
            fragment = cell & c
            image = psi.image(fragment) if fragment else IntervalSet.empty()
            expected = IntervalSet.interval(start, start + fragment.measure)
            if image != expected:
                packing_witness = f"cell at level {i}, base index {k}"
                break
    checks.append(TraceCheck("initial-segments", not packing_witness, packing_witness))

    base = plan.tower.base
    base_cells = plan.pi0.cells
    left_caps = [a & delta1_set for a in base_cells]
    right_caps = [a & delta2_set for a in base_cells]

    left_c_hits: list[Fraction] = []
    right_c_hits: list[Fraction] = []
    left_mixed_c_hits: list[Fraction] = []
    right_mixed_c_hits: list[Fraction] = []
    left_mixed_hits: list[Fraction] = []
    base_mixed_hits: list[Fraction] = []
    events: dict[Fraction, int] = {ZERO: 0, ONE: 0}
    b_parts: list[tuple[Fraction, Fraction]] = []
    top_mixed_sum = ZERO
    packing_order_witness = ""

    pulled_c = c
    pulled_delta = delta_set
    pulled_top = plan.tower.top
    spent = 0
    for i in range(two_n):
        spent += len(pulled_c.pieces) + len(pulled_delta.pieces) + len(pulled_top.pieces)
        if spent > max_cells:
            raise JoinBudgetError(
                f"certificate chains exceed the {max_cells}-piece budget at "
                f"step {i}"
            )
        for lo, hi in pulled_c.pieces:
            events[lo] = events.get(lo, 0) + 1
            events[hi] = events.get(hi, 0) - 1
        both = pulled_c & pulled_delta
        left_c_hits.append(_measure_on(delta1_set, pulled_c))
        right_c_hits.append(_measure_on(delta2_set, pulled_c))
        left_mixed_c_hits.append(_measure_on(delta1_set, both))
        right_mixed_c_hits.append(_measure_on(delta2_set, both))
        left_mixed_hits.append(_measure_on(delta1_set, pulled_delta))
        base_mixed_hits.append(_measure_on(base, pulled_delta))
        b_parts.extend(pulled_top.pieces)
        top_mixed_sum += _measure_on(pulled_top, delta_set)
        if not packing_order_witness:
            for k in range(len(base_cells)):
                if _measure_on(left_caps[k], pulled_c) < _measure_on(
                    right_caps[k], pulled_c
                ):
                    packing_order_witness = f"step {i}, base index {k}"
                    break
        if i + 1 < two_n:
            pulled_c = s_psi.preimage(pulled_c)
            pulled_delta = s_psi.preimage(pulled_delta)
            pulled_top = s_psi.preimage(pulled_top)

    b_set = IntervalSet.from_pieces(b_parts)
    checks.append(
        TraceCheck(
            "left-packing",
            not packing_order_witness,
            packing_order_witness,
        )
    )
    checks.append(
        TraceCheck(
            "tower-cover",
            b_set == plan.tower.covered
            and ONE - b_set.measure <= Fraction(1, two_n),
            f"pulled top levels cover {format_rational(b_set.measure)}",
        )
    )
    reindexed = sum(base_mixed_hits, ZERO)
    checks.append(
        TraceCheck(
            "orbit-reindex",
            top_mixed_sum == reindexed,
            f"top-level mixed mass {format_rational(top_mixed_sum)} vs base "
            f"orbit sum {format_rational(reindexed)}",
        )
    )
    checks.append(
        TraceCheck(
            "mixed-coverage",
            d1 < top_mixed_sum + Fraction(1, two_n),
            f"delta1 {format_rational(d1)} vs covered mixed mass "
            f"{format_rational(top_mixed_sum)} + 1/{two_n}",
        )
    )

    forced_witness = ""
    for i in range(two_n):
        if right_mixed_c_hits[i] != ZERO:
            forced_witness = f"right column meets the bad set inside mixed cells at step {i}"
            break
        if left_mixed_c_hits[i] != left_mixed_hits[i]:
            forced_witness = f"left column misses the bad set inside mixed cells at step {i}"
            break
    checks.append(TraceCheck("forced-occupancy", not forced_witness, forced_witness))

    separation_witness = ""
    for i in range(two_n):
        if left_c_hits[i] - right_c_hits[i] < left_mixed_hits[i]:
            separation_witness = f"step {i}"
            break
    checks.append(TraceCheck("net-separation", not separation_witness, separation_witness))

    hits = sum(left_mixed_hits, ZERO)
    floor = d1 * (d1 - Fraction(1, two_n))
    checks.append(
        TraceCheck(
            "hit-floor",
            hits >= d1 * reindexed and hits > floor,
            f"summed column hits {format_rational(hits)} vs floor "
            f"{format_rational(floor)}",
        )
    )

    mu_c = c.measure
    bounds = sorted(events)
    gaps: list[tuple[Fraction, Fraction, Fraction]] = []
    cover = 0
    bad_average = ZERO
    for lo, hi in zip(bounds, bounds[1:]):
        cover += events[lo]
        weight = abs(Fraction(cover, two_n) - mu_c)
        gaps.append((lo, hi, weight))
        bad_average += weight * (hi - lo)

    left_integral = _integral_over(gaps, delta1_set)
    right_integral = _integral_over(gaps, delta2_set)
    branch = "left" if left_integral >= right_integral else "right"
    branch_bound = d1 * (d1 - Fraction(1, two_n)) / (4 * plan.n)
    checks.append(
        TraceCheck(
            "branch-dichotomy",
            max(left_integral, right_integral) > branch_bound,
            f"column integrals {format_rational(left_integral)} / "
            f"{format_rational(right_integral)} vs bound "
            f"{format_rational(branch_bound)}",
        )
    )

    moving = delta1_set if branch == "left" else delta2_set
    window: list[Fraction] = []
    window_floor_witness = ""
    union_mass = ZERO
    union_acc = IntervalSet.empty()
    for j in range(r):
        value = _integral_over(gaps, moving)
        window.append(value)
        per_shift = (d1 / (4 * plan.n)) * (d1 - Fraction(2 * j + 1, plan.n))
        if not window_floor_witness and value <= per_shift:
            window_floor_witness = f"shift {j}"
        union_mass += moving.measure
        union_acc = union_acc | moving
        if j + 1 < r:
            moving = s_psi.image(moving)
    checks.append(
        TraceCheck("window-floors", not window_floor_witness, window_floor_witness)
    )
    checks.append(
        TraceCheck(
            "window-disjoint",
            union_acc.measure == union_mass,
            f"shifted columns cover {format_rational(union_acc.measure)} of "
            f"{format_rational(union_mass)}",
        )
    )
    window_sum = sum(window, ZERO)
    window_bound = r * d1 * d1 / (8 * plan.n)
    checks.append(
        TraceCheck(
            "window-sum",
            window_sum > window_bound and bad_average >= window_sum,
            f"window total {format_rational(window_sum)} vs bound "
            f"{format_rational(window_bound)}",
        )
    )
    checks.append(
        TraceCheck(
            "deviation-threshold",
            bad_average > plan.delta,
            f"bad average {format_rational(bad_average)} vs threshold "
            f"{format_rational(plan.delta)}",
        )
    )

    partial, tail, metric_ok = verify_metric_proximity(plan, psi, tau)
    checks.append(
        TraceCheck(
            "metric-proximity",
            metric_ok,
            f"{format_rational(partial)} + {format_rational(tail)} vs epsilon "
            f"{format_rational(plan.epsilon)}",
        )
    )

    return CertificateTrace(
        c=c,
        psi=psi,
        s_map=s_map,
        tau=tau,
        delta_set=delta_set,
        delta1_set=delta1_set,
        delta2_set=delta2_set,
        b_set=b_set,
        r=r,
        branch=branch,
        horizon=two_n,
        bad_average=bad_average,
        metric_distance=(partial, tail),
        delta1=d1,
        threshold=plan.delta,
        bad_set_entropy=set_conditional_entropy(c, plan.pi1_ext),
        left_c_hits=tuple(left_c_hits),
        right_c_hits=tuple(right_c_hits),
        left_mixed_c_hits=tuple(left_mixed_c_hits),
        right_mixed_c_hits=tuple(right_mixed_c_hits),
        left_mixed_hits=tuple(left_mixed_hits),
        base_mixed_hits=tuple(base_mixed_hits),
        column_integrals=(left_integral, right_integral),
        window_integrals=tuple(window),
        checks=tuple(checks),
    )


def dyadic_generator_weight(s: IntervalSet) -> int:
    """Metric mass needed to pin the set through the generating sequence.

    Decomposes the set into maximal dyadic intervals and sums 2^index over
    their positions in the level-by-level enumeration, so a weak distance
    below eps / weight forces every generator term of the decomposition to
    move by less than eps.  Demands dyadic endpoints.
    """
    weight = 0
    for lo, hi in s.pieces:
        for endpoint in (lo, hi):
            if endpoint.denominator & (endpoint.denominator - 1):
                raise DomainError(
                    f"endpoint {format_rational(endpoint)} is not dyadic"
                )
        cursor = lo
        while cursor < hi:
            align = max(cursor.denominator.bit_length() - 1, 1)
            while Fraction(1, 2**align) > hi - cursor:
                align += 1
            index = 2**align + int(cursor * 2**align) - 1
            weight += 2**index
            cursor += Fraction(1, 2**align)
    return weight


def openness_margin(
    t_phi: PiecewiseMap,
    c: IntervalSet,
    n: int,
    delta,
    *,
    max_cells: int = DEFAULT_CELL_BUDGET,
) -> Fraction:
    """Weak-metric radius preserving an averaging deviation above delta.

    With deviation excess d' - delta at horizon n, any conjugator within the
    returned radius moves each pulled-back copy of the bad set by less than
    (d' - delta) / 2, which keeps the deviation above delta.  The radius
    divides the excess by the largest generator weight among the bad set and
    its n pullbacks through the odometer after transport by the recorded
    conjugator, so it needs odometer provenance and dyadic sets.
    """
    delta = as_rational(delta)
    resolution = map_resolution(t_phi)
    if resolution is None:
        raise DomainError(
            "the margin needs odometer provenance to pull the bad set back"
        )
    deviation = l1_ergodic_deviation(t_phi, c, n, max_cells=max_cells)
    if deviation <= delta:
        raise DomainError(
            f"deviation {format_rational(deviation)} does not exceed "
            f"{format_rational(delta)}; nothing to preserve"
        )
    theta = map_conjugator(t_phi)
    moved = c if theta is None else theta.image(c)
    base = odometer(resolution)
    heaviest = dyadic_generator_weight(c)
    for _ in range(n):
        heaviest = max(heaviest, dyadic_generator_weight(moved))
        moved = base.preimage(moved)
    return (deviation - delta) / (2 * heaviest)


def swap_perturbation(
    phi: PiecewiseMap, level: int, index: int
) -> tuple[PiecewiseMap, Fraction]:
    """Post-compose phi with a swap of two adjacent level cells.

    Returns the perturbed conjugator and a certified weak-distance bound:
    the swap moves mass only inside a span of measure 2^(1-level), each
    forward and each inverse metric term changes by at most that much, and
    the term weights sum to 1, so the distance is at most 2^(2-level).
    """
    if level < 1:
        raise DomainError("swap level must be >= 1")
    if not (0 <= index <= 2**level - 2):
        raise DomainError(f"no adjacent cell pair at level {level}, index {index}")
    step = Fraction(1, 2**level)
    lo = index * step
    sigma = exchange_two(lo, lo + step, lo + 2 * step)
    return compose(sigma, phi), Fraction(4, 2**level)
