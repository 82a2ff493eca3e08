"""
exact_analyzer.py  ·  exact outcome distribution of the online allocator
------------------------------------------------------------------------
No sampling. Write c_i = ceil(T_i). The run consumes b_1 + c_1 + (b_2 − b_1)
+ (c_2 − c_1) + … copies, so the sold quantity X is a function of the supply
M and the coupled chain c_0 = 0 ≤ c_1 ≤ c_2 ≤ ….  A DP over (phase, c) gives
the exact law of X, and from it:

* the events X < b_i, X = b_i and X > b_i, and the end-state events
  below / parked / resumed;
* the per-case closed-form probabilities, tagged 1a … 2c;
* ALG = E[f(X)], competitive-ratio sweeps and the smoothness bound.

Probabilities are ``Fraction`` when every wait bound is small enough, else float.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Optional, Tuple, Union

import pandas as pd

from src.config import rational_max_d
from src.errors import DegenerateBelowFirstPeak
from src.instance import CriticalPointSequence, RevenueCurve, find_critical_points
from src.offline_oracle import opt_curve, opt_revenue

logger = logging.getLogger(__name__)

Prob = Union[Fraction, float]

CASE_TAGS = ("1a", "1b", "1c", "2a", "2b", "2c")
TERMINAL = "terminal"
BELOW_FIRST_PEAK = "below-first-peak"


def _use_rationals(cps: CriticalPointSequence) -> bool:
    return max(cps.wait_bounds) <= rational_max_d()


def _ratio(num: int, den: int, exact: bool) -> Prob:
    return Fraction(num, den) if exact else num / den


# --------------------------------------------------------------------------- #
#  The coupled wait-budget chain                                              #
# --------------------------------------------------------------------------- #
class WaitChainDistribution:
    """Law of c_i = ceil(T_i): uniform marginals on {1..D_i}, monotone coupling."""

    def __init__(self, cps: CriticalPointSequence, exact: Optional[bool] = None):
        self.cps = cps
        self.exact = _use_rationals(cps) if exact is None else exact
        self.one: Prob = Fraction(1) if self.exact else 1.0
        self.zero: Prob = Fraction(0) if self.exact else 0.0

    def marginal(self, i: int) -> Dict[int, Prob]:
        d = self.cps.D(i)
        if d == 0:
            return {0: self.one}
        p = _ratio(1, d, self.exact)
        return {k: p for k in range(1, d + 1)}

    def kernel(self, i: int, j: int) -> Dict[int, Prob]:
        """Pr[c_i = k | c_{i-1} = j] for j ≤ D_{i-1}."""
        d_prev, d_cur = self.cps.D(i - 1), self.cps.D(i)
        if d_cur == d_prev:
            return {j: self.one}
        row: Dict[int, Prob] = {}
        if d_prev > 0:
            row[j] = _ratio(d_prev, d_cur, self.exact)
        share = _ratio(1, d_cur, self.exact)
        for k in range(d_prev + 1, d_cur + 1):
            row[k] = row.get(k, self.zero) + share
        return row

    def joint(self, i: int) -> Dict[Tuple[int, int], Prob]:
        """Pr[c_{i-1} = j, c_i = k]."""
        out: Dict[Tuple[int, int], Prob] = {}
        for j, pj in self.marginal(i - 1).items():
            for k, pk in self.kernel(i, j).items():
                out[(j, k)] = pj * pk
        return out

    def prob(self, i: int, predicate: Callable[[int], bool]) -> Prob:
        return sum((p for k, p in self.marginal(i).items() if predicate(k)), self.zero)

    def conditional_mean(self, i: int, predicate: Callable[[int], bool]) -> Optional[Prob]:
        mass = self.prob(i, predicate)
        if mass == 0:
            return None
        total = sum((k * p for k, p in self.marginal(i).items() if predicate(k)), self.zero)
        return total / mass

    def events(self, i: int, m_prime: int) -> Tuple[Prob, Prob, Prob]:
        """(Pr[c_{i-1} > M'], Pr[c_{i-1} ≤ M' ≤ c_i], Pr[c_i < M'])."""
        below = self.prob(i - 1, lambda c: c > m_prime)
        at = sum((p for (j, k), p in self.joint(i).items() if j <= m_prime <= k), self.zero)
        above = self.prob(i, lambda c: c < m_prime)
        return below, at, above


# --------------------------------------------------------------------------- #
#  Outcome distribution (the DP)                                              #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class OutcomeDistribution:
    supply: int
    support: Dict[int, Prob]
    end_states: Dict[Tuple[int, str], Prob]
    expected_x: Prob
    expected_revenue: float
    bracket: int
    m_prime: Optional[int]
    exact: bool
    cps: CriticalPointSequence = field(compare=False, repr=False)

    def total_probability(self) -> Prob:
        return sum(self.support.values(), Fraction(0) if self.exact else 0.0)

    def prob(self, predicate: Callable[[int], bool]) -> Prob:
        return sum((p for x, p in self.support.items() if predicate(x)), Fraction(0) if self.exact else 0.0)

    def conditional_mean(self, predicate: Callable[[int], bool]) -> Optional[Prob]:
        mass = self.prob(predicate)
        if mass == 0:
            return None
        return sum((x * p for x, p in self.support.items() if predicate(x)), Fraction(0) if self.exact else 0.0) / mass

    def x_events(self, i: int) -> Tuple[Prob, Prob, Prob]:
        b = self.cps.b(i)
        return self.prob(lambda x: x < b), self.prob(lambda x: x == b), self.prob(lambda x: x > b)

    def phase_events(self, i: int) -> Tuple[Prob, Prob, Prob]:
        """(below, parked, resumed) relative to peak b_i, read off the DP end states."""
        zero: Prob = Fraction(0) if self.exact else 0.0
        below = parked = resumed = zero
        for (j, status), mass in self.end_states.items():
            if j < i or (j == i and status == "allocating"):
                below += mass
            elif j == i and status == "parked":
                parked += mass
            else:
                resumed += mass
        return below, parked, resumed


def _distribution(
    curve: RevenueCurve,
    cps: CriticalPointSequence,
    chain: WaitChainDistribution,
    m: int,
) -> OutcomeDistribution:
    exact = chain.exact
    zero, one = chain.zero, chain.one
    support: Dict[int, Prob] = defaultdict(lambda: zero)
    end_states: Dict[Tuple[int, str], Prob] = defaultdict(lambda: zero)

    if m <= 0:
        support[0] = one
        end_states[(1, "allocating")] = one
    else:
        live: Dict[int, Prob] = {0: one}  # c_{j-1} → mass still allocating toward b_j
        for j in range(1, cps.K + 1):
            if not live:
                break
            b = cps.b(j)
            reached: Dict[int, Prob] = {}
            for c, mass in live.items():
                if m < b + c:
                    support[m - c] += mass
                    end_states[(j, "allocating")] += mass
                elif cps.is_terminal(j):
                    support[b] += mass
                    end_states[(j, "halted")] += mass
                else:
                    reached[c] = mass
            if not reached:
                break

            d_prev, d_cur = cps.D(j - 1), cps.D(j)
            if d_cur == d_prev:
                after = dict(reached)
            else:
                keep = _ratio(d_prev, d_cur, exact)
                after = {c: mass * keep for c, mass in reached.items()} if d_prev > 0 else {}
                share = sum(reached.values(), zero) * _ratio(1, d_cur, exact)
                for k in range(d_prev + 1, d_cur + 1):
                    after[k] = after.get(k, zero) + share

            live = {}
            for c, mass in after.items():
                if m < b + c:
                    support[b] += mass
                    end_states[(j, "parked")] += mass
                elif m == b + c:
                    # the wait expires on the very last copy
                    support[b] += mass
                    end_states[(j, "released")] += mass
                else:
                    live[c] = mass

    expected_x = sum((x * p for x, p in support.items()), zero)
    expected_revenue = math.fsum(float(p) * curve.f(x) for x, p in support.items())
    i = cps.bracket(m)
    return OutcomeDistribution(
        supply=m,
        support=dict(sorted(support.items())),
        end_states=dict(end_states),
        expected_x=expected_x,
        expected_revenue=expected_revenue,
        bracket=i,
        m_prime=(m - cps.b(i)) if i >= 1 else None,
        exact=exact,
        cps=cps,
    )


def outcome_distribution(curve: RevenueCurve, m: int, exact: Optional[bool] = None) -> OutcomeDistribution:
    """Exact law of X_final at supply m; rationals unless a wait bound exceeds the settings cap."""
    cps = find_critical_points(curve)
    return _distribution(curve, cps, WaitChainDistribution(cps, exact), m)


def expected_revenue(curve: RevenueCurve, m: int) -> float:
    return outcome_distribution(curve, m).expected_revenue


# --------------------------------------------------------------------------- #
#  Case analysis                                                              #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class CaseAnalysis:
    case_tag: str
    phase: int
    supply: int
    m_prime: int
    d_prev: int
    d_cur: int
    threshold: int
    a_next: Optional[int]
    probabilities: Optional[Tuple[Prob, Prob, Prob]]
    mean_below_bound: Optional[Prob]
    mean_above: Optional[Prob]
    opt: float
    ratio_bound: float


def classify_tag(cps: CriticalPointSequence, m: int) -> str:
    """Case tag for supply m; first match in the order 1a, 1b, 1c, 2a, 2b, 2c."""
    if m <= cps.b(1):
        return BELOW_FIRST_PEAK
    i = cps.bracket(m)
    if i >= cps.K:
        return TERMINAL
    j_i, a_next = cps.J(i), cps.a(i + 1)
    if m <= a_next:
        if j_i < m:
            return "1a"
        return "1b" if j_i < a_next else "1c"
    if j_i < a_next:
        return "2a"
    return "2b" if m <= j_i else "2c"


def row_probabilities(tag: str, m_prime: int, d_prev: int, d_cur: int, exact: bool = True) -> Tuple[Prob, Prob, Prob]:
    """Closed forms for Pr[below], Pr[at b_i], Pr[past b_i] in one case row."""
    zero: Prob = Fraction(0) if exact else 0.0
    one: Prob = Fraction(1) if exact else 1.0
    if tag == "1a":
        past = _ratio(m_prime, d_cur, exact)
        return zero, one - past, past
    if tag == "1b":
        stuck = one - _ratio(m_prime, d_prev, exact)
        past = _ratio(m_prime, d_cur, exact)
        return stuck, one - stuck - past, past
    if tag in ("1c", "2b"):
        past = _ratio(m_prime, d_prev, exact)
        return one - past, zero, past
    if tag in ("2a", "2c"):
        return zero, zero, one
    raise ValueError(f"no closed form for case {tag!r}")


def case_classify(curve: RevenueCurve, m: int, exact: Optional[bool] = None) -> CaseAnalysis:
    """Case tag, row probabilities and conditional means for the phase bracketing m."""
    cps = find_critical_points(curve)
    if m <= cps.b(1):
        raise DegenerateBelowFirstPeak(f"M={m} ≤ b_1={cps.b(1)}: every copy is sold, X = M")
    exact = _use_rationals(cps) if exact is None else exact
    tag = classify_tag(cps, m)
    i = cps.bracket(m)
    m_prime = m - cps.b(i)
    d_prev, d_cur = cps.D(i - 1), cps.D(i)
    opt = opt_revenue(curve, m).revenue

    if tag == TERMINAL:
        return CaseAnalysis(
            case_tag=tag, phase=i, supply=m, m_prime=m_prime, d_prev=d_prev, d_cur=d_cur,
            threshold=cps.J(i), a_next=None, probabilities=None, mean_below_bound=None,
            mean_above=None, opt=opt, ratio_bound=0.5,
        )

    half: Prob = Fraction(1, 2) if exact else 0.5
    # E[X | X < b_i] ≥ M − (M'+1+D_{i-1})/2 and E[X | X > b_i] = M − E[c_i | c_i < M']
    mean_below = (m - (m_prime + 1 + d_prev) * half) if m_prime < d_prev else None
    mean_above = (m - min(m_prime, d_cur + 1) * half) if m_prime > 1 else None
    a_next = cps.a(i + 1)
    if tag == "1a":
        x = m_prime / d_cur
        y = d_cur / a_next
        ratio_bound = 1 + x * x * y / 2 - x * y
    else:
        ratio_bound = 0.5
    return CaseAnalysis(
        case_tag=tag, phase=i, supply=m, m_prime=m_prime, d_prev=d_prev, d_cur=d_cur,
        threshold=cps.J(i), a_next=a_next,
        probabilities=row_probabilities(tag, m_prime, d_prev, d_cur, exact),
        mean_below_bound=mean_below, mean_above=mean_above, opt=opt, ratio_bound=ratio_bound,
    )


def case_probabilities(analysis: CaseAnalysis) -> Tuple[Prob, Prob, Prob]:
    if analysis.probabilities is None:
        raise ValueError(f"case {analysis.case_tag!r} has no closed-form row")
    return analysis.probabilities


# --------------------------------------------------------------------------- #
#  Sweeps                                                                     #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SweepRow:
    M: int
    ALG: float
    OPT: float
    ratio: float
    case: str


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]

    @property
    def min_ratio(self) -> float:
        return min(r.ratio for r in self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.M, r.ALG, r.OPT, r.ratio, r.case) for r in self.rows],
            columns=["M", "ALG", "OPT", "ratio", "case"],
        )


def competitive_ratio_sweep(curve: RevenueCurve, m_max: int, exact: Optional[bool] = None) -> SweepResult:
    """Exact ALG, OPT and their ratio for M = 1..m_max."""
    cps = find_critical_points(curve)
    chain = WaitChainDistribution(cps, exact)
    opts = opt_curve(curve, m_max)
    rows = []
    for m in range(1, m_max + 1):
        alg = _distribution(curve, cps, chain, m).expected_revenue
        opt = opts[m - 1].revenue
        rows.append(SweepRow(m, alg, opt, alg / opt, classify_tag(cps, m)))
    result = SweepResult(tuple(rows))
    logger.info(f"Swept M=1..{m_max} over K={cps.K} peaks: min ratio {result.min_ratio:.6f}")
    return result


def mixed_ratio_sweep(curve: RevenueCurve, m_max: int, p_single: float = 1 / 3) -> SweepResult:
    """With prob ``p_single`` sell exactly one copy, otherwise run the allocator."""
    base = competitive_ratio_sweep(curve, m_max)
    single = curve.f(1)
    rows = []
    for row in base.rows:
        alg = p_single * single + (1 - p_single) * row.ALG
        rows.append(SweepRow(row.M, alg, row.OPT, alg / row.OPT, row.case))
    return SweepResult(tuple(rows))


def smoothness_bound(curve: RevenueCurve) -> float:
    """max_i max{D_{i-1}/b_i, D_i/a_{i+1}}, with only D_{K-1}/b_K for the last peak."""
    cps = find_critical_points(curve)
    bound = 0.0
    for i in range(1, cps.K + 1):
        bound = max(bound, cps.D(i - 1) / cps.b(i))
        if i < cps.K:
            bound = max(bound, cps.D(i) / cps.a(i + 1))
    return bound


def guarantee_slack(cps: CriticalPointSequence) -> float:
    """Discrete-ceiling slack on the 1/2 guarantee: 1 / (2 · min_i b_i)."""
    return 1 / (2 * cps.min_b)
