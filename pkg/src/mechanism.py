"""
mechanism.py  ·  truthful random-sampling auction on top of the allocator
-------------------------------------------------------------------------
1. Each bidder goes to group S or T on a fair coin.
2. Each group gets a fictitious allocator run of its own, so x(S,k) and
   x(T,k) are the copies that run would have sold after k arrivals.
3. Copy j of the live stream goes to T when j is even and T holds fewer than
   floor((1−6γ)·x(S, j/2)) copies. Odd copies go to S against x(T, (j+1)/2).
   Otherwise the copy is discarded.
4. Each group pays VCG prices for the copies it received.

A group's cap only ever reads the *other* group's bids, which is why no
bidder can move the number of copies their own group receives.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import EmptyInstance, InvalidConfig, TooFewBidders
from src.exact_analyzer import outcome_distribution
from src.instance import Bidder, BidProfile, at_least, build_revenue_curve, find_critical_points
from src.monte_carlo import mean_and_stderr, run_trials
from src.offline_oracle import opt_for_bids, opt_revenue
from src.online_allocator import AllocatorState, Mode, new_allocator, step
from src.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

PACING_MODES = ("cross", "own")
MISREPORT_MODES = ("lower", "raise", "drop")
UTILITY_TOL = 1e-9


# --------------------------------------------------------------------------- #
#  Partition                                                                  #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Partition:
    group_s: Tuple[str, ...]
    group_t: Tuple[str, ...]
    coin_record: Tuple[Tuple[str, int], ...]  # (bidder_id, coin); coin 1 → S

    @classmethod
    def from_coins(cls, coins: Sequence[Tuple[str, int]]) -> "Partition":
        record = tuple(sorted((str(b), int(c)) for b, c in coins))
        return cls(
            group_s=tuple(b for b, c in record if c == 1),
            group_t=tuple(b for b, c in record if c == 0),
            coin_record=record,
        )

    def restricted_to(self, bidder_ids: Sequence[str]) -> "Partition":
        keep = set(bidder_ids)
        return Partition.from_coins([(b, c) for b, c in self.coin_record if b in keep])


def partition_bidders(profile: BidProfile, seed: int) -> Partition:
    """Fair coin per bidder, in id order; coin 1 puts the bidder in S."""
    if len(profile) < 2:
        raise TooFewBidders(f"a random split needs at least 2 bidders, got {len(profile)}")
    coins = derive_rng(seed, "partition").integers(0, 2, size=len(profile))
    return Partition.from_coins(list(zip(profile.ids, (int(c) for c in coins))))


# --------------------------------------------------------------------------- #
#  Fictitious runs                                                            #
# --------------------------------------------------------------------------- #
class FictitiousRun:
    """Allocator run on one group's bids, stepped lazily as the horizon grows."""

    def __init__(self, group: BidProfile, rng: np.random.Generator, label: str = ""):
        self.label = label
        self._counts: List[int] = [0]
        self._state: Optional[AllocatorState] = None
        self._u: Tuple[float, ...] = ()
        if group.total_bids > 0:
            curve = build_revenue_curve(group)
            self._u = curve.u
            self._state = new_allocator(find_critical_points(curve), rng)

    @property
    def horizon(self) -> int:
        return len(self._counts) - 1

    def x(self, k: int) -> int:
        """x(G,k): copies the run has sold after k arrivals."""
        if k <= 0:
            return 0
        while self.horizon < k:
            if self._state is not None and self._state.mode is not Mode.HALT:
                step(self._state)
                self._counts.append(self._state.allocated)
            else:
                self._counts.append(self._counts[-1])
        return self._counts[k]

    def price(self, k: int) -> float:
        """p(G,k): the x(G,k)-th highest bid in the group, 0 when nothing is sold."""
        sold = self.x(k)
        return self._u[sold - 1] if sold > 0 else 0.0

    def curve(self, horizon: int) -> Tuple[int, ...]:
        self.x(horizon)
        return tuple(self._counts[1:horizon + 1])


def fictitious_run(group: BidProfile, horizon: int, seed: int, label: str = "fict") -> FictitiousRun:
    run = FictitiousRun(group, derive_rng(seed, label), label)
    run.x(horizon)
    return run


# --------------------------------------------------------------------------- #
#  VCG and diagnostics                                                        #
# --------------------------------------------------------------------------- #
def vcg_payments(group: BidProfile, copies: int) -> Dict[str, float]:
    """VCG prices for selling ``copies`` copies to ``group`` (capped at its bid count).

    With decreasing marginals the efficient allocation is the top-k bids, and
    a winner of q copies pays the q highest losing bids of everybody else.
    """
    entries = group.entries()
    k = max(0, min(copies, len(entries)))
    won = Counter(e.bidder_id for e in entries[:k])
    losing = entries[k:]
    payments: Dict[str, float] = {}
    for bidder_id in group.ids:
        q = won.get(bidder_id, 0)
        taken: List[float] = []
        for e in losing:
            if len(taken) == q:
                break
            if e.bidder_id != bidder_id:
                taken.append(e.bid)
        payments[bidder_id] = math.fsum(taken)
    return payments


def bidder_dominance(profile: BidProfile, supply: int) -> float:
    """η = max over bidders i and prices p ∈ Q of n(i,p)·p / OPT, counting bids ≥ p."""
    opt = opt_revenue(build_revenue_curve(profile), supply).revenue
    prices = profile.distinct_values()
    best = 0.0
    for bidder in profile.bidders:
        for p in prices:
            best = max(best, sum(1 for b in bidder.marginal_bids if b >= p) * p)
    return best / opt


@lru_cache(maxsize=16)
def _baseline(profile: BidProfile, supply: int) -> Tuple[float, float]:
    """OPT(B, M) and η, shared by every trial on the same profile."""
    return opt_revenue(build_revenue_curve(profile), supply).revenue, bidder_dominance(profile, supply)


def split_concentration(profile: BidProfile, partition: Partition, gamma: float) -> bool:
    """|n(S,p) − n(B,p)/2| ≤ γ·n(B,p) at every price p ∈ Q."""
    in_s = set(partition.group_s)
    for p in profile.distinct_values():
        n_all = n_s = 0
        for bidder in profile.bidders:
            count = sum(1 for b in bidder.marginal_bids if b >= p)
            n_all += count
            if bidder.bidder_id in in_s:
                n_s += count
        if abs(n_s - n_all / 2) > gamma * n_all:
            return False
    return True


def split_opt_holds(profile: BidProfile, partition: Partition, supply: int, gamma: float) -> bool:
    """OPT(S, ⌈M/2⌉) + OPT(T, ⌊M/2⌋) > (1 − 2γ)·OPT(B, M)."""
    opt = _baseline(profile, supply)[0]
    s_bids = profile.subset(partition.group_s).sorted_bids()
    t_bids = profile.subset(partition.group_t).sorted_bids()
    split = opt_for_bids(s_bids, math.ceil(supply / 2)).revenue + opt_for_bids(t_bids, supply // 2).revenue
    return split > (1 - 2 * gamma) * opt


# --------------------------------------------------------------------------- #
#  The mechanism                                                              #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class MechanismOutcome:
    partition: Partition
    fict_s: Tuple[int, ...]
    fict_t: Tuple[int, ...]
    caps_s: Tuple[int, ...]
    caps_t: Tuple[int, ...]
    x_final_s: int
    x_final_t: int
    winners: Dict[str, int]
    vcg_payments: Dict[str, float]
    revenue: float
    gamma: float
    eta: float
    opt: float
    pacing: str = "cross"
    trace: Tuple[str, ...] = field(default=(), compare=False)

    def utility(self, bidder: Bidder) -> float:
        """Quasi-linear utility of ``bidder`` (with their true bids) in this outcome."""
        won = self.winners.get(bidder.bidder_id, 0)
        return bidder.value_of(won) - self.vcg_payments.get(bidder.bidder_id, 0.0)


def _pacing_cap(gamma: float, fictitious: int) -> int:
    return math.floor((1 - 6 * gamma) * fictitious)


def _top_k_owners(group: BidProfile, k: int) -> Counter:
    return Counter(e.bidder_id for e in group.entries()[:k])


def run_mechanism(
    profile: BidProfile,
    supply: int,
    gamma: float,
    seed: int,
    pacing: str = "cross",
    partition: Optional[Partition] = None,
) -> MechanismOutcome:
    """One run of the sampling auction; pass ``partition`` to pin the split across reruns."""
    if not 0 <= gamma < 1 / 6:
        raise InvalidConfig(f"gamma must lie in [0, 1/6), got {gamma}")
    if pacing not in PACING_MODES:
        raise InvalidConfig(f"unknown pacing {pacing!r}; expected one of {PACING_MODES}")
    if supply < 1:
        raise InvalidConfig(f"supply must be ≥ 1, got {supply}")
    if profile.total_bids == 0:
        raise EmptyInstance("the mechanism needs at least one bid")

    partition = (partition or partition_bidders(profile, seed)).restricted_to(profile.ids)
    group_s = profile.subset(partition.group_s)
    group_t = profile.subset(partition.group_t)
    fict_s = FictitiousRun(group_s, derive_rng(seed, "fict-S"), "fict-S")
    fict_t = FictitiousRun(group_t, derive_rng(seed, "fict-T"), "fict-T")
    # "own" paces each group by its own run, which lets bidders steer their cap
    pace_t, pace_s = (fict_s, fict_t) if pacing == "cross" else (fict_t, fict_s)

    count_s = count_t = 0
    caps_s: List[int] = []
    caps_t: List[int] = []
    trace: List[str] = []
    for j in range(1, supply + 1):
        if j % 2 == 0:
            cap = _pacing_cap(gamma, pace_t.x(j // 2))
            caps_t.append(cap)
            if count_t < cap and count_t < group_t.total_bids:
                count_t += 1
                trace.append("T")
            else:
                trace.append("-")
        else:
            cap = _pacing_cap(gamma, pace_s.x((j + 1) // 2))
            caps_s.append(cap)
            if count_s < cap and count_s < group_s.total_bids:
                count_s += 1
                trace.append("S")
            else:
                trace.append("-")

    winners = dict(_top_k_owners(group_s, count_s) + _top_k_owners(group_t, count_t))
    payments = {**vcg_payments(group_s, count_s), **vcg_payments(group_t, count_t)}
    revenue = math.fsum(payments.values())
    opt, eta = _baseline(profile, supply)
    logger.debug(f"mechanism seed={seed}: |S|={len(group_s)} |T|={len(group_t)} x_S={count_s} x_T={count_t} revenue={revenue:.4f}")
    return MechanismOutcome(
        partition=partition,
        fict_s=fict_s.curve(math.ceil(supply / 2)),
        fict_t=fict_t.curve(math.ceil(supply / 2)),
        caps_s=tuple(caps_s),
        caps_t=tuple(caps_t),
        x_final_s=count_s,
        x_final_t=count_t,
        winners=winners,
        vcg_payments=payments,
        revenue=revenue,
        gamma=gamma,
        eta=eta,
        opt=opt,
        pacing=pacing,
        trace=tuple(trace),
    )


# --------------------------------------------------------------------------- #
#  Truthfulness tester                                                        #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Violation:
    trial: int
    bidder_id: str
    mode: str
    reported_bids: Tuple[float, ...]
    truthful_utility: float
    misreport_utility: float

    @property
    def gain(self) -> float:
        return self.misreport_utility - self.truthful_utility


@dataclass(frozen=True)
class TruthReport:
    deviations: int
    pacing: str
    violations: Tuple[Violation, ...]
    mode_counts: Dict[str, int]

    @property
    def violation_count(self) -> int:
        return len(self.violations)

    @property
    def max_gain(self) -> float:
        return max((v.gain for v in self.violations), default=0.0)


def misreport(bids: Sequence[float], mode: str, rng: np.random.Generator) -> Tuple[float, ...]:
    """A lie about ``bids``: scale them down, scale them up, or drop a non-empty subset."""
    if mode == "lower":
        return tuple(sorted((b * float(rng.uniform(0.3, 1.0)) for b in bids), reverse=True))
    if mode == "raise":
        return tuple(sorted((b * float(rng.uniform(1.0, 2.0)) for b in bids), reverse=True))
    if mode == "drop":
        mask = rng.integers(0, 2, size=len(bids))
        while not mask.any():
            mask = rng.integers(0, 2, size=len(bids))
        return tuple(b for b, dropped in zip(bids, mask) if not dropped)
    raise ValueError(f"unknown misreport mode {mode!r}")


def _deviation_trial(
    profile: BidProfile, supply: int, gamma: float, seed: int, pacing: str, t: int
) -> Tuple[str, Optional[Violation]]:
    rng = derive_rng(seed, "deviation", t)
    coins = derive_seed(seed, "deviation-coins", t)
    bidder_id = profile.ids[int(rng.integers(0, len(profile)))]
    mode = MISREPORT_MODES[int(rng.integers(0, len(MISREPORT_MODES)))]
    truth = profile.bidder(bidder_id)
    reported = misreport(truth.marginal_bids, mode, rng)

    partition = partition_bidders(profile, coins)
    truthful = run_mechanism(profile, supply, gamma, coins, pacing, partition)
    if reported:
        lying_profile = profile.with_bids(bidder_id, reported)
    else:
        lying_profile = profile.subset(b for b in profile.ids if b != bidder_id)
    lying = run_mechanism(lying_profile, supply, gamma, coins, pacing, partition)

    honest_u = truthful.utility(truth)
    lying_u = lying.utility(truth)
    if lying_u > honest_u + UTILITY_TOL * max(1.0, abs(honest_u)):
        return mode, Violation(t, bidder_id, mode, reported, honest_u, lying_u)
    return mode, None


def check_truthfulness(
    profile: BidProfile,
    supply: int,
    gamma: float,
    num_deviations: int,
    seed: int,
    pacing: str = "cross",
    workers: int = 1,
) -> TruthReport:
    """Sample (bidder, lie) pairs; each pair reruns the mechanism on the same coins."""
    if len(profile) < 2:
        raise TooFewBidders("truthfulness checks need at least 2 bidders")
    rows = run_trials(partial(_deviation_trial, profile, supply, gamma, seed, pacing), num_deviations, workers)
    violations = tuple(v for _, v in rows if v is not None)
    report = TruthReport(
        deviations=num_deviations,
        pacing=pacing,
        violations=violations,
        mode_counts=dict(sorted(Counter(mode for mode, _ in rows).items())),
    )
    logger.info(f"{num_deviations} deviations under {pacing!r} pacing: {report.violation_count} violations")
    return report


# --------------------------------------------------------------------------- #
#  Revenue experiment                                                         #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class RevenueStats:
    trials: int
    supply: int
    gamma: float
    epsilon: float
    delta: float
    opt: float
    eta: float
    price_levels: int
    mean_revenue: float
    stderr_revenue: float
    mean_alpha: float
    bound_fraction: float
    concentration_fraction: float
    split_opt_fraction: float
    predicted_concentration: float
    hypothesis_margin: float

    @property
    def hypothesis_satisfied(self) -> bool:
        return self.hypothesis_margin > 0

    @property
    def mean_ratio(self) -> float:
        return self.mean_revenue / self.opt


def half_ratio(group: BidProfile, supply: int) -> float:
    """Exact ALG/OPT of the allocator on one group at the given supply; 1 for an empty half."""
    if group.total_bids == 0 or supply < 1:
        return 1.0
    curve = build_revenue_curve(group)
    return outcome_distribution(curve, supply).expected_revenue / opt_revenue(curve, supply).revenue


def _revenue_trial(
    profile: BidProfile, supply: int, gamma: float, epsilon: float, seed: int, t: int
) -> Tuple[float, float, bool, bool, bool]:
    coins = derive_seed(seed, "mechanism-trial", t)
    outcome = run_mechanism(profile, supply, gamma, coins)
    part = outcome.partition
    alpha = min(
        half_ratio(profile.subset(part.group_s), math.ceil(supply / 2)),
        half_ratio(profile.subset(part.group_t), supply // 2),
    )
    met = at_least(outcome.revenue, alpha * (1 - epsilon) * outcome.opt)
    return (
        outcome.revenue,
        alpha,
        met,
        split_concentration(profile, part, gamma),
        split_opt_holds(profile, part, supply, gamma),
    )


def revenue_experiment(
    profile: BidProfile,
    supply: int,
    gamma: float,
    trials: int,
    seed: int,
    epsilon: Optional[float] = None,
    delta: float = 0.05,
    workers: int = 1,
) -> RevenueStats:
    epsilon = 8 * gamma if epsilon is None else epsilon
    rows = run_trials(partial(_revenue_trial, profile, supply, gamma, epsilon, seed), trials, workers)
    revenues = [r[0] for r in rows]
    mean_rev, se_rev = mean_and_stderr(revenues)
    opt, eta = _baseline(profile, supply)
    levels = len(profile.distinct_values())
    stats = RevenueStats(
        trials=trials,
        supply=supply,
        gamma=gamma,
        epsilon=epsilon,
        delta=delta,
        opt=opt,
        eta=eta,
        price_levels=levels,
        mean_revenue=mean_rev,
        stderr_revenue=se_rev,
        mean_alpha=float(np.mean([r[1] for r in rows])),
        bound_fraction=sum(r[2] for r in rows) / trials,
        concentration_fraction=sum(r[3] for r in rows) / trials,
        split_opt_fraction=sum(r[4] for r in rows) / trials,
        predicted_concentration=max(0.0, 1 - 2 * levels * math.exp(-2 * gamma ** 2 / eta)),
        hypothesis_margin=2 * gamma ** 2 * (0.5 - gamma) / eta - math.log(4 * levels / delta),
    )
    logger.info(
        f"Mechanism M={supply} γ={gamma}: revenue {mean_rev:.3f} ± {se_rev:.3f} of OPT {opt:.3f} "
        f"(η={eta:.2e}, hypothesis margin {stats.hypothesis_margin:.3f})"
    )
    return stats
