import itertools
import math

import numpy as np
import pytest

from src.errors import InvalidConfig, TooFewBidders
from src.instance import BidProfile, gen_multipeak, gen_random_profile
from src.mechanism import (
    FictitiousRun,
    Partition,
    bidder_dominance,
    check_truthfulness,
    fictitious_run,
    misreport,
    partition_bidders,
    revenue_experiment,
    run_mechanism,
    split_concentration,
    split_opt_holds,
    vcg_payments,
)
from src.online_allocator import run
from src.seeding import derive_rng

GAMMA = 0.0125


@pytest.fixture
def control_profile():
    # alone in a group and paced by its own run, "a" gains by hiding the 10
    return BidProfile.from_mapping({"a": [10.0, 3.0, 3.0, 3.0, 3.0, 3.0], "b": [4.0]})


# --- partition ----------------------------------------------------------------
def test_partition_needs_two_bidders():
    with pytest.raises(TooFewBidders):
        partition_bidders(BidProfile.from_mapping({"solo": [1.0]}), seed=0)


def test_partition_is_seeded_and_replayable(two_peak_profile):
    part = partition_bidders(two_peak_profile, seed=17)
    assert part == partition_bidders(two_peak_profile, seed=17)
    assert Partition.from_coins(part.coin_record) == part
    assert set(part.group_s) | set(part.group_t) == set(two_peak_profile.ids)
    assert not set(part.group_s) & set(part.group_t)


def test_partition_coins_are_fair():
    profile = BidProfile.from_mapping({f"b{k}": [1.0] for k in range(4)})
    seeds = 2_000
    in_s = np.zeros(4)
    for seed in range(seeds):
        part = partition_bidders(profile, seed)
        in_s += [bid in part.group_s for bid in profile.ids]
    sigma = math.sqrt(0.25 / seeds)
    assert np.all(np.abs(in_s / seeds - 0.5) <= 4 * sigma)


# --- fictitious runs ----------------------------------------------------------
def test_monotone_group_sells_every_arrival():
    group = BidProfile.from_mapping({"a": [5.0, 4.0], "b": [4.5]})
    run_ = fictitious_run(group, 6, seed=1)
    assert run_.curve(6) == (1, 2, 3, 3, 3, 3)


def test_fictitious_counts_replay_the_allocator(two_peak_profile, two_peak_curve):
    for seed in range(10):
        fict = FictitiousRun(two_peak_profile, derive_rng(seed, "fict-S"))
        for k in range(1, 12):
            assert fict.x(k) == run(two_peak_curve, k, derive_rng(seed, "fict-S")).x_final


def test_fictitious_counts_step_by_at_most_one(growing_wait_profile):
    counts = fictitious_run(growing_wait_profile, 150, seed=4).curve(150)
    steps = np.diff((0,) + counts)
    assert set(steps) <= {0, 1}
    assert all(x <= k for k, x in enumerate(counts, start=1))


def test_empty_group_never_sells():
    fict = fictitious_run(BidProfile(()), 5, seed=0)
    assert fict.curve(5) == (0, 0, 0, 0, 0)
    assert fict.price(3) == 0.0


# --- VCG ----------------------------------------------------------------------
def test_vcg_textbook_case():
    group = BidProfile.from_mapping({"A": [5.0, 3.0], "B": [4.0, 1.0]})
    assert vcg_payments(group, 2) == {"A": 1.0, "B": 3.0}


def test_vcg_degenerate_supplies():
    solo = BidProfile.from_mapping({"A": [5.0]})
    assert vcg_payments(solo, 1) == {"A": 0.0}
    group = BidProfile.from_mapping({"A": [5.0, 3.0], "B": [4.0]})
    assert vcg_payments(group, 0) == {"A": 0.0, "B": 0.0}
    # more copies than bids: everybody wins everything and nobody is displaced
    assert vcg_payments(group, 10) == {"A": 0.0, "B": 0.0}


def _welfare_optimum(bids, copies, skip=None):
    """Best total value over all ways to split ``copies`` among the bidders (brute force)."""
    ids = [b for b in bids if b != skip]
    best, best_alloc = 0.0, {b: 0 for b in ids}
    for alloc in itertools.product(*(range(len(bids[b]) + 1) for b in ids)):
        if sum(alloc) > copies:
            continue
        value = sum(sum(bids[b][:q]) for b, q in zip(ids, alloc))
        if value > best:
            best, best_alloc = value, dict(zip(ids, alloc))
    return best, best_alloc


@pytest.mark.parametrize("seed", range(25))
def test_vcg_matches_brute_force_welfare_differences(seed):
    rng = np.random.default_rng(seed)
    num_bidders = int(rng.integers(1, 4))
    sizes = rng.multinomial(int(rng.integers(num_bidders, 7)) - num_bidders, [1 / num_bidders] * num_bidders) + 1
    bids = {f"b{k}": sorted(rng.uniform(1, 10, size=int(s)).tolist(), reverse=True) for k, s in enumerate(sizes)}
    group = BidProfile.from_mapping(bids)
    for copies in range(0, group.total_bids + 2):
        _, alloc = _welfare_optimum(bids, copies)
        payments = vcg_payments(group, copies)
        for bidder in bids:
            without, _ = _welfare_optimum(bids, copies, skip=bidder)
            others_with = sum(sum(bids[b][:q]) for b, q in alloc.items() if b != bidder)
            assert payments[bidder] == pytest.approx(without - others_with, abs=1e-9)


def test_removing_a_loser_leaves_payments_alone():
    # C loses and its bid sits below every price-setting bid
    group = BidProfile.from_mapping({"A": [9.0, 8.0], "B": [7.0, 6.0, 5.0], "C": [1.0]})
    before = vcg_payments(group, 2)
    after = vcg_payments(group.subset(["A", "B"]), 2)
    assert before["A"] == after["A"] == 13.0
    assert before["B"] == after["B"] == 0.0


# --- dominance and split diagnostics ------------------------------------------
def test_bidder_dominance_examples(dense_unit_profile):
    assert bidder_dominance(BidProfile.from_mapping({"solo": [3.0]}), 1) == 1.0
    five = BidProfile.from_mapping({f"u{k}": [2.0] for k in range(5)})
    assert bidder_dominance(five, 5) == pytest.approx(1 / 5)
    assert bidder_dominance(dense_unit_profile, 1000) == pytest.approx(1e-3)


def test_split_checks_on_an_even_split():
    profile = BidProfile.from_mapping({f"u{k}": [1.0] for k in range(8)})
    part = Partition.from_coins([(f"u{k}", k % 2) for k in range(8)])
    assert split_concentration(profile, part, 0.01)
    assert split_opt_holds(profile, part, 8, GAMMA)
    lopsided = Partition.from_coins([(f"u{k}", int(k < 6)) for k in range(8)])
    assert not split_concentration(profile, lopsided, 0.1)
    assert not split_opt_holds(profile, lopsided, 8, GAMMA)


# --- the mechanism ------------------------------------------------------------
@pytest.mark.parametrize("gamma", [-0.1, 1 / 6, 0.5])
def test_gamma_range_enforced(two_peak_profile, gamma):
    with pytest.raises(InvalidConfig):
        run_mechanism(two_peak_profile, 4, gamma, seed=0)


@pytest.mark.parametrize("seed", range(15))
def test_mechanism_invariants(seed):
    profile = gen_random_profile(10, 3, seed=seed)
    m = profile.total_bids
    out = run_mechanism(profile, m, GAMMA, seed)

    for j, who in enumerate(out.trace, start=1):
        assert who in ("-", "T" if j % 2 == 0 else "S")
    assert out.x_final_t <= math.floor((1 - 6 * GAMMA) * out.fict_s[m // 2 - 1])
    assert out.revenue == pytest.approx(sum(out.vcg_payments.values()))
    for bidder_id, won in out.winners.items():
        pay = out.vcg_payments[bidder_id]
        assert 0 <= pay <= sum(profile.bidder(bidder_id).marginal_bids[:won]) + 1e-9
    assert sum(out.winners.values()) == out.x_final_s + out.x_final_t


def test_own_group_bids_cannot_move_own_cap():
    profile = gen_random_profile(8, 3, seed=5)
    for seed in range(10):
        base = run_mechanism(profile, profile.total_bids, GAMMA, seed)
        part = base.partition
        if part.group_t:
            lied = profile.with_bids(part.group_t[0], [99.0, 1.0])
            assert run_mechanism(lied, profile.total_bids, GAMMA, seed, partition=part).caps_t == base.caps_t
        if part.group_s:
            lied = profile.with_bids(part.group_s[0], [0.5])
            assert run_mechanism(lied, profile.total_bids, GAMMA, seed, partition=part).caps_s == base.caps_s


def test_zero_gamma_caps_are_the_fictitious_counts():
    profile = gen_random_profile(6, 2, seed=2)
    out = run_mechanism(profile, 12, 0.0, seed=8)
    assert list(out.caps_t) == list(out.fict_s[: len(out.caps_t)])
    assert list(out.caps_s) == list(out.fict_t[: len(out.caps_s)])


def test_two_identical_bidders_with_two_copies():
    profile = BidProfile.from_mapping({"x": [5.0], "y": [5.0]})
    for seed in range(12):
        out = run_mechanism(profile, 2, 0.0, seed)
        assert out.x_final_s <= 1 and out.x_final_t <= 1
        split = len(out.partition.group_s) == 1
        assert (out.x_final_s, out.x_final_t) == ((1, 1) if split else (0, 0))
        assert out.revenue == 0.0
        # any pacing slack at all rounds the single fictitious sale down to zero
        assert run_mechanism(profile, 2, GAMMA, seed).revenue == 0.0


def _balanced_split_probability(bidders, gamma):
    """Pr[|n_S − n/2| ≤ γn] for n fair coins, by exact binomial sums."""
    slack = gamma * bidders
    hits = sum(math.comb(bidders, k) for k in range(bidders + 1) if abs(k - bidders / 2) <= slack)
    return hits / 2 ** bidders


def test_dense_instance_revenue(dense_unit_profile):
    trials = 10_000
    stats = revenue_experiment(dense_unit_profile, 1000, GAMMA, trials=trials, seed=3, epsilon=0.1, workers=4)
    assert stats.eta == pytest.approx(1e-3)
    assert stats.mean_revenue == pytest.approx(924.0)
    assert stats.mean_alpha == pytest.approx(1.0)
    assert stats.mean_revenue >= (1 - 0.1) * stats.mean_alpha * stats.opt
    assert stats.bound_fraction == 1.0
    assert stats.split_opt_fraction >= 0.99
    assert not stats.hypothesis_satisfied

    p = _balanced_split_probability(len(dense_unit_profile), GAMMA)
    assert abs(stats.concentration_fraction - p) <= 4 * math.sqrt(p * (1 - p) / trials)


# --- truthfulness ----------------------------------------------------------------
def test_misreports_stay_valid():
    rng = np.random.default_rng(0)
    bids = (9.0, 4.0, 4.0, 1.0)
    for _ in range(50):
        for mode in ("lower", "raise"):
            lie = misreport(bids, mode, rng)
            assert len(lie) == len(bids) and list(lie) == sorted(lie, reverse=True)
        dropped = misreport(bids, "drop", rng)
        assert len(dropped) < len(bids)


def _truth_instances(count=20):
    fixed = [
        BidProfile.from_mapping({"a": [10.0, 3.0, 3.0, 3.0, 3.0, 3.0], "b": [4.0]}),
        BidProfile.from_mapping({"a": [10.0], "b": [3.0] * 5, "c": [3.0, 2.0]}),
    ]
    generated = [gen_multipeak(3, seed=s) for s in range(6)] + [gen_random_profile(6, 3, seed=s) for s in range(40)]
    usable = [p for p in fixed + generated if len(p) >= 2]
    return usable[:count]


def test_no_profitable_misreport_under_cross_pacing():
    instances = _truth_instances()
    assert len(instances) == 20
    total = 0
    for k, profile in enumerate(instances):
        report = check_truthfulness(profile, profile.total_bids + 2, GAMMA, 500, seed=k)
        assert report.violation_count == 0, report.violations[:3]
        assert report.mode_counts.get("drop", 0) > 0
        total += sum(report.mode_counts.values())
    assert total == 10_000


def test_own_pacing_control_is_caught(control_profile):
    report = check_truthfulness(control_profile, 8, GAMMA, 1000, seed=11, pacing="own")
    assert report.violation_count >= 1
    assert report.max_gain > 0


def test_cross_pacing_passes_the_control_instance(control_profile):
    assert check_truthfulness(control_profile, 8, GAMMA, 1000, seed=11).violation_count == 0


def test_truthfulness_needs_two_bidders():
    with pytest.raises(TooFewBidders):
        check_truthfulness(BidProfile.from_mapping({"solo": [1.0]}), 2, GAMMA, 5, seed=0)
