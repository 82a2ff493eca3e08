from fractions import Fraction

import pytest

from src.errors import DegenerateBelowFirstPeak
from src.exact_analyzer import (
    CASE_TAGS,
    TERMINAL,
    WaitChainDistribution,
    case_classify,
    case_probabilities,
    classify_tag,
    competitive_ratio_sweep,
    expected_revenue,
    mixed_ratio_sweep,
    outcome_distribution,
    row_probabilities,
    smoothness_bound,
    guarantee_slack,
)
from src.instance import BidProfile, build_revenue_curve, find_critical_points, gen_multipeak, gen_spike
from src.offline_oracle import opt_revenue


def _phase_pairs(curve):
    """(m, i) for every supply that ends strictly inside a non-terminal phase."""
    cps = find_critical_points(curve)
    for m in range(cps.b(1) + 1, cps.b(cps.K) + 1):
        i = cps.bracket(m)
        if i < cps.K:
            yield m, i


# --- the worked two-peak instance ---------------------------------------------
def test_two_peak_distribution_at_three_copies(two_peak_curve):
    dist = outcome_distribution(two_peak_curve, 3)
    assert dist.exact
    assert dist.support == {1: Fraction(2, 3), 2: Fraction(1, 3)}
    assert dist.phase_events(1) == (0, Fraction(1, 3), Fraction(2, 3))
    assert dist.x_events(1) == (0, Fraction(2, 3), Fraction(1, 3))
    assert dist.expected_revenue == pytest.approx(26 / 3)
    assert dist.m_prime == 2


def test_two_peak_case_and_smoothness(two_peak_curve):
    analysis = case_classify(two_peak_curve, 3)
    assert analysis.case_tag == "1a"
    assert case_probabilities(analysis) == (0, Fraction(1, 3), Fraction(2, 3))
    assert analysis.opt == 10.0
    assert smoothness_bound(two_peak_curve) == pytest.approx(0.75)


def test_distributions_are_proper(two_peak_curve, growing_wait_profile):
    for curve in (two_peak_curve, build_revenue_curve(growing_wait_profile)):
        for m in range(0, 2 * curve.n + 1, 7):
            dist = outcome_distribution(curve, m)
            assert dist.total_probability() == 1
            assert all(0 <= x <= min(m, curve.n) for x in dist.support)


def test_single_peak_sells_everything(spike_curve):
    curve = spike_curve(0.5, 5)
    for m in range(1, 12):
        assert expected_revenue(curve, m) == pytest.approx(curve.f(min(m, curve.n)))


# --- case table ---------------------------------------------------------------
def test_case_rows_match_the_dp_exactly(growing_wait_profile, flat_wait_profile):
    seen = set()
    pairs = 0
    for profile in (growing_wait_profile, flat_wait_profile):
        curve = build_revenue_curve(profile)
        cps = find_critical_points(curve)
        for m, i in _phase_pairs(curve):
            tag = classify_tag(cps, m)
            row = row_probabilities(tag, m - cps.b(i), cps.D(i - 1), cps.D(i))
            assert outcome_distribution(curve, m).phase_events(i) == row, (m, tag)
            assert sum(row) == 1
            seen.add(tag)
            pairs += 1
    assert seen == set(CASE_TAGS)
    assert pairs >= 100


@pytest.mark.parametrize("m, tag", [(11, "1a"), (26, "2a"), (41, "1b"), (55, "1b"), (56, "1a"), (80, "1a"), (81, "2a")])
def test_tags_on_growing_waits(growing_wait_profile, m, tag):
    assert classify_tag(find_critical_points(build_revenue_curve(growing_wait_profile)), m) == tag


@pytest.mark.parametrize("m, tag", [(41, "1c"), (54, "1c"), (55, "2b"), (56, "2c"), (80, "2c"), (81, TERMINAL)])
def test_tags_on_flat_waits(flat_wait_profile, m, tag):
    assert classify_tag(find_critical_points(build_revenue_curve(flat_wait_profile)), m) == tag


@pytest.mark.parametrize("left, right, m_prime, d_prev, d_cur", [
    ("1a", "1b", 15, 15, 40),   # M = J_i
    ("1a", "2a", 40, 15, 40),   # M = a_{i+1} with D_i = a_{i+1} − b_i
    ("1b", "1c", 7, 15, 15),    # J_i = a_{i+1}
    ("1c", "2b", 14, 15, 15),   # M = a_{i+1}
    ("2b", "2c", 15, 15, 15),   # M = J_i
])
def test_adjacent_rows_agree_on_boundaries(left, right, m_prime, d_prev, d_cur):
    assert row_probabilities(left, m_prime, d_prev, d_cur) == row_probabilities(right, m_prime, d_prev, d_cur)


def test_float_mode_agrees_with_rationals(growing_wait_profile):
    curve = build_revenue_curve(growing_wait_profile)
    for m, i in _phase_pairs(curve):
        exact = outcome_distribution(curve, m, exact=True).phase_events(i)
        approx = outcome_distribution(curve, m, exact=False).phase_events(i)
        assert [float(p) for p in exact] == pytest.approx(list(approx), abs=1e-9)


def test_rational_threshold_comes_from_settings(monkeypatch, growing_wait_profile):
    monkeypatch.setenv("ALLOC_RATIONAL_MAX_D", "10")
    assert not outcome_distribution(build_revenue_curve(growing_wait_profile), 50).exact


def test_below_first_peak_is_degenerate(two_peak_curve):
    with pytest.raises(DegenerateBelowFirstPeak):
        case_classify(two_peak_curve, 1)


def test_past_last_peak_is_terminal(two_peak_curve):
    analysis = case_classify(two_peak_curve, 8)
    assert analysis.case_tag == TERMINAL
    assert analysis.probabilities is None
    with pytest.raises(ValueError):
        case_probabilities(analysis)


# --- event equivalences and conditional means -------------------------------
def test_wait_chain_kernel_rows_are_distributions(growing_wait_profile):
    chain = WaitChainDistribution(find_critical_points(build_revenue_curve(growing_wait_profile)))
    for i in (1, 2, 3):
        for j in chain.marginal(i - 1):
            row = chain.kernel(i, j)
            assert sum(row.values()) == 1
            assert min(row) >= j
        joint = chain.joint(i)
        for k, p in chain.marginal(i).items():
            assert sum(q for (_, kk), q in joint.items() if kk == k) == p


def test_x_events_equal_chain_events(growing_wait_profile, flat_wait_profile, two_peak_curve):
    curves = [two_peak_curve, build_revenue_curve(growing_wait_profile), build_revenue_curve(flat_wait_profile)]
    for curve in curves:
        cps = find_critical_points(curve)
        chain = WaitChainDistribution(cps)
        for m, i in _phase_pairs(curve):
            assert outcome_distribution(curve, m).x_events(i) == chain.events(i, m - cps.b(i)), m


def test_conditional_means(growing_wait_profile, flat_wait_profile):
    for profile in (growing_wait_profile, flat_wait_profile):
        curve = build_revenue_curve(profile)
        cps = find_critical_points(curve)
        chain = WaitChainDistribution(cps)
        for m, i in _phase_pairs(curve):
            b, m_prime = cps.b(i), m - cps.b(i)
            dist = outcome_distribution(curve, m)
            analysis = case_classify(curve, m)

            above = dist.conditional_mean(lambda x: x > b)
            assert above == analysis.mean_above
            if above is not None:
                assert above == m - chain.conditional_mean(i, lambda c: c < m_prime)
                if m_prime <= cps.D(i):
                    assert above == m - Fraction(m_prime, 2)

            below = dist.conditional_mean(lambda x: x < b)
            if analysis.mean_below_bound is not None:
                assert below is not None
                assert below >= analysis.mean_below_bound


# --- sweeps -------------------------------------------------------------------
def _guarantee_family():
    curves = [build_revenue_curve(gen_spike(eps, 400)) for eps in (0.1, 0.02, 0.01)]
    curves += [build_revenue_curve(gen_multipeak(3, seed)) for seed in range(20)]
    curves += [
        build_revenue_curve(BidProfile.from_mapping({"a": [10.0], "b": [3.0] * 5})),
        build_revenue_curve(BidProfile.from_mapping({"a": [100.0] * 10, "b": [40.0] * 30, "c": [20.0] * 80})),
        build_revenue_curve(BidProfile.from_mapping({"a": [100.0] * 10, "b": [40.0] * 30, "c": [30.0] * 40})),
        build_revenue_curve(BidProfile.from_mapping({"x": [7.0, 2.0], "y": [2.0, 2.0, 2.0, 2.0], "z": [1.5] * 6})),
    ]
    return curves


def test_half_competitive_on_the_family():
    for curve in _guarantee_family():
        cps = find_critical_points(curve)
        sweep = competitive_ratio_sweep(curve, 2 * curve.n)
        assert sweep.min_ratio >= 0.5 - guarantee_slack(cps) - 1e-12


def test_large_peaks_stay_near_half():
    curve = build_revenue_curve(BidProfile.from_mapping({"big": [10.0] * 60, "small": [4.0] * 200}))
    cps = find_critical_points(curve)
    assert cps.peaks == ((1, 60), (150, 260))
    assert cps.D(1) == 90
    assert competitive_ratio_sweep(curve, 2 * curve.n).min_ratio >= 0.49


def test_sweep_frame_columns(two_peak_curve):
    frame = competitive_ratio_sweep(two_peak_curve, 8).to_frame()
    assert list(frame.columns) == ["M", "ALG", "OPT", "ratio", "case"]
    assert frame["M"].tolist() == list(range(1, 9))
    assert frame.loc[0, "case"] == "below-first-peak"
    assert frame.loc[0, "ratio"] == 1.0


def test_thin_spike_matches_the_closed_forms(spike_curve):
    curve = spike_curve(0.01)
    for m in range(1, 101):
        x = 0.01 * m
        assert abs(expected_revenue(curve, m) - (1 - x + x * x / 2)) <= 0.02, m
    for m in range(101, 301):
        assert expected_revenue(curve, m) >= 0.01 * m - 0.5 - 0.02, m


def test_smooth_instance_is_nearly_optimal():
    curve = build_revenue_curve(BidProfile.from_mapping({"big": [10.0] * 500, "small": [9.5] * 30}))
    cps = find_critical_points(curve)
    assert (cps.a(2), cps.b(2), cps.D(1)) == (527, 530, 27)
    assert smoothness_bound(curve) == pytest.approx(27 / 527)
    assert competitive_ratio_sweep(curve, 2 * curve.n).min_ratio >= 0.9 - guarantee_slack(cps)


def test_mixture_reaches_two_thirds_on_the_thin_spike(spike_curve):
    sweep = mixed_ratio_sweep(spike_curve(0.01), 300)
    assert sweep.min_ratio >= 2 / 3 - 0.02
    assert sweep.rows[0].ALG == pytest.approx(1.0)


def test_mixture_without_single_copy_is_the_plain_sweep(two_peak_curve):
    plain = competitive_ratio_sweep(two_peak_curve, 10)
    mixed = mixed_ratio_sweep(two_peak_curve, 10, p_single=0.0)
    assert [r.ALG for r in mixed.rows] == pytest.approx([r.ALG for r in plain.rows])


def test_ratio_uses_the_offline_optimum(two_peak_curve):
    for row in competitive_ratio_sweep(two_peak_curve, 12).rows:
        assert row.OPT == opt_revenue(two_peak_curve, row.M).revenue
        assert row.ratio == pytest.approx(row.ALG / row.OPT)
