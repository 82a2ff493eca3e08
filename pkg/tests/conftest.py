import pytest

from src.instance import BidProfile, build_revenue_curve, gen_spike


@pytest.fixture
def two_peak_profile():
    # f = 10, 6, 9, 12, 15, 18: peaks (1,1) and (4,6), D = [0, 3, 3]
    return BidProfile.from_mapping({"a": [10.0], "b": [3.0, 3.0, 3.0, 3.0, 3.0]})


@pytest.fixture
def two_peak_curve(two_peak_profile):
    return build_revenue_curve(two_peak_profile)


@pytest.fixture
def growing_wait_profile():
    # peaks (1,10), (25,40), (80,120); D = [0, 15, 40, 40]; J_2 = 55 < a_3 = 80
    return BidProfile.from_mapping({"a": [100.0] * 10, "b": [40.0] * 30, "c": [20.0] * 80})


@pytest.fixture
def flat_wait_profile():
    # peaks (1,10), (25,40), (54,80); D = [0, 15, 15, 15]; J_2 = 55 ≥ a_3 = 54
    return BidProfile.from_mapping({"a": [100.0] * 10, "b": [40.0] * 30, "c": [30.0] * 40})


@pytest.fixture
def spike_curve():
    def make(eps, count=400):
        return build_revenue_curve(gen_spike(eps, count))
    return make


@pytest.fixture
def dense_unit_profile():
    # 2000 unit-demand bidders at the same price: η = 1/1000 at M = 1000
    return BidProfile.from_mapping({f"u{k:04d}": [1.0] for k in range(2000)})
