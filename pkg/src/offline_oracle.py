"""
offline_oracle.py – optimal single-price revenue OPT, the benchmark for everything else
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

from src.instance import RevenueCurve, at_least


@dataclass(frozen=True)
class OptResult:
    quantity: int
    price: float
    revenue: float


NOTHING_SOLD = OptResult(quantity=0, price=0.0, revenue=0.0)


def _best_prefix(values: Sequence[float], limit: int) -> int:
    # near-equal revenues count as ties, matching peak detection
    best_l = 1
    for l in range(2, limit + 1):
        if not at_least(values[best_l - 1], values[l - 1]):
            best_l = l
    return best_l


def opt_revenue(curve: RevenueCurve, supply: int) -> OptResult:
    """argmax of f(l) over 1 ≤ l ≤ min(supply, n); ties go to the smallest l."""
    if supply <= 0:
        return NOTHING_SOLD
    best_l = _best_prefix(curve.values, min(supply, curve.n))
    return OptResult(quantity=best_l, price=curve.u[best_l - 1], revenue=curve.f(best_l))


def opt_curve(curve: RevenueCurve, m_max: int) -> List[OptResult]:
    """OPT(M) for M = 1..m_max in one pass (running maximum of f)."""
    results: List[OptResult] = []
    best_l = 0
    for m in range(1, m_max + 1):
        if m <= curve.n and (best_l == 0 or not at_least(curve.f(best_l), curve.f(m))):
            best_l = m
        results.append(OptResult(quantity=best_l, price=curve.u[best_l - 1], revenue=curve.f(best_l)))
    return results


def opt_for_bids(bids: Sequence[float], supply: int) -> OptResult:
    """OPT for a raw bid multiset (e.g. one half of a bidder split); empty → nothing sold."""
    if not bids or supply <= 0:
        return NOTHING_SOLD
    u = sorted((float(b) for b in bids), reverse=True)
    values = [l * bid for l, bid in enumerate(u, start=1)]
    best_l = _best_prefix(values, min(supply, len(u)))
    return OptResult(quantity=best_l, price=u[best_l - 1], revenue=values[best_l - 1])
