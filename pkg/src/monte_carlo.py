"""
monte_carlo.py  ·  seeded trial fan-out
---------------------------------------
Trial t always draws from ``derive_rng(seed, label, t)``. Results come back in
trial order whether the trials ran in this process or in a process pool, so
a report never depends on the worker count.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Sequence, Tuple, TypeVar

import numpy as np

from src.instance import CriticalPointSequence, RevenueCurve, find_critical_points
from src.online_allocator import run_on_points
from src.seeding import derive_rng

logger = logging.getLogger(__name__)

R = TypeVar("R")


def run_trials(trial: Callable[[int], R], trials: int, workers: int = 1) -> List[R]:
    """``[trial(0), trial(1), …]``; with workers > 1 the calls fan out to processes."""
    if workers <= 1 or trials < 2:
        return [trial(t) for t in range(trials)]
    chunksize = max(1, trials // (workers * 8))
    logger.info(f"Fanning {trials} trials out to {workers} worker processes (chunks of {chunksize})")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map() yields in submission order
        return list(pool.map(trial, range(trials), chunksize=chunksize))


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


@dataclass(frozen=True)
class SimulationResult:
    supply: int
    trials: int
    mean_revenue: float
    stderr_revenue: float
    mean_x: float
    stderr_x: float
    x_counts: Dict[int, int] = field(default_factory=dict)
    bracket: int = 0
    event_counts: Dict[str, int] = field(default_factory=dict)

    def x_frequency(self, x: int) -> float:
        return self.x_counts.get(x, 0) / self.trials

    def event_frequency(self, event: str) -> float:
        return self.event_counts.get(event, 0) / self.trials


def _allocator_trial(
    curve: RevenueCurve, cps: CriticalPointSequence, supply: int, seed: int, t: int
) -> Tuple[int, float, str]:
    outcome = run_on_points(curve, cps, supply, derive_rng(seed, "trial", t))
    i = cps.bracket(supply)
    event = outcome.event_relative_to(i) if 1 <= i < cps.K else "n/a"
    return outcome.x_final, outcome.revenue, event


def simulate(curve: RevenueCurve, supply: int, trials: int, seed: int, workers: int = 1) -> SimulationResult:
    """Sample the allocator ``trials`` times at supply ``supply``."""
    cps = find_critical_points(curve)
    rows = run_trials(partial(_allocator_trial, curve, cps, supply, seed), trials, workers)
    xs = [x for x, _, _ in rows]
    revenues = [r for _, r, _ in rows]
    mean_rev, se_rev = mean_and_stderr(revenues)
    mean_x, se_x = mean_and_stderr(xs)
    logger.info(f"M={supply}: {trials} trials, ALG ≈ {mean_rev:.6f} ± {se_rev:.6f}")
    return SimulationResult(
        supply=supply,
        trials=trials,
        mean_revenue=mean_rev,
        stderr_revenue=se_rev,
        mean_x=mean_x,
        stderr_x=se_x,
        x_counts=dict(sorted(Counter(xs).items())),
        bracket=cps.bracket(supply),
        event_counts=dict(sorted(Counter(e for _, _, e in rows).items())),
    )
