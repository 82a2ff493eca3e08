"""
online_allocator.py  ·  the randomized ALLOCATE / WAIT state machine
--------------------------------------------------------------------
Copies arrive one at a time. The allocator sells them until it reaches a
peak b_i, then discards copies until the running discard count Y reaches
the wait budget T, which only ever grows. At phase i the budget is
re-drawn so that T stays uniform on [0, D_i]. After the last peak it halts.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from src.errors import InvariantViolation
from src.instance import CriticalPointSequence, RevenueCurve, find_critical_points
from src.seeding import derive_rng

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.Generator]


class Mode(str, Enum):
    ALLOCATE = "ALLOCATE"
    WAIT = "WAIT"
    HALT = "HALT"


class Decision(str, Enum):
    ALLOCATED = "Allocated"
    DISCARDED = "Discarded"
    HALTED = "Halted"


@dataclass
class AllocatorState:
    """Single-owner mutable state; step it sequentially."""

    cps: CriticalPointSequence
    rng: np.random.Generator
    phase: int = 1
    mode: Mode = Mode.ALLOCATE
    allocated: int = 0
    discarded: int = 0
    wait_budget: float = 0.0
    budget_history: List[float] = field(default_factory=list)

    @property
    def consumed(self) -> int:
        return self.allocated + self.discarded


def _as_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(int(seed), "allocator")


def new_allocator(cps: CriticalPointSequence, seed: Seed) -> AllocatorState:
    return AllocatorState(cps=cps, rng=_as_rng(seed))


def resample_wait_budget(state: AllocatorState, d_prev: int, d_cur: int) -> float:
    """Keep T w.p. d_prev/d_cur, else draw it uniformly from [d_prev, d_cur].

    Draw order is fixed: the keep/replace coin first, then the position.
    """
    if d_prev > d_cur:
        raise InvariantViolation(f"wait bounds must not decrease: D_prev={d_prev} > D_cur={d_cur}")
    if d_cur == d_prev:
        return state.wait_budget
    coin = state.rng.random()
    if coin < d_prev / d_cur:
        return state.wait_budget
    return float(state.rng.uniform(d_prev, d_cur))


def step(state: AllocatorState) -> Decision:
    """Feed one arriving copy to the machine."""
    if state.mode is Mode.HALT:
        return Decision.HALTED

    if state.mode is Mode.ALLOCATE:
        state.allocated += 1
        i = state.phase
        if state.allocated == state.cps.b(i):
            if state.cps.is_terminal(i):
                state.mode = Mode.HALT
            else:
                state.wait_budget = resample_wait_budget(state, state.cps.D(i - 1), state.cps.D(i))
                state.budget_history.append(state.wait_budget)
                state.phase = i + 1
                # a kept budget is already used up: go straight on allocating
                state.mode = Mode.WAIT if state.discarded < state.wait_budget else Mode.ALLOCATE
        return Decision.ALLOCATED

    state.discarded += 1
    if state.discarded >= state.wait_budget:
        state.mode = Mode.ALLOCATE
    return Decision.DISCARDED


@dataclass(frozen=True)
class RunOutcome:
    x_final: int
    revenue: float
    final_phase: int
    final_mode: Mode
    wait_budgets: tuple = ()
    trace: Optional[tuple] = None
    winners: Dict[str, int] = field(default_factory=dict, compare=False)

    def event_relative_to(self, i: int) -> str:
        """Where the run ended relative to peak b_i: 'below', 'parked' or 'resumed'."""
        if self.final_mode is Mode.WAIT:
            return "parked" if self.final_phase - 1 == i else "below"
        if self.final_mode is Mode.HALT:
            return "resumed"
        return "resumed" if self.final_phase == i + 1 else "below"


def _assign(curve: RevenueCurve, x_final: int) -> Dict[str, int]:
    # the l-th sold copy goes to the owner of the l-th highest bid
    if not curve.owners:
        return {}
    return dict(Counter(curve.owners[:x_final]))


def run_on_points(
    curve: RevenueCurve,
    cps: CriticalPointSequence,
    supply: int,
    seed: Seed,
    record_trace: bool = False,
) -> RunOutcome:
    state = new_allocator(cps, seed)
    trace: List[Decision] = []
    for _ in range(supply):
        decision = step(state)
        if record_trace:
            trace.append(decision)
        elif state.mode is Mode.HALT:
            break
    if record_trace:
        logger.debug(f"run trace: {[d.value for d in trace]}")
    return RunOutcome(
        x_final=state.allocated,
        revenue=curve.f(state.allocated),
        final_phase=state.phase,
        final_mode=state.mode,
        wait_budgets=tuple(state.budget_history),
        trace=tuple(trace) if record_trace else None,
        winners=_assign(curve, state.allocated),
    )


def run(curve: RevenueCurve, supply: int, seed: Seed, record_trace: bool = False) -> RunOutcome:
    """Run the allocator over ``supply`` arrivals."""
    return run_on_points(curve, find_critical_points(curve), supply, seed, record_trace)


def run_generic(values: Sequence[float], supply: int, seed: Seed, record_trace: bool = False) -> RunOutcome:
    """Same machine driven by any sublinear f tabulated over 1..n."""
    return run(RevenueCurve.from_function(values), supply, seed, record_trace)
