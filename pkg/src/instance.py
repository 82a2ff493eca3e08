"""
instance.py  ·  bid profiles, revenue curves and their critical points
----------------------------------------------------------------------
* ``BidProfile``  – bidders with non-increasing marginal bids.
* ``RevenueCurve`` – sorted bids u_1 ≥ … ≥ u_n and f(l) = l·u_l, or any
  tabulated sublinear f.
* ``CriticalPointSequence`` – the peak/valley structure of f with the wait
  bounds D_i and thresholds J_i.
* Generators for spike, multi-peak and random instances, plus JSON I/O.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from src.errors import EmptyInstance, InvalidBid, InvalidConfig, InvariantViolation, NotSublinear, ParseError
from src.seeding import derive_rng

logger = logging.getLogger(__name__)

REL_TOL = 1e-12


def at_least(x: float, y: float) -> bool:
    """``x >= y`` up to a relative tolerance, so decimal ties (10 × 0.1 vs 1) stay ties."""
    return x >= y - REL_TOL * max(abs(x), abs(y))


# --------------------------------------------------------------------------- #
#  Bid profiles                                                               #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Bidder:
    bidder_id: str
    marginal_bids: Tuple[float, ...]

    @property
    def total_value(self) -> float:
        return float(sum(self.marginal_bids))

    def value_of(self, copies: int) -> float:
        """True value of receiving ``copies`` copies (extra copies are worth nothing)."""
        return float(sum(self.marginal_bids[:max(copies, 0)]))


@dataclass(frozen=True)
class BidEntry:
    """One marginal bid in the global order: bid desc, bidder_id asc, position asc."""

    bid: float
    bidder_id: str
    position: int


def _check_bids(bidder_id: str, bids: Sequence[float]) -> Tuple[float, ...]:
    if len(bids) == 0:
        raise InvalidBid(f"bidder {bidder_id!r} has no bids")
    cleaned = []
    for k, raw in enumerate(bids):
        try:
            bid = float(raw)
        except (TypeError, ValueError) as exc:
            raise InvalidBid(f"bidder {bidder_id!r} bid #{k + 1} is not a number: {raw!r}") from exc
        if not math.isfinite(bid) or bid <= 0:
            raise InvalidBid(f"bidder {bidder_id!r} bid #{k + 1} must be finite and positive, got {raw!r}")
        if cleaned and bid > cleaned[-1]:
            raise InvalidBid(
                f"bidder {bidder_id!r} has increasing marginal bids {cleaned[-1]} → {bid} at #{k + 1}"
            )
        cleaned.append(bid)
    return tuple(cleaned)


@dataclass(frozen=True)
class BidProfile:
    """Bidders kept in canonical (id-sorted) order, so equal profiles compare equal."""

    bidders: Tuple[Bidder, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        checked = []
        for bidder in self.bidders:
            if bidder.bidder_id in seen:
                raise InvalidBid(f"duplicate bidder id {bidder.bidder_id!r}")
            seen.add(bidder.bidder_id)
            checked.append(Bidder(bidder.bidder_id, _check_bids(bidder.bidder_id, bidder.marginal_bids)))
        object.__setattr__(self, "bidders", tuple(sorted(checked, key=lambda b: b.bidder_id)))

    @classmethod
    def from_mapping(cls, bids: Mapping[str, Sequence[float]]) -> "BidProfile":
        return cls(tuple(Bidder(str(k), tuple(v)) for k, v in bids.items()))

    def as_mapping(self) -> Dict[str, List[float]]:
        return {b.bidder_id: list(b.marginal_bids) for b in self.bidders}

    @property
    def ids(self) -> List[str]:
        return [b.bidder_id for b in self.bidders]

    @property
    def total_bids(self) -> int:
        return sum(len(b.marginal_bids) for b in self.bidders)

    def __len__(self) -> int:
        return len(self.bidders)

    def bidder(self, bidder_id: str) -> Bidder:
        for b in self.bidders:
            if b.bidder_id == bidder_id:
                return b
        raise KeyError(bidder_id)

    @cached_property
    def _ranked(self) -> Tuple[BidEntry, ...]:
        flat = [
            BidEntry(bid, b.bidder_id, pos)
            for b in self.bidders
            for pos, bid in enumerate(b.marginal_bids)
        ]
        flat.sort(key=lambda e: (-e.bid, e.bidder_id, e.position))
        return tuple(flat)

    def entries(self) -> List[BidEntry]:
        """Every marginal bid in the global order; computed once per profile."""
        return list(self._ranked)

    def sorted_bids(self) -> List[float]:
        return [e.bid for e in self.entries()]

    def distinct_values(self) -> List[float]:
        """The finite price set Q, highest first."""
        return sorted({bid for b in self.bidders for bid in b.marginal_bids}, reverse=True)

    def subset(self, bidder_ids: Iterable[str]) -> "BidProfile":
        wanted = set(bidder_ids)
        # bidders here are already checked and sorted
        part = object.__new__(BidProfile)
        object.__setattr__(part, "bidders", tuple(b for b in self.bidders if b.bidder_id in wanted))
        return part

    def with_bids(self, bidder_id: str, bids: Sequence[float]) -> "BidProfile":
        """Same profile with one bidder's report replaced (used for misreports)."""
        self.bidder(bidder_id)
        return BidProfile(tuple(
            Bidder(b.bidder_id, tuple(bids)) if b.bidder_id == bidder_id else b
            for b in self.bidders
        ))


# --------------------------------------------------------------------------- #
#  Revenue curves                                                             #
# --------------------------------------------------------------------------- #
class CurveOrigin(str, Enum):
    FROM_BIDS = "FromBids"
    GENERIC_F = "GenericF"


@dataclass(frozen=True)
class RevenueCurve:
    u: Tuple[float, ...]
    values: Tuple[float, ...]
    origin: CurveOrigin = CurveOrigin.FROM_BIDS
    owners: Tuple[str, ...] = field(default=(), compare=False)

    @property
    def n(self) -> int:
        return len(self.values)

    def f(self, l: int) -> float:
        if l <= 0:
            return 0.0
        if l > self.n:
            raise ValueError(f"f({l}) is undefined beyond n={self.n}")
        return self.values[l - 1]

    def is_sublinear(self) -> bool:
        for l in range(1, self.n):
            if not at_least(self.values[l - 1] / l, self.values[l] / (l + 1)):
                return False
        return True

    @classmethod
    def from_function(cls, values: Sequence[float]) -> "RevenueCurve":
        """Wrap a tabulated f(1..n); f(l)/l must be non-increasing."""
        vals = tuple(float(v) for v in values)
        if not vals:
            raise EmptyInstance("a tabulated f needs at least one value")
        for l, v in enumerate(vals, start=1):
            if not math.isfinite(v) or v <= 0:
                raise InvalidBid(f"f({l}) must be finite and positive, got {v}")
        curve = cls(u=tuple(v / l for l, v in enumerate(vals, start=1)), values=vals, origin=CurveOrigin.GENERIC_F)
        if not curve.is_sublinear():
            bad = next(
                l for l in range(1, curve.n) if not at_least(vals[l - 1] / l, vals[l] / (l + 1))
            )
            raise NotSublinear(f"f(l)/l increases between l={bad} and l={bad + 1}")
        return curve


def build_revenue_curve(profile: BidProfile) -> RevenueCurve:
    """Sorted bids u and f(l) = l·u_l, remembering who owns each bid."""
    entries = profile.entries()
    if not entries:
        raise EmptyInstance("cannot build a revenue curve from an empty profile")
    u = tuple(e.bid for e in entries)
    return RevenueCurve(
        u=u,
        values=tuple(l * bid for l, bid in enumerate(u, start=1)),
        origin=CurveOrigin.FROM_BIDS,
        owners=tuple(e.bidder_id for e in entries),
    )


# --------------------------------------------------------------------------- #
#  Critical points                                                            #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class CriticalPointSequence:
    """Peaks (a_i, b_i), wait bounds D_0..D_K and thresholds J_1..J_K (all 1-based)."""

    peaks: Tuple[Tuple[int, int], ...]
    wait_bounds: Tuple[int, ...]
    thresholds: Tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.peaks)

    def a(self, i: int) -> int:
        return self.peaks[i - 1][0]

    def b(self, i: int) -> int:
        return self.peaks[i - 1][1]

    def D(self, i: int) -> int:
        return self.wait_bounds[i]

    def J(self, i: int) -> int:
        return self.thresholds[i - 1]

    def is_terminal(self, i: int) -> bool:
        return i >= self.K

    def bracket(self, m: int) -> int:
        """The i with b_i < m ≤ b_{i+1}; 0 below the first peak, K past the last one."""
        i = 0
        while i < self.K and self.b(i + 1) < m:
            i += 1
        return i

    @property
    def min_b(self) -> int:
        return min(b for _, b in self.peaks)


def find_critical_points(curve: RevenueCurve) -> CriticalPointSequence:
    """Peaks (a_i, b_i) of f, then D_i = max(D_{i-1}, a_{i+1} − b_i) and J_i = b_i + D_{i-1}."""
    f = curve.values
    n = curve.n
    peaks: List[Tuple[int, int]] = []
    a = 1
    while True:
        b = a
        # plateaus and rises extend the current run
        while b < n and at_least(f[b], f[b - 1]):
            b += 1
        peaks.append((a, b))
        nxt: Optional[int] = None
        for l in range(b + 1, n + 1):
            if at_least(f[l - 1], f[b - 1]):
                nxt = l
                break
        if nxt is None:
            break
        a = nxt

    K = len(peaks)
    bounds = [0]
    for i in range(1, K):
        bounds.append(max(bounds[-1], peaks[i][0] - peaks[i - 1][1]))
    bounds.append(bounds[-1])  # D_K = D_{K-1}: the last phase is terminal
    thresholds = tuple(peaks[i - 1][1] + bounds[i - 1] for i in range(1, K + 1))
    logger.debug(f"critical points: peaks={peaks} D={bounds}")
    return CriticalPointSequence(tuple(peaks), tuple(bounds), thresholds)


# --------------------------------------------------------------------------- #
#  Generators                                                                 #
# --------------------------------------------------------------------------- #
def gen_spike(epsilon: float, count: int) -> BidProfile:
    """One bid of 1 plus ``count`` unit-demand bids of ``epsilon``."""
    if not 0 < epsilon < 1:
        raise InvalidConfig(f"spike epsilon must lie in (0, 1), got {epsilon}")
    if count < 1:
        raise InvalidConfig(f"spike count must be ≥ 1, got {count}")
    bidders = [Bidder("big", (1.0,))]
    bidders.extend(Bidder(f"small-{k:05d}", (float(epsilon),)) for k in range(count))
    return BidProfile(tuple(bidders))


def _deal_to_bidders(bids: List[float], num_bidders: int, rng) -> BidProfile:
    owners = rng.integers(0, num_bidders, size=len(bids))
    buckets: Dict[int, List[float]] = {}
    for bid, owner in zip(bids, owners):
        buckets.setdefault(int(owner), []).append(bid)
    return BidProfile(tuple(
        Bidder(f"bidder-{k:03d}", tuple(sorted(v, reverse=True))) for k, v in sorted(buckets.items())
    ))


def gen_multipeak(num_peaks: int, seed: int, max_attempts: int = 100) -> BidProfile:
    """Staircase of equal-bid blocks; every block boundary is a valley that later recovers."""
    if num_peaks < 1:
        raise InvalidConfig(f"num_peaks must be ≥ 1, got {num_peaks}")
    rng = derive_rng(seed, "gen-multipeak", num_peaks)
    for attempt in range(max_attempts):
        value = round(float(rng.uniform(5.0, 20.0)), 4)
        count = int(rng.integers(1, 4))
        bids: List[float] = [value] * count
        for _ in range(num_peaks - 1):
            ratio = float(rng.uniform(0.35, 0.45))
            slack = float(rng.uniform(0.05, 0.4))
            value = round(value * ratio, 4)
            target = math.ceil(count * (1 + slack) / ratio)
            bids.extend([value] * (target - count))
            count = target
        tail = int(rng.integers(0, min(5, 2 * count) + 1))
        bids.extend([round(value * 0.3, 4)] * tail)

        profile = _deal_to_bidders(bids, int(rng.integers(2, max(3, len(bids) // 2 + 1))), rng)
        cps = find_critical_points(build_revenue_curve(profile))
        if cps.K >= num_peaks:
            return profile
        logger.debug(f"gen_multipeak attempt {attempt} produced only {cps.K} peaks, retrying")
    raise InvariantViolation(f"could not build a {num_peaks}-peak instance in {max_attempts} attempts")


def gen_random_profile(num_bidders: int, max_bids_per_bidder: int, seed: int) -> BidProfile:
    if num_bidders < 1 or max_bids_per_bidder < 1:
        raise InvalidConfig("num_bidders and max_bids_per_bidder must both be ≥ 1")
    rng = derive_rng(seed, "gen-random")
    bidders = []
    for k in range(num_bidders):
        size = int(rng.integers(1, max_bids_per_bidder + 1))
        bids = sorted((round(float(x), 2) for x in rng.uniform(1.0, 100.0, size=size)), reverse=True)
        bidders.append(Bidder(f"bidder-{k:03d}", tuple(bids)))
    return BidProfile(tuple(bidders))


# --------------------------------------------------------------------------- #
#  File I/O                                                                   #
# --------------------------------------------------------------------------- #
def profile_to_json(profile: BidProfile) -> str:
    payload = {"bidders": [{"id": b.bidder_id, "bids": list(b.marginal_bids)} for b in profile.bidders]}
    return json.dumps(payload, indent=2)


def profile_from_json(text: str) -> BidProfile:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc

    if not isinstance(data, dict) or not isinstance(data.get("bidders"), list):
        raise ParseError("expected an object with a 'bidders' list", field="bidders")

    bidders = []
    for idx, entry in enumerate(data["bidders"]):
        where = f"bidders[{idx}]"
        if not isinstance(entry, dict):
            raise ParseError("bidder entry must be an object", field=where)
        if "id" not in entry or not isinstance(entry["id"], (str, int)):
            raise ParseError("bidder needs a string 'id'", field=f"{where}.id")
        bids = entry.get("bids")
        if not isinstance(bids, list):
            raise ParseError("bidder needs a 'bids' list", field=f"{where}.bids")
        for k, bid in enumerate(bids):
            if isinstance(bid, bool) or not isinstance(bid, (int, float, str)):
                raise ParseError("bid must be a number", field=f"{where}.bids[{k}]")
        bidders.append(Bidder(str(entry["id"]), tuple(bids)))

    if not bidders:
        raise EmptyInstance("instance file lists no bidders")
    return BidProfile(tuple(bidders))


def load_instance(path: Union[str, Path]) -> BidProfile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    profile = profile_from_json(text)
    logger.info(f"Loaded {len(profile)} bidders ({profile.total_bids} bids) from {path}")
    return profile


def save_instance(profile: BidProfile, path: Union[str, Path]) -> None:
    path = Path(path)
    path.write_text(profile_to_json(profile) + "\n", encoding="utf-8")
    logger.info(f"Saved {len(profile)} bidders to {path}")
