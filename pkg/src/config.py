"""
config.py – central place to pull run settings

Usage:
    from src.config import setting, RunConfig
    trials = setting("ALLOC_TRIALS", 100_000, cast=int)
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, TypeVar

from dotenv import load_dotenv

from src.errors import InvalidConfig

ROOT_DIR = Path(__file__).resolve().parent.parent

# a local .env never overrides variables already exported in the shell
load_dotenv(ROOT_DIR / ".env", override=False)

T = TypeVar("T")

STOCHASTIC_COMMANDS = frozenset({"simulate", "mechanism", "truthcheck"})
COMMANDS = frozenset({"analyze", "simulate", "mechanism", "mixed", "gen", "truthcheck"})
FORMATS = frozenset({"csv", "json"})
GENERATORS = frozenset({"multipeak", "random"})
PACINGS = frozenset({"cross", "own"})


def setting(key: str, default: Optional[T] = None, cast: Callable[[str], T] = str) -> T:
    """Look a setting up in the environment (after .env), falling back to ``default``."""
    raw = os.environ.get(key)
    if raw is None or raw == "":
        return default  # type: ignore[return-value]
    try:
        return cast(raw)
    except ValueError as exc:
        raise InvalidConfig(f"{key}={raw!r} is not a valid {getattr(cast, '__name__', cast)}") from exc


def default_trials() -> int:
    return setting("ALLOC_TRIALS", 100_000, cast=int)


def default_workers() -> int:
    return setting("ALLOC_WORKERS", 1, cast=int)


def rational_max_d() -> int:
    return setting("ALLOC_RATIONAL_MAX_D", 1000, cast=int)


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI command needs; built by ``src.cli`` and validated once."""

    command: str
    instance: Optional[Path] = None
    spike_eps: Optional[float] = None
    spike_count: int = 400
    generator: Optional[str] = None
    num_bidders: int = 20
    max_bids: int = 4
    num_peaks: int = 3
    m: Optional[int] = None
    m_max: Optional[int] = None
    trials: int = field(default_factory=default_trials)
    seed: Optional[int] = None
    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    delta: float = 0.05
    deviations: int = 1000
    p_single: float = 1 / 3
    pacing: str = "cross"
    workers: int = field(default_factory=default_workers)
    out: Optional[Path] = None
    fmt: str = "csv"
    check: bool = False

    @property
    def effective_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        if self.epsilon is not None:
            return self.epsilon / 8
        return 0.0125

    @property
    def effective_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 8 * self.effective_gamma

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise InvalidConfig(f"unknown command {self.command!r}")
        if self.fmt not in FORMATS:
            raise InvalidConfig(f"unknown format {self.fmt!r}; expected one of {sorted(FORMATS)}")
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise InvalidConfig(f"'{self.command}' is stochastic and needs --seed")
        if self.seed is not None and self.seed < 0:
            raise InvalidConfig("--seed must be a non-negative integer")

        for name in ("m", "m_max"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise InvalidConfig(f"--{name.replace('_', '-')} must be positive, got {value}")
        for name in ("trials", "workers", "deviations", "spike_count", "num_bidders", "max_bids", "num_peaks"):
            value = getattr(self, name)
            if value < 1:
                raise InvalidConfig(f"--{name.replace('_', '-')} must be positive, got {value}")

        if self.spike_eps is not None and not 0 < self.spike_eps < 1:
            raise InvalidConfig("--spike-eps must lie in (0, 1)")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise InvalidConfig("--epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise InvalidConfig("--delta must lie in (0, 1)")
        if not 0 <= self.effective_gamma < 1 / 6:
            raise InvalidConfig(f"gamma must lie in [0, 1/6), got {self.effective_gamma}")
        if not 0 <= self.p_single <= 1:
            raise InvalidConfig("--p-single must lie in [0, 1]")
        if self.pacing not in PACINGS:
            raise InvalidConfig(f"unknown pacing {self.pacing!r}; expected one of {sorted(PACINGS)}")
        if self.generator is not None:
            if self.generator not in GENERATORS:
                raise InvalidConfig(f"unknown generator {self.generator!r}; expected one of {sorted(GENERATORS)}")
            if self.seed is None:
                raise InvalidConfig(f"the {self.generator!r} generator needs --seed")
        sources = sum(x is not None for x in (self.instance, self.spike_eps, self.generator))
        if sources > 1:
            raise InvalidConfig("give only one of --instance, --spike-eps and --generator")
        if self.command == "gen" and self.instance is not None:
            raise InvalidConfig("'gen' builds an instance; use --spike-eps or --generator")
        return self

    def echo(self) -> dict:
        """The config as plain values, minus fields that must not change a report."""
        out = {k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(self).items()}
        out.pop("workers")
        out.pop("out")
        return out

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **changes).validate()
