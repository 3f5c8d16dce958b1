"""Scenario configuration and the common result shape."""

from __future__ import annotations

from dataclasses import dataclass, field

SCENARIOS = ("pingpong", "burst", "offload", "statecheck")
VARIANTS = ("continuations", "activeset", "groups")
TRANSPORTS = ("loopback", "tcp")

#: Every CSV row starts with this schema version.
CSV_SCHEMA = 1


class ConfigError(ValueError):
    """Invalid scenario configuration (CLI exit code 3)."""


@dataclass
class ScenarioConfig:
    scenario: str = "pingpong"
    world_size: int = 2
    transport: str = "loopback"
    roster: str | None = None
    seed: int = 1
    iterations: int = 100
    variant: str = "continuations"
    k: int = 32                      # active-set capacity / group poll width
    max_poll: int = -1
    poll_only: bool = False
    enqueue_complete: bool = False
    message_size: int = 64
    recv_capacity: int | None = None
    senders: int | None = None       # burst: flooding senders (default 4*k)
    workers: int = 1                 # offload: per-rank cost units per tick
    imbalance: float = 1.0           # offload: rank-0 load multiplier
    tasks_per_rank: int = 16
    base_cost: int = 8               # offload: mean task cost in ticks
    gain: float = 0.1                # offload: diffusive budget gain
    emergency_threshold: int = 500   # offload: ticks before a victim is late
    blacklist_window: int = 10       # offload: iterations a victim sits out
    slow_victim: int | None = None   # offload: rank with slowed stolen tasks
    slow_factor: float = 1.0
    csv_path: str | None = None

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.world_size < 1:
            raise ConfigError("world size must be >= 1")
        if self.scenario in ("pingpong",) and self.world_size < 2:
            raise ConfigError("pingpong needs a world of at least 2")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.k < 1:
            raise ConfigError("K must be >= 1")
        if self.max_poll < -1:
            raise ConfigError("max-poll must be >= -1")
        if self.message_size < 0:
            raise ConfigError("message size must be >= 0")
        if self.imbalance < 1.0:
            raise ConfigError("imbalance must be >= 1.0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.slow_victim is not None and not 0 <= self.slow_victim < self.world_size:
            raise ConfigError("slow-victim must be a valid rank")
        if self.slow_factor < 1.0:
            raise ConfigError("slow-factor must be >= 1.0")


@dataclass
class ScenarioResult:
    header: list[str]
    rows: list[tuple]
    ok: bool = True
    summary: str = ""
    details: dict = field(default_factory=dict)
