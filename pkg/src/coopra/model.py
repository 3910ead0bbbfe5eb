"""Domain types and configuration shared by every other module.

Everything here is an immutable value object.  Run-local mutable state lives
in :mod:`coopra.engine`.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

MODES = ("altruistic", "selfish")
PLACEMENTS = ("uniform", "cluster")
INITIAL_PARTITIONS = ("singletons", "grand")
POLICIES = ("noncooperative", "coalition", "fixed", "optimal")


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def free_space_constant(carrier_hz: float) -> float:
    """Path-loss constant at 1 m, (c / 4 pi f)^2."""
    return (299_792_458.0 / (4.0 * math.pi * carrier_hz)) ** 2


@dataclass(frozen=True)
class SystemConfig:
    """All scalar parameters of the model, SI units throughout.

    Defaults follow the single-cell setup (400 m square, 256 preambles,
    K = 30, T = 1 ms, 50-bit requests, p = 0.3, gamma = 0.2, 25 dBm cellular
    and 5 dBm short-range power, 15 kHz subcarriers, -170 dBm/Hz noise,
    path-loss exponent 2.5 at a 2 GHz carrier).
    """

    p: float = 0.3
    mu: int = 256
    K: int = 30
    T: float = 1e-3
    B: float = 50.0
    delta: float = 0.5
    horizon_eps: float = 1e-3
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.2
    P_LR: float = dbm_to_watts(25.0)
    P_SR: float = dbm_to_watts(5.0)
    B_z: float = 15e3
    N0: float = dbm_to_watts(-170.0)
    H0: float = free_space_constant(2e9)
    nu: float = 2.5
    cell_side: float = 400.0
    M: int = 200
    cluster_density: float = 5e-5
    cluster_sigma: float = 20.0
    placement: str = "cluster"
    mode: str = "altruistic"
    rng_seed: int = 1
    # joules -> value units (millijoules by default)
    energy_scale: float = 1e3
    # constant worst-case interference knob, watts
    interference: float = 0.0
    # None -> twice the all-singleton discounted energy
    E_max: float | None = None
    reform_period: int = 0
    initial: str = "singletons"
    policy: str = "coalition"
    slots: int = 100_000
    max_passes: int = 10_000
    ga_population: int = 100
    ga_generations: int = 300
    ga_crossover: float = 0.8
    ga_mutation: float = 0.02
    ga_tournament: int = 3

    def replace(self, **changes: Any) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SystemConfig":
        return cls(**{k: _coerce(k, v) for k, v in _normalize_keys(data).items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SystemConfig":
        return cls.from_dict(json.loads(text))

    @property
    def area(self) -> float:
        return self.cell_side**2

    def validate(self) -> list[str]:
        return validate_config(self)


_FIELDS = {f.name: f for f in dataclasses.fields(SystemConfig)}
_INT_FIELDS = {"mu", "K", "M", "rng_seed", "reform_period", "max_passes",
               "ga_population", "ga_generations", "ga_tournament", "slots"}
_STR_FIELDS = {"placement", "mode", "initial", "policy"}


def _normalize_keys(data: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in data.items():
        name = key.strip().replace(".", "_")
        if name not in _FIELDS:
            raise KeyError(f"unknown config key {key!r}")
        out[name] = value
    return out


def _coerce(name: str, value: Any) -> Any:
    if not isinstance(value, str):
        if name in _INT_FIELDS and isinstance(value, float) and value.is_integer():
            return int(value)
        return value
    text = value.strip()
    if name in _STR_FIELDS:
        return text
    if name == "E_max" and text.lower() in ("", "none", "auto"):
        return None
    if name in _INT_FIELDS:
        return int(float(text))
    return float(text)


def validate_config(cfg: SystemConfig) -> list[str]:
    """Return every violated invariant as ``"<field>: <message>"``; empty means ok."""
    errors = []
    if not 0.0 <= cfg.p <= 1.0:
        errors.append("p: p out of range")
    if not 0.0 <= cfg.delta < 1.0:
        errors.append("delta: delta out of range")
    if cfg.horizon_eps <= 0.0:
        errors.append("horizon_eps: must be positive")
    for name in ("mu", "K", "M"):
        if getattr(cfg, name) < 1:
            errors.append(f"{name}: must be >= 1")
    for name in ("P_LR", "P_SR", "B_z", "T", "B", "N0", "H0", "cell_side", "energy_scale"):
        if not getattr(cfg, name) > 0.0:
            errors.append(f"{name}: must be strictly positive")
    for name in ("alpha", "beta", "gamma", "interference", "cluster_sigma"):
        if getattr(cfg, name) < 0.0:
            errors.append(f"{name}: must be nonnegative")
    if cfg.alpha + cfg.beta <= 0.0:
        errors.append("alpha,beta: degenerate objective")
    if cfg.mode not in MODES:
        errors.append(f"mode: must be one of {MODES}")
    if cfg.placement not in PLACEMENTS:
        errors.append(f"placement: must be one of {PLACEMENTS}")
    if cfg.initial not in INITIAL_PARTITIONS:
        errors.append(f"initial: must be one of {INITIAL_PARTITIONS}")
    if cfg.placement == "cluster" and cfg.cluster_density <= 0.0:
        errors.append("cluster_density: must be positive in cluster mode")
    if cfg.E_max is not None and cfg.E_max <= 0.0:
        errors.append("E_max: must be positive")
    if cfg.policy not in POLICIES:
        errors.append(f"policy: must be one of {POLICIES}")
    if cfg.slots < 1:
        errors.append("slots: must be >= 1")
    if cfg.reform_period < 0:
        errors.append("reform_period: must be nonnegative")
    if cfg.max_passes < 1:
        errors.append("max_passes: must be >= 1")
    if not 0.0 <= cfg.ga_crossover <= 1.0 or not 0.0 <= cfg.ga_mutation <= 1.0:
        errors.append("ga: rates must lie in [0, 1]")
    if cfg.ga_population < 2 or cfg.ga_generations < 1 or cfg.ga_tournament < 1:
        errors.append("ga: population >= 2, generations >= 1, tournament >= 1")
    return errors


class ConfigError(ValueError):
    pass


def read_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat ``key = value`` file (``#`` comments, no sections)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    parser.read_string("[config]\n" + path.read_text())
    return dict(parser["config"])


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"bad override {item!r}, expected key=value")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path, overrides: Mapping[str, str] | None = None) -> SystemConfig:
    raw = read_config_file(path)
    raw.update(overrides or {})
    try:
        cfg = SystemConfig.from_dict(raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def write_config_file(cfg: SystemConfig, path: str | Path) -> None:
    lines = [f"{k} = {'none' if v is None else v}" for k, v in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class QueueState:
    length: float
    capacity: int

    def __post_init__(self):
        if not 0 <= self.length <= self.capacity:
            raise ValueError(f"queue length {self.length} outside [0, {self.capacity}]")


@dataclass(frozen=True)
class Mtd:
    id: int
    position: tuple[float, float]
    queue: QueueState
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None


@dataclass(frozen=True)
class Coalition:
    members: tuple[int, ...]
    queue: QueueState

    def __post_init__(self):
        if not self.members:
            raise ValueError("coalition must be nonempty")
        if tuple(sorted(set(self.members))) != self.members:
            raise ValueError("coalition members must be sorted and unique")

    @property
    def head(self) -> int:
        # lowest id acts as head; payoffs do not depend on head identity
        return self.members[0]

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def sched_weight(self) -> float:
        return 1.0 / len(self.members)

    @property
    def head_share(self) -> float:
        return 1.0 / len(self.members)


@dataclass(frozen=True)
class Partition:
    coalitions: tuple[Coalition, ...]
    slot: int = 0

    @property
    def heads(self) -> tuple[int, ...]:
        return tuple(c.head for c in self.coalitions)

    @property
    def queues(self) -> tuple[QueueState, ...]:
        return tuple(c.queue for c in self.coalitions)

    def groups(self) -> list[tuple[int, ...]]:
        return [c.members for c in self.coalitions]

    def coalition_of(self, m: int) -> int:
        for i, c in enumerate(self.coalitions):
            if m in c.members:
                return i
        raise KeyError(m)


class PartitionError(AssertionError):
    pass


def assert_partition(groups: Iterable[Iterable[int]], M: int) -> None:
    """Raise unless ``groups`` are pairwise disjoint, nonempty and cover ``range(M)``."""
    seen: set[int] = set()
    for g in groups:
        g = list(g)
        if not g:
            raise PartitionError("empty coalition")
        overlap = seen.intersection(g)
        if overlap or len(set(g)) != len(g):
            raise PartitionError(f"overlapping coalitions at {sorted(overlap)}")
        seen.update(g)
    if seen != set(range(M)):
        raise PartitionError(f"partition does not cover all MTDs: missing {sorted(set(range(M)) - seen)}")


def canonical_groups(groups: Iterable[Iterable[int]]) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted(tuple(sorted(g)) for g in groups))


def make_partition(groups: Iterable[Iterable[int]], member_queues: Sequence[float],
                   K: int, slot: int = 0) -> Partition:
    coalitions = []
    for g in canonical_groups(groups):
        q = min(float(sum(member_queues[m] for m in g)), K)
        coalitions.append(Coalition(g, QueueState(q, K)))
    return Partition(tuple(coalitions), slot)


def singletons(M: int) -> list[tuple[int, ...]]:
    return [(m,) for m in range(M)]


def grand_coalition(M: int) -> list[tuple[int, ...]]:
    return [tuple(range(M))]


@dataclass(frozen=True)
class GameState:
    """Coalition-formation state: the partition and the queues it carries.

    ``member_queues`` holds the per-MTD backlog; coalition queues are the
    member sums clamped at K.
    """

    partition: Partition
    queues: tuple[QueueState, ...]
    member_queues: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if len(self.queues) != len(self.partition.coalitions):
            raise ValueError("one queue per coalition required")

    @property
    def M(self) -> int:
        return sum(c.size for c in self.partition.coalitions)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[int]], member_queues: Sequence[float],
                    K: int, slot: int = 0) -> "GameState":
        part = make_partition(groups, member_queues, K, slot)
        assert_partition(part.groups(), len(member_queues))
        return cls(part, part.queues, tuple(float(q) for q in member_queues))

    def to_dict(self) -> dict[str, Any]:
        return {
            "slot": self.partition.slot,
            "coalitions": [
                {"members": list(c.members), "queue": c.queue.length, "capacity": c.queue.capacity}
                for c in self.partition.coalitions
            ],
            "queues": [[q.length, q.capacity] for q in self.queues],
            "member_queues": list(self.member_queues),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GameState":
        coalitions = tuple(
            Coalition(tuple(c["members"]), QueueState(c["queue"], c["capacity"]))
            for c in data["coalitions"]
        )
        part = Partition(coalitions, data["slot"])
        queues = tuple(QueueState(length, cap) for length, cap in data["queues"])
        return cls(part, queues, tuple(data["member_queues"]))
