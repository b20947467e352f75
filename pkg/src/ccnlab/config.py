"""Scenario configuration: one JSON file per scenario, validated before anything runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .orchestrator import STRATEGIES, CommitmentPlan, Fault, OfflineSchedule, PathError, PathSpec, PaymentRun
from .unlink import GameError, Traffic

PROTOCOLS = ("ccn", "htlc")
_TOP_LEVEL = {
    "name", "protocol", "seed", "path", "faults", "strategies", "watchers_per_chain", "appeal_window",
    "visibility_delay", "lock_delay", "start", "funding", "commitments", "horizon", "traffic",
}
_PATH_KEYS = {"chains", "parties", "amount", "rates", "drain_rates", "timelocks", "min_gap"}


class ConfigError(ValueError):
    pass


def _fraction(value: Any, where: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ConfigError(f"{where}: rates are integers or strings such as \"1/2\", got {value!r}")
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _int(value: Any, where: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}")
    return value


@dataclass
class ScenarioConfig:
    path: PathSpec
    name: str = "scenario"
    protocol: str = "ccn"
    seed: int = 0
    schedule: OfflineSchedule = field(default_factory=OfflineSchedule)
    strategies: dict[str, str] = field(default_factory=dict)
    watchers_per_chain: int = 1
    appeal_window: int = 10
    visibility_delay: int = 1
    lock_delay: int = 1
    start: int = 0
    funding: Optional[list[int]] = None
    commitments: list[CommitmentPlan] = field(default_factory=list)
    horizon: Optional[int] = None
    traffic: Traffic = field(default_factory=Traffic)

    # -- parsing -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - _TOP_LEVEL
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        raw = data.get("path")
        if not isinstance(raw, dict):
            raise ConfigError("missing 'path' object")
        missing = {"chains", "parties", "amount", "rates", "drain_rates", "timelocks"} - set(raw)
        if missing or set(raw) - _PATH_KEYS:
            raise ConfigError(f"path: missing {sorted(missing)}, unknown {sorted(set(raw) - _PATH_KEYS)}")
        for key in ("chains", "parties", "rates", "drain_rates", "timelocks"):
            if not isinstance(raw[key], list):
                raise ConfigError(f"path.{key} must be a list")
        path = PathSpec(
            chains=[str(c) for c in raw["chains"]],
            parties=[str(p) for p in raw["parties"]],
            amount=_int(raw["amount"], "path.amount", 1),
            rates=[_fraction(r, f"path.rates[{i}]") for i, r in enumerate(raw["rates"])],
            drain_rates=[_fraction(r, f"path.drain_rates[{i}]") for i, r in enumerate(raw["drain_rates"])],
            timelocks=[_int(t, f"path.timelocks[{i}]") for i, t in enumerate(raw["timelocks"])],
            min_gap=_int(raw.get("min_gap", 3), "path.min_gap"),
        )
        try:
            faults = [
                Fault(f["party"], f["trigger"], f.get("kind", "active"), f.get("duration"))
                for f in data.get("faults", [])
            ]
            commitments = [CommitmentPlan(c["hop"], c["rcv"], c["amount"], c["at"]) for c in data.get("commitments", [])]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed fault or commitment entry: {exc}") from None
        except PathError as exc:
            raise ConfigError(str(exc)) from None
        traffic_raw = data.get("traffic", {})
        try:
            traffic = Traffic(**{**traffic_raw, **({"value_range": tuple(traffic_raw["value_range"])}
                                                   if "value_range" in traffic_raw else {})})
        except (TypeError, GameError) as exc:
            raise ConfigError(f"traffic: {exc}") from None
        funding = data.get("funding")
        cfg = cls(
            path=path,
            name=str(data.get("name", "scenario")),
            protocol=data.get("protocol", "ccn"),
            seed=_int(data.get("seed", 0), "seed", 0),
            schedule=OfflineSchedule(faults),
            strategies=dict(data.get("strategies", {})),
            watchers_per_chain=_int(data.get("watchers_per_chain", 1), "watchers_per_chain", 0),
            appeal_window=_int(data.get("appeal_window", 10), "appeal_window", 1),
            visibility_delay=_int(data.get("visibility_delay", 1), "visibility_delay", 0),
            lock_delay=_int(data.get("lock_delay", 1), "lock_delay", 0),
            start=_int(data.get("start", 0), "start", 0),
            funding=[_int(f, "funding", 0) for f in funding] if funding is not None else None,
            commitments=commitments,
            horizon=_int(data["horizon"], "horizon", 1) if data.get("horizon") is not None else None,
            traffic=traffic,
        )
        return cfg.validate()

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def validate(self) -> "ScenarioConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        try:
            self.path.validate()
            self.schedule.validate(self.path)
        except PathError as exc:
            raise ConfigError(str(exc)) from None
        for name, s in self.strategies.items():
            if name not in self.path.parties[: self.path.n + 1]:
                raise ConfigError(f"strategy for {name!r}, which locks nothing on this path")
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if self.funding is not None and len(self.funding) != self.path.n + 1:
            raise ConfigError("funding needs one entry per locker")
        for c in self.commitments:
            if not 0 <= c.hop <= self.path.n:
                raise ConfigError(f"commitment on unknown hop {c.hop}")
        return self

    def with_overrides(self, *, seed: Optional[int] = None, protocol: Optional[str] = None) -> "ScenarioConfig":
        if seed is not None:
            self.seed = seed
        if protocol is not None:
            self.protocol = protocol
        return self.validate()

    def make_run(self) -> PaymentRun:
        return PaymentRun(
            self.path, self.schedule, self.strategies, protocol=self.protocol, seed=self.seed,
            watchers_per_chain=self.watchers_per_chain, appeal_window=self.appeal_window,
            visibility_delay=self.visibility_delay, lock_delay=self.lock_delay, start=self.start,
            funding=self.funding, commitments=self.commitments, horizon=self.horizon,
        )


def bundled(name: str) -> ScenarioConfig:
    """Load one of the scenarios shipped with the package (``walkthrough``, ``multihop``)."""
    ref = resources.files("ccnlab") / "scenarios" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"no bundled scenario {name!r}")
    return ScenarioConfig.from_dict(json.loads(ref.read_text()))
