"""Scenario files: JSON experiment configuration."""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt, ValidationError

from .protocol import DhtConfig
from .simnet import LatencyModel, RandomWalkConfig, Simulator


class ScenarioError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RandomWalkSettings(_Strict):
    enabled: bool = True
    interval_ms: PositiveInt = 300_000
    timeout_ms: PositiveInt = 10_000


class LatencySettings(_Strict):
    base_ms: PositiveInt = 10
    jitter_ms: NonNegativeInt = 5
    setup_ms: NonNegativeInt = 50


class Scenario(_Strict):
    kind: Literal["paper_testbed", "one_hour_refresh", "oracle_sweep", "custom"] = "custom"
    nodes: PositiveInt = 40
    k: PositiveInt = 20
    alpha: PositiveInt = 3
    max_buckets: int = Field(16, ge=1, le=256)
    refresh_interval_ms: PositiveInt = 600_000
    refresh_enabled: bool = True
    cleanup_interval_ms: PositiveInt = 3_600_000
    provider_ttl_ms: PositiveInt = 3_600_000
    query_timeout_ms: PositiveInt = 10_000
    early_exit: bool = True
    random_walk: RandomWalkSettings = Field(default_factory=RandomWalkSettings)
    latency: LatencySettings = Field(default_factory=LatencySettings)
    duration_ms: PositiveInt = 3_600_000
    seed: NonNegativeInt = 0
    content: str = "hello world!"
    id_difficulty: int = Field(0, ge=0, le=24)
    handshake_weight: NonNegativeInt = 10
    hash_weight: NonNegativeInt = 1
    sweep_sizes: List[PositiveInt] = Field(default_factory=lambda: [8, 16, 32, 64])
    sweep_targets: PositiveInt = 100

    def dht_config(self) -> DhtConfig:
        return DhtConfig(k=self.k, alpha=self.alpha, max_buckets=self.max_buckets,
                         provider_ttl_ms=self.provider_ttl_ms, cleanup_interval_ms=self.cleanup_interval_ms,
                         query_timeout_ms=self.query_timeout_ms, early_exit=self.early_exit)

    def simulator(self, seed: int | None = None, **overrides) -> Simulator:
        kwargs = dict(
            seed=self.seed if seed is None else seed,
            config=self.dht_config(),
            latency=LatencyModel(**self.latency.model_dump()),
            refresh_interval_ms=self.refresh_interval_ms,
            refresh_enabled=self.refresh_enabled,
            random_walk=RandomWalkConfig(**self.random_walk.model_dump()),
            id_difficulty=self.id_difficulty,
            handshake_weight=self.handshake_weight,
            hash_weight=self.hash_weight,
        )
        kwargs.update(overrides)
        return Simulator(**kwargs)


def load_scenario(source: Union[str, Path, dict], **overrides) -> Scenario:
    """Parse a scenario from a path or dict; keyword overrides win over file fields."""
    try:
        if isinstance(source, dict):
            data = dict(source)
        else:
            data = json.loads(Path(source).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {source}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc
