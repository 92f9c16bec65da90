"""Pipeline configuration: one TOML document, one section per stage.

Every default lives in the dataclasses below; a config file only needs the
keys it changes. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from crowdrfm.fusion import FusionConfig
from crowdrfm.graph import SolverConfig
from crowdrfm.loopclosure import ClosureConfig
from crowdrfm.similarity import SimilarityConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Synthetic building, walkers and held-out queries."""

    seed: int = 7
    width: float = 100.0
    height: float = 50.0
    floors: int = 1
    n_aps_per_floor: int = 100
    tx_power: float = -40.0
    path_loss_exponent: float = 4.0
    shadowing_sigma: float = 4.0
    dropout_floor: float = -95.0
    d0: float = 1.0
    p_drop: float = 0.1
    floor_penalty: float = 15.0
    floor_height: float = 4.0
    n_traj: int = 40
    steps: int = 300
    step_len: float = 0.7
    turn_sigma_deg: float = 8.0
    position_sigma: float = 0.05
    heading_sigma_deg: float = 0.3
    max_bias_deg: float = 0.2
    rf_period: int = 4
    n_queries: int = 200

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scenario extent must be positive")
        if self.floors < 1 or self.n_aps_per_floor < 1:
            raise ValueError("floors and n_aps_per_floor must be >= 1")
        if self.n_traj < 1 or self.steps < 2 or self.rf_period < 1 or self.step_len <= 0:
            raise ValueError("n_traj >= 1, steps >= 2, rf_period >= 1, step_len > 0 required")
        if not 1.5 <= self.path_loss_exponent <= 6:
            raise ValueError("path_loss_exponent must lie in [1.5, 6]")
        if self.n_queries < 0:
            raise ValueError("n_queries must be >= 0")

    @property
    def trajectory_seed(self) -> int:
        return self.seed + 1

    @property
    def query_seed(self) -> int:
        return self.seed + 2


@dataclass(frozen=True)
class GeoModelConfig:
    n_bins: int = 20
    min_count: int = 30
    n_per_traj: int = 100
    method: str = "mle"
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("mle", "kde"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_bins < 2 or self.min_count < 1 or self.n_per_traj < 1:
            raise ValueError("n_bins >= 2, min_count >= 1 and n_per_traj >= 1 required")


@dataclass(frozen=True)
class PositioningConfig:
    k: int = 5
    weighted: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    geomodel: GeoModelConfig = field(default_factory=GeoModelConfig)
    closure: ClosureConfig = field(default_factory=ClosureConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    positioning: PositioningConfig = field(default_factory=PositioningConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def override(self, section: str, **values) -> PipelineConfig:
        """Copy with some keys of one section replaced (validated)."""
        current = getattr(self, section)
        try:
            return replace(self, **{section: replace(current, **values)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc


def from_dict(data: dict) -> PipelineConfig:
    base = PipelineConfig()
    sections = {f.name: f for f in fields(PipelineConfig)}
    built = {}
    for name, values in data.items():
        if name not in sections:
            raise ConfigError(f"unknown config section [{name}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        cls = type(getattr(base, name))
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
        try:
            built[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    return replace(base, **built)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return from_dict(data)
