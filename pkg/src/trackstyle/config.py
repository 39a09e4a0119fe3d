"""Pipeline configuration: one structured config with deterministic seeding.

All numeric defaults that have an established value (grid size, speed
threshold, margin, learning rate, batch size, ...) are pinned here so every
stage reads the same numbers. Randomness flows from one root seed through
named substreams, so stages can be rerun independently and reproducibly.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


def substream(seed: int, *names: object) -> np.random.Generator:
    """Deterministic named RNG substream of the root seed.

    Stream identity depends only on (seed, names), never on call order,
    so independent stages or entities get independent, reproducible draws.
    """
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass
class PitchConfig:
    length: float = 105.0
    width: float = 68.0

    def validate(self) -> None:
        if not (self.length > self.width > 0):
            raise ConfigError(f"pitch length must exceed width, both > 0 (got {self.length} x {self.width})")


@dataclass
class IngestConfig:
    smooth_window: int = 5       # moving-average window (samples) before differentiation
    max_gap: float = 0.5         # seconds; larger gaps split a series into runs
    min_phase: float = 600.0     # seconds; shorter phases are absorbed
    bounds_margin: float = 5.0   # meters beyond the pitch before a sample is discarded
    sample_dt: float = 0.1       # nominal 10 Hz sampling period

    def validate(self) -> None:
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError(f"smooth_window must be odd and >= 1 (got {self.smooth_window})")
        for name in ("max_gap", "min_phase", "bounds_margin", "sample_dt"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class RolesConfig:
    min_players: int = 8         # phases with fewer measured players are excluded
    max_iterations: int = 50
    change_tolerance: float = 0.005   # stop when < 0.5% of frame assignments change
    covariance_floor: float = 1.0     # m^2 eigenvalue floor on role covariances
    centroid_relative: bool = False   # fit roles relative to the per-frame team centroid
    silhouette_threshold: float = 0.6
    k_min: int = 2
    k_max: int = 4
    kmeans_restarts: int = 10

    def validate(self) -> None:
        if self.min_players < 2:
            raise ConfigError("min_players must be >= 2")
        if not (0 < self.change_tolerance < 1):
            raise ConfigError("change_tolerance must be in (0, 1)")
        if self.covariance_floor <= 0:
            raise ConfigError("covariance_floor must be positive")
        if not (2 <= self.k_min <= self.k_max):
            raise ConfigError(f"need 2 <= k_min <= k_max (got {self.k_min}..{self.k_max})")
        if not (-1.0 <= self.silhouette_threshold <= 1.0):
            raise ConfigError("silhouette_threshold must be in [-1, 1]")


@dataclass
class HeatmapConfig:
    rows: int = 35               # row index <-> y (or v_y)
    cols: int = 50               # column index <-> x (or v_x)
    speed_threshold: float = 4.0  # m/s; slower samples are left out of direction maps
    vx_bound: float = 12.0       # direction grid spans [-vx_bound, vx_bound]
    vy_bound: float = 8.0        # ... x [-vy_bound, vy_bound]
    test_min_phases: int = 20    # strictly more phases than this -> test entity
    test_sample: int = 10
    val_min_phases: int = 15     # strictly more remaining phases -> validation entity
    val_sample: int = 5
    augment_size: int = 3        # heatmaps accumulated per augmented sample
    augment_factor: int = 4      # random draws per training entity = factor * n_p

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.speed_threshold < 0 or self.vx_bound <= 0 or self.vy_bound <= 0:
            raise ConfigError("speed threshold must be >= 0 and velocity bounds positive")
        if self.augment_size < 1 or self.augment_factor < 1:
            raise ConfigError("augmentation parameters must be >= 1")
        if self.test_sample > self.test_min_phases or self.val_sample > self.val_min_phases:
            raise ConfigError("split sample sizes cannot exceed their phase-count thresholds")


@dataclass
class TrainConfig:
    margin: float = 0.1          # triplet hinge margin
    learning_rate: float = 0.05  # initial Adam learning rate
    lr_decay: float = 0.5        # multiplier applied at each triplet re-selection
    batch_size: int = 1000       # triplets per parameter update
    dropout: float = 0.25
    max_epochs_per_selection: int = 10
    candidates_per_identity: int = 5
    nearest_negatives: int = 10  # fallback pool when no negative violates the margin
    loss_patience: int = 1       # epochs without validation-loss improvement before re-selecting
    accuracy_patience: int = 1   # selections without validation-accuracy improvement before stopping
    min_improvement: float = 1e-4
    branch_dim: int = 10         # per-branch output; embedding is twice this
    bn_momentum: float = 0.1     # running-statistics update rate

    def validate(self) -> None:
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.learning_rate <= 0 or not (0 < self.lr_decay <= 1):
            raise ConfigError("learning_rate must be > 0 and lr_decay in (0, 1]")
        if self.batch_size < 1 or self.branch_dim < 1:
            raise ConfigError("batch_size and branch_dim must be >= 1")
        if not (0 <= self.dropout < 1):
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class IdentifyConfig:
    ridge: float = 1e-3          # added to the sample covariance diagonal
    diagonal_covariance: bool = False
    pairwise_lp: bool = False    # L^p baseline: mean pairwise distance instead of distance to centroid
    conditions: list[str] = field(default_factory=lambda: [
        "p10-L1", "p10-L2", "p10-AL", "p10-ATL75", "p10-ATL50",
        "p6-ATL25", "p8-ATL25", "p10-ATL25", "p10-ML",
    ])
    top_k: list[int] = field(default_factory=lambda: [1, 3, 5, 10])

    def validate(self) -> None:
        if self.ridge <= 0:
            raise ConfigError("ridge must be positive")
        for name in self.conditions:
            parse_condition(name)  # raises ConfigError on bad names


@dataclass
class LeagueConfig:
    """Synthetic league shape and style-separation knobs."""

    n_teams: int = 5
    players_per_team: int = 10   # equals the number of formation slots; all play every match
    matches_per_team: int = 7
    half_minutes: float = 24.0
    subs_per_half: int = 1       # substitution markers that cut each half into phases
    multi_role_players: int = 4  # players that alternate between two formation slots
    sample_hz: float = 10.0
    emit_geo: bool = False       # emit lat/lon columns instead of pitch x/y

    # Style separation: per-player home offset and movement character.
    home_offset_std: float = 2.5      # m; personal anchor offset from the slot home
    jitter_sigma: float = 2.2         # m; stationary std of within-role wandering
    jitter_theta: float = 0.35        # 1/s; wander mean-reversion rate
    centroid_sigma: float = 4.0       # m; team-block drift amplitude
    centroid_theta: float = 0.03      # 1/s
    sprint_rate_range: tuple[float, float] = (1 / 60.0, 1 / 25.0)  # sprints per second
    sprint_speed_range: tuple[float, float] = (5.0, 9.0)           # m/s peak speed means
    sprint_speed_std: float = 0.6
    sprint_duration_range: tuple[float, float] = (1.5, 3.5)        # seconds
    heading_kappa_range: tuple[float, float] = (2.0, 8.0)          # directional preference strength
    swap_slot_min_distance: float = 25.0  # m between the two slots of a multi-role player

    def validate(self) -> None:
        if self.n_teams < 2:
            raise ConfigError("need at least two teams")
        if self.players_per_team < 2:
            raise ConfigError("players_per_team must be >= 2")
        if self.multi_role_players > self.n_teams * self.players_per_team:
            raise ConfigError("more multi-role players than players")
        if self.half_minutes * 60 <= 0 or self.sample_hz <= 0:
            raise ConfigError("half_minutes and sample_hz must be positive")
        if self.subs_per_half < 0:
            raise ConfigError("subs_per_half must be >= 0")


@dataclass
class PipelineConfig:
    workdir: str = "work"
    seed: int = 20210905
    jobs: int = 0                # 0 = use the CPU count
    pitch: PitchConfig = field(default_factory=PitchConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    roles: RolesConfig = field(default_factory=RolesConfig)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    identify: IdentifyConfig = field(default_factory=IdentifyConfig)
    league: LeagueConfig = field(default_factory=LeagueConfig)

    def validate(self) -> None:
        if self.jobs < 0:
            raise ConfigError("jobs must be >= 0")
        for section in (self.pitch, self.ingest, self.roles, self.heatmap,
                        self.train, self.identify, self.league):
            section.validate()

    def rng(self, *names: object) -> np.random.Generator:
        return substream(self.seed, *names)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        cfg = cls()
        for f in dataclasses.fields(cls):
            if f.name not in raw:
                continue
            value = raw[f.name]
            current = getattr(cfg, f.name)
            if dataclasses.is_dataclass(current):
                unknown = set(value) - {g.name for g in dataclasses.fields(current)}
                if unknown:
                    raise ConfigError(f"unknown keys in config section '{f.name}': {sorted(unknown)}")
                for k, v in value.items():
                    if isinstance(getattr(current, k), tuple):
                        v = tuple(v)
                    setattr(current, k, v)
            else:
                setattr(cfg, f.name, value)
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        cfg.validate()
        return cfg


def parse_condition(name: str) -> tuple[int, str, float]:
    """Split a condition name like 'p10-ATL25' into (phases, kind, fraction).

    Kinds: 'L1'/'L2' (distance baselines), 'AL' (plain average log-likelihood),
    'ATL' (average top-m log-likelihood, fraction in percent), 'ML' (maximum).
    """
    try:
        phases_part, sim_part = name.split("-", 1)
        if not phases_part.startswith("p"):
            raise ValueError
        n_phases = int(phases_part[1:])
        if sim_part in ("L1", "L2"):
            return n_phases, sim_part, 0.0
        if sim_part == "AL":
            return n_phases, "ATL", 1.0
        if sim_part == "ML":
            return n_phases, "ML", 0.0
        if sim_part.startswith("ATL"):
            fraction = int(sim_part[3:]) / 100.0
            if not (0 < fraction <= 1):
                raise ValueError
            return n_phases, "ATL", fraction
        raise ValueError
    except ValueError:
        raise ConfigError(f"unrecognized identification condition '{name}'") from None
