"""Versioned YAML pipeline configuration."""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .estimators import DEFAULT_TRIPLES, MultiQuantileConfig, QuantileTriple
from .heston import FULL_REPS, FULL_Z_GRID, ExperimentSpec, parse_delta
from .monitor import GateConfig
from .returns import PROFILES, FilterRules, SessionSpec

SCHEMA_VERSION = 1
DEFAULT_WINDOW_K = {"cn": 123, "us": 126}


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SessionModel(_Model):
    timezone: str
    sessions: list[tuple[str, str]]
    bar_minutes: int = 10


class FilterModel(_Model):
    max_consecutive_missing: int = Field(3, ge=0)
    max_flat_minutes: int = Field(30, ge=1)
    min_active_minutes: int = Field(90, ge=0)


class ReturnsModel(_Model):
    realized_window: int = Field(500, ge=2)
    periodicity: bool = True


class WindowModel(_Model):
    block_span_days: int = Field(2, ge=1)
    k: Optional[int] = Field(None, ge=30)
    step_days: int = Field(2, ge=1)


class EstimatorModel(_Model):
    triples: list[tuple[float, float, float]] = Field(
        default_factory=lambda: [t.levels for t in DEFAULT_TRIPLES]
    )
    weight_mode: Literal["optimized", "uniform"] = "optimized"


class GateModel(_Model):
    ks_threshold: float = Field(0.05, gt=0, lt=1)
    mpi_threshold: float = Field(1e-4, gt=0, lt=1)
    ks_mode: Literal["two_sample", "one_sample"] = "two_sample"
    reference_factor: int = Field(10, ge=1)


class VarModel(_Model):
    level: float = Field(0.99, gt=0.5, lt=1)
    gp_threshold_quantile: float = Field(0.9, gt=0, lt=1)
    normal_input: Literal["maxima", "raw"] = "maxima"


class BacktestModel(_Model):
    period_days: int = Field(22, ge=1)
    position_reduction: bool = False
    transaction_cost: float = Field(0.0, ge=0, lt=1)


class HestonModel(_Model):
    zs: list[float] = Field(default_factory=lambda: [0.55, 3.0])
    deltas: list[str] = Field(default_factory=lambda: ["1/240", "1/48", "1/24"])
    reps: int = Field(20, ge=1)
    epsilon: str = "1/14400"
    horizon_T: float = Field(896.0, gt=0)
    rho: float = Field(0.0, ge=-1, le=1)
    block_duration: int = Field(2, ge=1)
    window_k: int = Field(123, ge=30)

    @field_validator("deltas", mode="before")
    @classmethod
    def _deltas(cls, v):
        return [str(x) for x in v]

    @field_validator("epsilon", mode="before")
    @classmethod
    def _eps(cls, v):
        return str(v)

    @field_validator("zs")
    @classmethod
    def _feller(cls, v):
        bad = [z for z in v if not z > 0.5]
        if bad:
            raise ValueError(f"z values {bad} violate the Feller condition z > 1/2")
        return v


class ChangepointModel(_Model):
    hazard_lambda: float = Field(250.0, gt=0)
    thin: int = Field(10, ge=1)
    confirm: int = Field(10, ge=0)


class PipelineConfig(_Model):
    schema_version: int = SCHEMA_VERSION
    profile: Literal["cn", "us", "custom"] = "cn"
    session: Optional[SessionModel] = None
    seed: int = 2024
    filters: FilterModel = Field(default_factory=FilterModel)
    returns: ReturnsModel = Field(default_factory=ReturnsModel)
    window: WindowModel = Field(default_factory=WindowModel)
    estimator: EstimatorModel = Field(default_factory=EstimatorModel)
    gates: GateModel = Field(default_factory=GateModel)
    var: VarModel = Field(default_factory=VarModel)
    backtest: BacktestModel = Field(default_factory=BacktestModel)
    heston: HestonModel = Field(default_factory=HestonModel)
    changepoint: ChangepointModel = Field(default_factory=ChangepointModel)

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}")
        if self.profile == "custom" and self.session is None:
            raise ValueError("profile 'custom' requires a session block")
        if self.profile != "custom" and self.session is not None:
            raise ValueError(f"profile {self.profile!r} fixes the session; use profile 'custom' to override")
        if self.window.step_days % self.window.block_span_days:
            raise ValueError("step_days must be a multiple of block_span_days")
        return self

    # --- derived runtime objects

    def session_spec(self) -> SessionSpec:
        try:
            if self.profile == "custom":
                s = self.session
                return SessionSpec(s.timezone, tuple(map(tuple, s.sessions)), s.bar_minutes)
            return PROFILES[self.profile]
        except Exception as exc:
            raise ConfigError(f"invalid session: {exc}") from exc

    @property
    def window_k(self) -> int:
        return self.window.k or DEFAULT_WINDOW_K.get(self.profile, 123)

    def filter_rules(self) -> FilterRules:
        f = self.filters
        return FilterRules(f.max_consecutive_missing, f.max_flat_minutes, f.min_active_minutes)

    def estimator_config(self) -> MultiQuantileConfig:
        try:
            ts = tuple(QuantileTriple(*t) for t in self.estimator.triples)
            return MultiQuantileConfig(ts, self.estimator.weight_mode)
        except Exception as exc:
            raise ConfigError(f"invalid quantile triples: {exc}") from exc

    def gate_config(self) -> GateConfig:
        g = self.gates
        return GateConfig(g.ks_threshold, g.mpi_threshold, g.ks_mode, g.reference_factor)

    def experiment_spec(self, full: bool = False) -> ExperimentSpec:
        h = self.heston
        try:
            return ExperimentSpec(
                zs=FULL_Z_GRID if full else tuple(h.zs),
                deltas=tuple(parse_delta(d) for d in h.deltas),
                reps=FULL_REPS if full else h.reps,
                seed=self.seed,
                epsilon=parse_delta(h.epsilon),
                horizon_T=h.horizon_T,
                rho=h.rho,
                block_duration=h.block_duration,
                window_k=h.window_k,
                var_level=self.var.level,
                estimator=self.estimator_config(),
                gate=self.gate_config(),
            )
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(str(exc)) from exc

    def dump(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def _fraction_ok(s: str) -> None:
    Fraction(s)


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Parse a YAML config (or defaults when ``path`` is None); errors become ConfigError."""
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
            data = yaml.safe_load(text) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = PipelineConfig.model_validate(data)
        for d in cfg.heston.deltas + [cfg.heston.epsilon]:
            _fraction_ok(d)
    except (ValidationError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg
