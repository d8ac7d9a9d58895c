import math
from datetime import datetime
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from levelloop.config import OUTPUT_DIR, WORKERS
from levelloop.errors import ConfigError


class Estimate(BaseModel):
    value: float
    stderr: Optional[float] = None

    class Config:
        ser_json_inf_nan = "constants"


class GateResult(BaseModel):
    statistic: float
    p_value: Optional[float] = None
    passed: bool
    hard: bool = True

    class Config:
        ser_json_inf_nan = "constants"


class SeedRange(BaseModel):
    seed: int
    first_replica: int = 0
    count: int


class McReport(BaseModel):
    experiment_id: str
    anchor: str
    suite: Optional[str] = None
    estimates: dict[str, Estimate] = {}
    tests: dict[str, GateResult] = {}
    seeds: SeedRange
    runtime_s: float = 0.0
    engine_params: dict[str, float | int | str] = {}
    approximate: bool = False
    failures: dict[str, int] = {}
    notes: list[str] = []

    class Config:
        ser_json_inf_nan = "constants"

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests.values() if t.hard)

    def to_json_line(self, include_runtime: bool = False) -> str:
        exclude = None if include_runtime else {"runtime_s"}
        return self.model_dump_json(exclude=exclude)


class ExperimentConfig(BaseModel):
    seed: int = 20240601
    replicas: int = 1000
    r: float = 0.5
    step: float = 1e-4
    delta_touch: float = 1e-5
    delta_merge: float = 1e-4
    trace_tol: float = 1e-3
    output_dir: Path = Path(OUTPUT_DIR)
    workers: int = WORKERS
    tower_k_max: int = 6
    lattice_n: int = 128
    replica_overrides: dict[str, int] = {}

    @field_validator("replicas", "step", "delta_touch", "delta_merge", "trace_tol", "workers", "lattice_n")
    @classmethod
    def _positive(cls, value):
        if not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, value):
        if not 0 <= value < 2**64:
            raise ValueError("must be a 64-bit unsigned integer")
        return value

    @field_validator("r")
    @classmethod
    def _height_difference(cls, value):
        if not 0 < value < 1:
            raise ValueError("must lie in (0, 1)")
        return value

    @field_validator("tower_k_max")
    @classmethod
    def _tower_depth(cls, value):
        if not 2 <= value <= 8:
            raise ValueError("must lie in [2, 8]")
        return value

    @classmethod
    def build(cls, **values) -> "ExperimentConfig":
        """Validated construction; pydantic errors surface as ConfigError."""
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(str(e)) from e

    def replicas_for(self, experiment_id: str, default_share: float = 1.0) -> int:
        if experiment_id in self.replica_overrides:
            return self.replica_overrides[experiment_id]
        return max(int(self.replicas * default_share), 1)


def _finite(value):
    """NaN and infinities become None so the payload stays strict JSON."""
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class ReportRead(BaseModel):
    id: int
    run_id: Optional[int] = None
    experiment_id: str
    suite: Optional[str] = None
    anchor: str
    passed: bool
    approximate: bool
    seed: int
    first_replica: int
    replica_count: int
    runtime_s: Optional[float] = None
    payload: dict
    created_at: datetime

    @field_validator("payload")
    @classmethod
    def _json_safe(cls, value):
        return _finite(value)

    class Config:
        from_attributes = True


class RunCreate(BaseModel):
    suite: str
    seed: int
    config: dict


class RunRead(RunCreate):
    id: int
    started_at: datetime
    finished_at: Optional[datetime] = None
    exit_code: Optional[int] = None

    class Config:
        from_attributes = True


class RunWithReports(RunRead):
    reports: list[ReportRead] = []


class ExperimentRead(BaseModel):
    experiment_id: str
    suite: str
    anchor: str
    gate: str


class SequenceRecord(BaseModel):
    r: float
    heights: list[float]
    orientations: list[str]
    log_cr: list[float]
    transition_indices: list[int]
    frame: str = "disk"


class TowerRecord(BaseModel):
    k: list[int]
    N: list[int] = Field(default_factory=list)
    tau: list[float]
    log_cr: list[list[float]]
