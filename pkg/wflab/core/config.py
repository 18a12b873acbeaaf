"""
Experiment configuration: TOML files validated into pydantic models.

Unknown keys are rejected, referenced files are resolved against the config
file's directory and must exist, and every validation failure surfaces as a
ConfigError naming the dotted field path (e.g. ``model.p``).
"""
import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from wflab.core.exceptions import ConfigError, InvalidStateError
from wflab.ldp.partitions import MeasureOnUnitInterval
from wflab.ldp.simplex import FitnessMatrix, ModelParams, SimplexPoint
from wflab.ldp.simulator import SimConfig

logger = logging.getLogger(__name__)

ExperimentKind = Literal[
    "equilibrium-scan",
    "simulate",
    "girsanov-check",
    "action",
    "minimize-action",
    "quasipotential",
    "partition-entropy",
    "tube-prob",
]

SIMPLEX_TOL = 1e-12


def _resolve_file(value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
    if value is None:
        return None
    base = (info.context or {}).get("base_dir")
    path = Path(value)
    if not path.is_absolute() and base is not None:
        path = Path(base) / path
    if not path.exists():
        raise ValueError(f"file {path} does not exist")
    return path


def _check_simplex(values: List[float]) -> List[float]:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        raise ValueError("needs at least 2 weights")
    if np.any(arr < 0.0):
        raise ValueError("weights must be non-negative")
    if abs(arr.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"weights sum to {arr.sum():.17g}, expected 1")
    return values


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentBlock(StrictModel):
    kind: ExperimentKind = Field(..., description="Experiment kind, one of the CLI subcommands")
    name: Optional[str] = Field(None, description="Free-form run label")
    seed: int = Field(0, ge=0, lt=2**64, description="Master seed")
    threads: Optional[int] = Field(None, ge=1, description="Worker threads")


class ModelBlock(StrictModel):
    n: int = Field(..., ge=2, description="Number of types")
    theta: float = Field(..., gt=0.0, description="Mutation intensity")
    p: List[float] = Field(..., description="Mutation center on the simplex")
    gamma: Optional[float] = Field(None, gt=0.0, description="Sampling rate")
    gammas: Optional[List[float]] = Field(None, description="Strictly decreasing sampling rates for sweeps")

    @field_validator("p")
    @classmethod
    def check_p(cls, value: List[float], info: ValidationInfo) -> List[float]:
        n = info.data.get("n")
        if n is not None and len(value) != n:
            raise ValueError(f"has {len(value)} weights, expected n={n}")
        return _check_simplex(value)

    @field_validator("gammas")
    @classmethod
    def check_gammas(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is None:
            return value
        if not value:
            raise ValueError("must not be empty")
        if any(g <= 0.0 for g in value):
            raise ValueError("must be positive")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("must be strictly decreasing")
        return value

    def params(self, gamma: Optional[float] = None) -> ModelParams:
        g = gamma if gamma is not None else (self.gamma if self.gamma is not None else 1.0)
        return ModelParams(self.theta, SimplexPoint(self.p), g)

    def require_gamma(self) -> float:
        if self.gamma is None:
            raise ConfigError("is required for this experiment", field="model.gamma")
        return self.gamma

    def gamma_list(self) -> List[float]:
        if self.gammas:
            return list(self.gammas)
        if self.gamma is not None:
            return [self.gamma]
        raise ConfigError("gamma or gammas is required", field="model.gamma")


class FitnessBlock(StrictModel):
    matrix: Optional[List[List[float]]] = Field(None, description="Symmetric fitness matrix V")
    file: Optional[Path] = Field(None, description="CSV file holding V")

    @field_validator("file")
    @classmethod
    def resolve_file(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve_file(value, info)

    @model_validator(mode="after")
    def exactly_one(self) -> "FitnessBlock":
        if (self.matrix is None) == (self.file is None):
            raise ValueError("give exactly one of matrix or file")
        return self

    def load(self) -> FitnessMatrix:
        entries = np.loadtxt(self.file, delimiter=",", ndmin=2) if self.file else np.asarray(self.matrix, dtype=float)
        try:
            return FitnessMatrix(entries)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="fitness.matrix" if self.matrix is not None else "fitness.file") from e


class SimBlock(StrictModel):
    dt: float = Field(1e-3, gt=0.0)
    t_end: float = Field(..., gt=0.0)
    trajectories: int = Field(1, ge=1)
    record_stride: int = Field(1, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64, description="Overrides experiment.seed")
    start: Optional[List[float]] = Field(None, description="Initial state, defaults to p")
    boundary_floor: float = Field(0.0, ge=0.0)
    zero_noise: bool = Field(False, description="Deterministic flow (epsilon = 0)")

    @field_validator("start")
    @classmethod
    def check_start(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        return None if value is None else _check_simplex(value)


class EventBlock(StrictModel):
    lower: Optional[List[float]] = Field(None, description="Box lower corner")
    upper: Optional[List[float]] = Field(None, description="Box upper corner")
    center: Optional[str] = Field(None, description="Tube center: CSV path, 'flow' or 'minimizer'")
    radius: Optional[float] = Field(None, gt=0.0, description="Tube sup-norm radius")

    @field_validator("center")
    @classmethod
    def check_center(cls, value: Optional[str], info: ValidationInfo) -> Optional[str]:
        if value is None or value in ("flow", "minimizer"):
            return value
        return str(_resolve_file(Path(value), info))

    @model_validator(mode="after")
    def box_or_tube(self) -> "EventBlock":
        box = self.lower is not None or self.upper is not None
        tube = self.center is not None or self.radius is not None
        if box and tube:
            raise ValueError("give either a box (lower, upper) or a tube (center, radius)")
        if box and (self.lower is None or self.upper is None):
            raise ValueError("a box needs both lower and upper")
        if tube and (self.center is None or self.radius is None):
            raise ValueError("a tube needs both center and radius")
        return self


class ScanBlock(StrictModel):
    mode: Literal["exact", "monte-carlo"] = "exact"
    samples: int = Field(100_000, ge=1)
    extrapolate: bool = True


class MinimizeBlock(StrictModel):
    start: Optional[List[float]] = Field(None, description="Defaults to the attractor")
    end: Optional[List[float]] = None
    horizon: float = Field(20.0, gt=0.0)
    knots: int = Field(256, ge=4)
    horizons: List[float] = Field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 20.0, 40.0])
    knots_per_time: int = Field(16, ge=1)
    max_iters: int = Field(50_000, ge=1)
    grad_tol: float = Field(1e-8, gt=0.0)
    init: Optional[Path] = Field(None, description="Initial path CSV")
    refine: bool = False
    oracle: bool = Field(True, description="Cross-check n=2 runs with the boundary-value solver")

    @field_validator("init")
    @classmethod
    def resolve_file(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve_file(value, info)

    @field_validator("start", "end")
    @classmethod
    def check_point(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        return None if value is None else _check_simplex(value)


class PathBlock(StrictModel):
    shape: Literal["file", "linear", "quadratic", "flow", "constant"] = "file"
    file: Optional[Path] = None
    start: Optional[List[float]] = None
    end: Optional[List[float]] = None
    horizon: float = Field(1.0, gt=0.0)
    knots: int = Field(64, ge=1)
    dyadic_levels: Optional[int] = Field(None, ge=1, description="Grade the grid toward the end time")
    per_level: int = Field(32, ge=1, description="Steps per dyadic level")

    @field_validator("file")
    @classmethod
    def resolve_file(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve_file(value, info)

    @field_validator("start", "end")
    @classmethod
    def check_point(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        return None if value is None else _check_simplex(value)

    @model_validator(mode="after")
    def check_shape(self) -> "PathBlock":
        if self.shape == "file" and self.file is None:
            raise ValueError("shape 'file' needs file")
        if self.shape in ("linear", "quadratic") and (self.start is None or self.end is None):
            raise ValueError(f"shape '{self.shape}' needs start and end")
        return self


class MeasureLiteral(StrictModel):
    atoms: List[List[float]] = Field(default_factory=list, description="[[location, mass], ...]")
    density: List[List[float]] = Field(default_factory=list, description="[[left, right, height], ...]")

    def build(self) -> MeasureOnUnitInterval:
        return MeasureOnUnitInterval.from_literal(self.atoms, self.density)


class PartitionBlock(StrictModel):
    mu: Optional[MeasureLiteral] = None
    nu: Optional[MeasureLiteral] = None
    nu0: Optional[MeasureLiteral] = None
    path: Optional[List[MeasureLiteral]] = None
    times: Optional[List[float]] = None
    breakpoints: Optional[List[List[float]]] = Field(None, description="Partitions to compare with their refinement")
    max_level: int = Field(12, ge=0, le=20)
    include_structural: bool = True

    @model_validator(mode="after")
    def check_pairs(self) -> "PartitionBlock":
        if (self.path is None) != (self.times is None):
            raise ValueError("path and times go together")
        if self.path is not None and len(self.path) != len(self.times):
            raise ValueError("path and times differ in length")
        return self


class OutputBlock(StrictModel):
    directory: Path = Field(Path("results"), description="Output directory")
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class ExperimentConfig(StrictModel):
    experiment: ExperimentBlock
    model: ModelBlock
    fitness: Optional[FitnessBlock] = None
    sim: Optional[SimBlock] = None
    event: Optional[EventBlock] = None
    scan: Optional[ScanBlock] = None
    minimize: Optional[MinimizeBlock] = None
    path: Optional[PathBlock] = None
    partition: Optional[PartitionBlock] = None
    output: OutputBlock = Field(default_factory=OutputBlock)

    @property
    def kind(self) -> str:
        return self.experiment.kind

    @property
    def seed(self) -> int:
        if self.sim is not None and self.sim.seed is not None:
            return self.sim.seed
        return self.experiment.seed

    def require(self, block: str):
        value = getattr(self, block)
        if value is None:
            raise ConfigError(f"[{block}] block is required for {self.kind}", field=block)
        return value

    def fitness_matrix(self) -> Optional[FitnessMatrix]:
        if self.fitness is None:
            return None
        V = self.fitness.load()
        if V.n != self.model.n:
            raise ConfigError(f"matrix is {V.n}x{V.n}, expected n={self.model.n}", field="fitness.matrix")
        return V

    def sim_config(self) -> SimConfig:
        sim = self.require("sim")
        try:
            return SimConfig(sim.t_end, sim.dt, sim.record_stride, sim.boundary_floor, self.seed, sim.zero_noise)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="sim") from e

    def point(self, values: Optional[List[float]], field: str, default: Optional[SimplexPoint] = None) -> SimplexPoint:
        if values is None:
            if default is None:
                raise ConfigError("is required", field=field)
            return default
        if len(values) != self.model.n:
            raise ConfigError(f"has {len(values)} weights, expected n={self.model.n}", field=field)
        return SimplexPoint(values)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[Path] = None,
                       threads: Optional[int] = None) -> "ExperimentConfig":
        update: Dict[str, Any] = {}
        experiment: Dict[str, Any] = {}
        if seed is not None:
            experiment["seed"] = seed
            if self.sim is not None:
                update["sim"] = self.sim.model_copy(update={"seed": None})
        if threads is not None:
            experiment["threads"] = threads
        if experiment:
            update["experiment"] = self.experiment.model_copy(update=experiment)
        if out is not None:
            update["output"] = self.output.model_copy(update={"directory": Path(out)})
        return self.model_copy(update=update)

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)


def _first_error(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or None
    message = first["msg"].removeprefix("Value error, ")
    return ConfigError(message, field=field)


def parse_config(data: Dict[str, Any], base_dir: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Validate a decoded config mapping; relative file references resolve against base_dir"""
    try:
        return ExperimentConfig.model_validate(data, context={"base_dir": base_dir})
    except ValidationError as e:
        raise _first_error(e) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    config = parse_config(data, base_dir=path.parent)
    logger.info(f"Loaded {config.kind} config from {path}")
    return config
