"""
Run configuration and the flat experiment manifest.

A manifest is `key = value` lines with one `[soliton.N]` block per soliton:

    p = 1
    t0 = 10
    final_times = 30, 40, 50

    [soliton.1]
    omega = -0.5
    x0 = -10

Blank lines and `#` comments are ignored. Values are parsed by the pydantic
model, so `final_times = 30, 40, 50` and `dealias = false` both work.
"""

import logging
import os
import re
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core.builder import ShootConfig
from .core.evolution import Direction, EvolveConfig
from .core.grid import Grid
from .core.solitons import Regime, SolitonFamily, SolitonParams
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_ROOT = "./runs"
_BLOCK = re.compile(r"^\[soliton\.(\d+)\]$")


def output_root() -> Path:
    return Path(os.environ.get("BLAB_OUTPUT_ROOT", DEFAULT_OUTPUT_ROOT))


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("BLAB_MAX_WORKERS", "1")))
    except ValueError:
        logger.warning(f"Ignoring non-integer BLAB_MAX_WORKERS={os.environ['BLAB_MAX_WORKERS']!r}")
        return 1


class SolitonEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega: float
    x0: float = 0.0


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "run"
    p: float = Field(gt=0)
    solitons: tuple[SolitonEntry, ...]
    half_length: Optional[float] = Field(default=None, gt=0)
    n_points: Optional[int] = Field(default=None, ge=16)
    dt: Optional[float] = Field(default=None, gt=0)
    dealias: bool = True
    checkpoint_stride: int = Field(default=10, ge=1)
    t_start: float = 0.0
    t_end: float = 20.0
    direction: Direction = Direction.FORWARD
    t0: float = 10.0
    final_times: tuple[float, ...] = (30.0, 40.0, 50.0)
    output_dir: Optional[str] = None
    seed: int = 0
    shoot_evaluations: int = Field(default=40, ge=2)
    shoot_seed_amplitude: float = Field(default=0.0, ge=0)

    @field_validator("final_times", mode="before")
    @classmethod
    def _split(cls, value):
        if isinstance(value, str):
            return tuple(float(v) for v in value.replace(",", " ").split())
        return value

    @model_validator(mode="after")
    def _consistent(self):
        # fail before any compute
        self.family()
        if any(b <= a for a, b in zip(self.final_times, self.final_times[1:])):
            raise ValueError(f"final_times must be strictly increasing, got {list(self.final_times)}")
        if self.final_times and not self.t0 < self.final_times[0]:
            raise ValueError(f"t0={self.t0} must precede the first final time {self.final_times[0]}")
        if (self.half_length is None) != (self.n_points is None):
            raise ValueError("half_length and n_points must be given together")
        return self

    @property
    def regime(self) -> Regime:
        return Regime.for_exponent(self.p)

    def family(self) -> SolitonFamily:
        return SolitonFamily(
            solitons=tuple(sorted(
                (SolitonParams(p=self.p, omega=s.omega, x0=s.x0) for s in self.solitons),
                key=lambda s: s.omega,
            ))
        )

    def grid(self, horizon: float = 0.0) -> Grid:
        if self.half_length is not None:
            return Grid(self.half_length, self.n_points)
        return self.family().grid(horizon=horizon)

    def evolve_config(self, t_end: Optional[float] = None, direction: Optional[Direction] = None) -> EvolveConfig:
        return EvolveConfig(
            t_end=self.t_end if t_end is None else t_end,
            nonlinearity_p=self.p,
            dt=self.dt,
            dealias=self.dealias,
            checkpoint_stride=self.checkpoint_stride,
            direction=direction or self.direction,
        )

    def shoot_config(self) -> ShootConfig:
        return ShootConfig(
            max_evaluations=self.shoot_evaluations,
            seed_amplitude=self.shoot_seed_amplitude,
            seed=self.seed,
        )

    def run_dir(self) -> Path:
        return Path(self.output_dir) if self.output_dir else output_root() / self.name


def _describe(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        where = ".".join(str(part) for part in error["loc"]) or "config"
        parts.append(f"{where}: {error['msg']}")
    return "; ".join(parts)


def build_config(values: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {_describe(e)}") from e
    except ValueError as e:
        raise ConfigError(f"invalid run configuration: {e}") from e


def parse_manifest(text: str) -> dict:
    """Raw key/value mapping of a manifest; soliton blocks become an ordered list."""
    values: dict = {}
    blocks: dict[int, dict] = {}
    current: Optional[dict] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        block = _BLOCK.match(line)
        if block:
            index = int(block.group(1))
            if index in blocks:
                raise ConfigError(f"line {number}: duplicate block [soliton.{index}]")
            current = blocks[index] = {}
            continue
        if line.startswith("["):
            raise ConfigError(f"line {number}: unknown block {line}")
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        target = values if current is None else current
        if key in target:
            raise ConfigError(f"line {number}: duplicate key {key!r}")
        target[key] = value
    if blocks:
        values["solitons"] = [blocks[i] for i in sorted(blocks)]
    return values


def load_manifest(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest {path} does not exist")
    values = parse_manifest(path.read_text())
    values.setdefault("name", path.stem)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values)


def dump_manifest(cfg: RunConfig) -> str:
    """Resolved manifest; load_manifest on the output reproduces cfg."""
    lines = []
    for key, value in cfg.model_dump(exclude={"solitons"}, mode="json").items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    for index, soliton in enumerate(cfg.solitons, start=1):
        lines += ["", f"[soliton.{index}]", f"omega = {soliton.omega!r}", f"x0 = {soliton.x0!r}"]
    return "\n".join(lines) + "\n"
