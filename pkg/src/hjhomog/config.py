"""Strict TOML experiment configuration."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ._hashing import digest


class ConfigError(ValueError):
    """Unreadable or invalid configuration; the message names the offending key."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AuditBlock(_Strict):
    budget: int = Field(1000, gt=0, le=10**6)
    seed: int = Field(0, ge=0)
    stationarity_tol: float = Field(1e-10, gt=0)
    convexity_tol: float = Field(1e-9, ge=0)


class MediumBlock(_Strict):
    kind: Literal["periodic", "quasi-periodic", "metric"]
    dim: int = Field(1, ge=1, le=2)
    potential: Optional[dict[str, Any]] = None
    kinetic: Optional[dict[str, Any]] = None
    alpha: Optional[list[float]] = None
    resonance_height: int = Field(10**6, ge=1)
    metric: Optional[dict[str, Any]] = None
    audit: AuditBlock = AuditBlock()

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "quasi-periodic":
            if not self.alpha:
                raise ValueError("quasi-periodic media need 'alpha'")
            if len(self.alpha) != self.dim:
                raise ValueError("'alpha' must have one entry per dimension")
        elif self.alpha is not None:
            raise ValueError("'alpha' is only meaningful for quasi-periodic media")
        if self.kind == "metric" and self.metric is None:
            raise ValueError("metric media need a 'metric' block")
        if self.kind != "metric" and self.metric is not None:
            raise ValueError("'metric' is only meaningful for metric media")
        return self


class LatticeBlock(_Strict):
    dx: float = Field(0.05, gt=0, le=1)
    dt: float = Field(0.05, gt=0, le=10)
    speed_cap: float = Field(4.0, gt=0, le=100)
    domain_radius: Optional[float] = Field(None, gt=0)


class ScheduleBlock(_Strict):
    horizons: list[int] = Field(default_factory=lambda: [4, 8, 16], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    eps: Optional[list[float]] = None
    base_points: Optional[list[list[float]]] = None

    @field_validator("horizons")
    @classmethod
    def _increasing(cls, v):
        if any(n <= 0 for n in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("horizons must be positive and strictly increasing")
        return v

    @field_validator("eps")
    @classmethod
    def _eps(cls, v):
        if v is not None:
            if not v or any(e <= 0 or e > 1 for e in v):
                raise ValueError("eps values must lie in (0, 1]")
            if any(b >= a for a, b in zip(v, v[1:])):
                raise ValueError("eps list must be strictly decreasing")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if any(s < 0 or s >= 2**64 for s in v):
            raise ValueError("seeds must be 64-bit unsigned integers")
        return v


class GridSpec(_Strict):
    radius: float = Field(gt=0)
    step: float = Field(gt=0)
    disc: bool = False


class KBlock(_Strict):
    h_box: list[list[float]] = Field(default_factory=lambda: [[-1.0, 1.0]])
    times: list[float] = Field(default_factory=lambda: [0.5, 0.75, 1.0], min_length=1)
    h_step: float = Field(0.125, gt=0)
    bases: list[list[float]] = Field(default_factory=lambda: [[0.25], [0.5]], min_length=1)

    @field_validator("times")
    @classmethod
    def _times(cls, v):
        if any(t <= 0 for t in v):
            raise ValueError("K times must be positive (t0 > 0)")
        return v


class GridsBlock(_Strict):
    directions: GridSpec = GridSpec(radius=2.5, step=0.0625)
    momenta: GridSpec = GridSpec(radius=2.0, step=0.0625)
    K: KBlock = KBlock()


class ConvergeBlock(_Strict):
    data: list[dict[str, Any]] = Field(default_factory=lambda: [{"preset": "zero"}], min_length=1)
    hopf_lax_step: float = Field(1.0 / 32, gt=0)


class StableNormBlock(_Strict):
    classes: list[list[int]] = Field(default_factory=lambda: [[1, 0], [0, 1], [1, 1]])
    schedule: list[int] = Field(default_factory=lambda: [2, 4, 8], min_length=1)
    resolution: int = Field(40, ge=4, le=400)
    reach: int = Field(2, ge=1, le=4)

    @field_validator("resolution")
    @classmethod
    def _quarter_cells(cls, v):
        # base points sit on a 4 x 4 grid in the unit cell and must be graph nodes
        if v % 4:
            raise ValueError("resolution must be a multiple of 4")
        return v


class TolerancesBlock(_Strict):
    unconverged_fraction: float = Field(0.1, gt=0)
    norm: float = Field(0.05, gt=0)
    homogeneity: float = Field(0.05, gt=0)
    agreement: float = Field(0.05, gt=0)


class OutputBlock(_Strict):
    dir: str = "hjhomog-out"


class ExperimentConfig(_Strict):
    medium: MediumBlock
    lattice: LatticeBlock = LatticeBlock()
    schedule: ScheduleBlock = ScheduleBlock()
    grids: GridsBlock = GridsBlock()
    converge: ConvergeBlock = ConvergeBlock()
    stable_norm: StableNormBlock = StableNormBlock()
    tolerances: TolerancesBlock = TolerancesBlock()
    output: OutputBlock = OutputBlock()


def _location(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(text: str, source: str = "<string>") -> tuple[ExperimentConfig, str, dict]:
    """Parse TOML text; returns the model, the content hash and the raw document."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: TOML syntax error: {exc}") from None
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = _location(err["loc"])
            if err["type"] == "extra_forbidden":
                lines.append(f"{source}: unknown key '{loc}'")
            elif err["type"] == "missing":
                lines.append(f"{source}: missing required key '{loc}'")
            else:
                lines.append(f"{source}: invalid value at '{loc}': {err['msg']}")
        raise ConfigError("\n".join(lines)) from None
    return cfg, digest(doc, 32), doc


def load_config(path) -> tuple[ExperimentConfig, str, dict]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, str(p))
