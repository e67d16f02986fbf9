"""Run configuration: schema, loading and construction of model objects."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .forward import DiffusionFunction, default_dt
from .lattice import (
    Torus,
    WalkKernel,
    drifted_2d,
    kernel_from_literal,
    point_mass,
    power_law_1d,
    simple_walk,
)
from .seedbank import Asymptotic, Explicit, SeedBankSpec, Single
from .system import SeedBankSystem

EXPERIMENTS = (
    "simulate-forward",
    "simulate-dual",
    "check-duality",
    "classify",
    "tau-tail",
    "coalescence-prob",
    "ibm-fw",
    "ibm-moran",
)


class ConfigError(Exception):
    """Raised for unreadable or invalid configuration files."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Geometry(_Strict):
    d: int = Field(1, ge=1, le=3)
    L: int = Field(8, ge=1)


class KernelConfig(_Strict):
    type: Literal["simple", "drifted", "power_law", "point_mass", "literal"] = "simple"
    rate: float = Field(1.0, gt=0)
    eta: float = Field(0.0, ge=0, lt=1)
    delta: float = Field(2.0, gt=1)
    offsets: Optional[list[tuple[Union[int, list[int]], float]]] = None
    normalized: bool = False

    @model_validator(mode="after")
    def _literal_needs_offsets(self):
        if self.type == "literal" and not self.offsets:
            raise ValueError("literal kernel needs a nonempty 'offsets' list")
        return self

    def build(self, torus: Torus) -> WalkKernel:
        if self.type == "simple":
            return simple_walk(torus, self.rate)
        if self.type == "drifted":
            return drifted_2d(torus, self.eta)
        if self.type == "power_law":
            return power_law_1d(torus, self.delta)
        if self.type == "point_mass":
            return point_mass(torus)
        return kernel_from_literal(torus, self.offsets, self.normalized)


def _positive(values, name: str):
    vals = values if isinstance(values, list) else [values]
    for v in vals:
        if v is not None and not (v > 0 and np.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {v}")
    return values


class SeedBankConfig(_Strict):
    type: Literal["single", "explicit", "asymptotic"] = "single"
    K: Optional[Union[float, list[float]]] = None
    e: Optional[Union[float, list[float]]] = None
    A: Optional[float] = None
    alpha: Optional[float] = None
    B: Optional[float] = None
    beta: Optional[float] = None
    M: Optional[int] = Field(1000, ge=1)

    @field_validator("K", "e", "A", "B")
    @classmethod
    def _pos(cls, v, info):
        return _positive(v, info.field_name)

    @model_validator(mode="after")
    def _complete(self):
        need = {"single": ("K", "e"), "explicit": ("K", "e"),
                "asymptotic": ("A", "alpha", "B", "beta")}[self.type]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.type} seed-bank needs {', '.join(missing)}")
        if self.type == "asymptotic" and not self.alpha + self.beta > 1:
            raise ValueError(
                "alpha + beta must exceed 1 so that chi = sum K_m e_m is finite"
            )
        if self.type == "explicit":
            K = self.K if isinstance(self.K, list) else [self.K]
            e = self.e if isinstance(self.e, list) else [self.e]
            if len(K) != len(e):
                raise ValueError("explicit seed-bank needs K and e of equal length")
        return self

    def build(self) -> SeedBankSpec:
        if self.type == "single":
            if isinstance(self.K, list) or isinstance(self.e, list):
                raise ValueError("single seed-bank takes scalar K and e")
            return Single(float(self.K), float(self.e))
        if self.type == "explicit":
            K = self.K if isinstance(self.K, list) else [self.K]
            e = self.e if isinstance(self.e, list) else [self.e]
            return Explicit(tuple(map(float, K)), tuple(map(float, e)))
        return Asymptotic(self.A, self.alpha, self.B, self.beta, self.M)


class DiffusionConfig(_Strict):
    type: Literal["fisher_wright", "kimura_ohta"] = "fisher_wright"
    d: float = Field(1.0, gt=0)

    def build(self) -> DiffusionFunction:
        if self.type == "fisher_wright":
            return DiffusionFunction.fisher_wright(self.d)
        return DiffusionFunction.kimura_ohta(self.d)


class Numerics(_Strict):
    dt: Optional[float] = Field(None, gt=0)
    t_end: float = Field(1.0, gt=0)
    output_times: Optional[list[float]] = None
    t_max: float = Field(1e6, gt=1)
    boundary_tol: float = Field(0.02, gt=0)

    @field_validator("output_times")
    @classmethod
    def _increasing(cls, v):
        if v is not None and (not v or any(b <= a for a, b in zip(v, v[1:])) or v[0] < 0):
            raise ValueError("output_times must be a nonempty increasing list of t >= 0")
        return v

    def times(self) -> list[float]:
        return self.output_times if self.output_times is not None else [self.t_end]


class InitialConfig(_Strict):
    type: Literal["constant", "uniform"] = "constant"
    x: float = Field(0.5, ge=0, le=1)
    y: Union[float, list[float]] = 0.5


Site = tuple[int, int]  # (site, layer); layer 0 active, 1 + m dormant colour m


class DualSection(_Strict):
    lineages: list[Site] = [(0, 0), (0, 0)]
    coalescence_d: Optional[float] = Field(None, gt=0)


class CoalescenceSection(_Strict):
    start: tuple[Site, Site] = ((0, 0), (1, 0))
    horizons: list[float] = [100.0, 1000.0]


class DualitySection(_Strict):
    specs: list[dict[str, int]] = [{"0,0": 2}, {"0,0": 1, "1,0": 1}]
    degree_cap: int = Field(4, ge=1)


class ClassifySection(_Strict):
    slow_log_power: Optional[float] = None


class TauSection(_Strict):
    samples: int = Field(1_000_000, ge=1)
    decades: float = Field(2.0, gt=0)


class IbmFwSection(_Strict):
    N_sweep: list[int] = [50, 100, 200, 400]
    t: float = Field(0.25, gt=0)
    K: float = Field(1.0, gt=0)
    c: int = Field(1, ge=0)
    x0: float = Field(0.8, ge=0, le=1)
    y0: float = Field(0.2, ge=0, le=1)
    reference_replicas: Optional[int] = Field(None, ge=1)


class IbmMoranSection(_Strict):
    cA: list[float] = [1.0]
    cD: list[float] = [1.0]
    N: int = Field(200, ge=2)
    x0: float = Field(0.5, ge=0, le=1)
    y0: list[float] = [0.5]


class RunConfig(_Strict):
    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    seed: int = Field(ge=0)
    out: str = "results"
    geometry: Geometry = Geometry()
    model: Literal[1, 2, 3] = 1
    kernel: KernelConfig = KernelConfig()
    displacement: Optional[Union[KernelConfig, list[KernelConfig]]] = None
    seedbank: SeedBankConfig = SeedBankConfig(K=1.0, e=1.0)
    diffusion: DiffusionConfig = DiffusionConfig()
    numerics: Numerics = Numerics()
    replicas: int = Field(1000, ge=1)
    initial: InitialConfig = InitialConfig()
    dual: DualSection = DualSection()
    coalescence: CoalescenceSection = CoalescenceSection()
    duality: DualitySection = DualitySection()
    classify: ClassifySection = ClassifySection()
    tau: TauSection = TauSection()
    ibm_fw: IbmFwSection = IbmFwSection()
    ibm_moran: IbmMoranSection = IbmMoranSection()

    def torus(self) -> Torus:
        return Torus(self.geometry.d, self.geometry.L)

    def system(self) -> SeedBankSystem:
        torus = self.torus()
        disp = None
        if self.displacement is not None:
            disp = (tuple(k.build(torus) for k in self.displacement)
                    if isinstance(self.displacement, list) else self.displacement.build(torus))
        return SeedBankSystem(self.model, self.kernel.build(torus), self.seedbank.build(), disp)


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        lines.append(f"{loc or '<root>'}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: Any, seed: int | None = None, out: str | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of sections")
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_validation(err)) from None
    return resolve_defaults(cfg)


def resolve_defaults(cfg: RunConfig) -> RunConfig:
    """Check that model objects can be built and fill dt from the forward stability rule."""
    uses_system = ("simulate-forward", "simulate-dual", "check-duality", "coalescence-prob")
    try:
        if cfg.experiment in uses_system:
            system = cfg.system()
        elif cfg.experiment in ("classify", "tau-tail"):
            cfg.seedbank.build()
            cfg.kernel.build(cfg.torus())
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg.numerics.dt is not None or cfg.experiment not in ("simulate-forward", "check-duality"):
        return cfg
    dt = default_dt(system, cfg.diffusion.build())
    return cfg.model_copy(update={"numerics": cfg.numerics.model_copy(update={"dt": dt})})


def load_config(path: str | Path, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Read a YAML or JSON file, validate it and fill defaults."""
    p = Path(path)
    text = p.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"{p}:{mark.line + 1}:{mark.column + 1}" if mark is not None else str(p)
        problem = getattr(err, "problem", None) or str(err)
        raise ConfigError(f"{where}: {problem}") from None
    return parse_config(data, seed, out)
