"""Experiment configuration: a YAML tree validated with pydantic.

Every validation problem is collected and raised together as a
:class:`SchemaError` whose entries carry the dotted path of the field.

Grammar (all sections except ``mc.seed`` have defaults)::

    manifold:            # one spec or a list of specs
      name: sphere       # euclidean | sphere | hyperbolic | brf_sphere
      params: {radius: 1.0}
    generator:
      kind: zero         # zero | gradient | coefficients
      potential: quadratic      # gradient only: linear | quadratic
      params: {strength: 1.0}   # gradient only
      coefficients: [0.1, 0.0]  # coefficients only (constant chart field)
    grid: {t_end: 0.5, n_steps: 500}
    start: [1.5707963, 0.0]     # base point for simulate / transport / coupling
    family:
      u0: 0.3
      alpha: 0.01
      du: 0.001
      u_grid_size: 3            # evaluation points u_j = j u0 / size
      alphas: [0.1, 0.05]       # alpha-convergence study (optional)
      refinements: 0            # extra joint halvings of dt, alpha, du
      curve: {kind: geodesic, start: [...], direction: [...]}
    coupling: {separation: 0.5, direction: [0.0, 1.0]}
    ot:
      N: 32
      p: 2
      profiles: [power_2]
      report_times: [0.1, 0.2, 0.3]
      mu: {center: [...], spread: 0.15}
      nu_offset: [0.3, 0.6]     # nu = mu translated in chart coordinates
    mc: {n_paths: 100, seed: 1, n_seeds: 1, threads: 1}
    output: {directory: runs, formats: [csv, json]}
    checks: {...}               # thresholds; absent keys are not asserted
"""
from __future__ import annotations

import hashlib
import json
import warnings
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import SchemaError
from .geometry import MANIFOLD_NAMES, POTENTIALS


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ManifoldSpec(_Strict):
    name: str
    params: dict = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in MANIFOLD_NAMES:
            raise ValueError(f"unknown manifold {v!r}; expected one of {', '.join(MANIFOLD_NAMES)}")
        return v


class GeneratorSpec(_Strict):
    kind: Literal["zero", "gradient", "coefficients"] = "zero"
    potential: Optional[str] = None
    params: dict = Field(default_factory=dict)
    coefficients: Optional[List[float]] = None

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "gradient" and self.potential not in POTENTIALS:
            raise ValueError(f"gradient drift needs potential in {sorted(POTENTIALS)}")
        if self.kind == "coefficients" and not self.coefficients:
            raise ValueError("coefficients drift needs a non-empty 'coefficients' list")
        return self


class GridSpec(_Strict):
    t_end: float = Field(0.5, gt=0)
    n_steps: int = Field(500, gt=0)


class CurveSpec(_Strict):
    kind: Literal["geodesic", "line"] = "geodesic"
    start: Optional[List[float]] = None
    direction: Optional[List[float]] = None


class FamilySpec(_Strict):
    u0: float = Field(0.3, gt=0)
    alpha: float = Field(0.01, gt=0)
    du: float = Field(1e-3, gt=0)
    u_grid_size: int = Field(3, ge=1)
    alphas: Optional[List[float]] = None
    refinements: int = Field(0, ge=0)
    curve: CurveSpec = Field(default_factory=CurveSpec)

    @field_validator("alphas")
    @classmethod
    def _positive(cls, v):
        if v is not None and (len(v) < 2 or any(a <= 0 for a in v)):
            raise ValueError("alphas needs at least two positive values")
        return v


class CouplingSpec(_Strict):
    separation: float = Field(0.5, gt=0)
    direction: Optional[List[float]] = None


class CloudSpec(_Strict):
    center: Optional[List[float]] = None
    spread: float = Field(0.15, ge=0)


class OTSpec(_Strict):
    N: int = Field(32, ge=1, le=64)
    p: float = Field(2.0, gt=0)
    profiles: List[str] = Field(default_factory=lambda: ["power_2"])
    report_times: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3])
    mu: CloudSpec = Field(default_factory=CloudSpec)
    nu_offset: List[float] = Field(default_factory=lambda: [0.3, 0.6])

    @field_validator("profiles")
    @classmethod
    def _profiles(cls, v):
        for name in v:
            if not name.startswith("power_"):
                raise ValueError(f"unknown cost profile {name!r} (expected power_<p>)")
            try:
                if float(name[len("power_"):]) <= 0:
                    raise ValueError
            except ValueError:
                raise ValueError(f"bad exponent in cost profile {name!r}") from None
        return v


class MCSpec(_Strict):
    n_paths: int = Field(100, ge=1)
    seed: int = Field(..., ge=0)
    n_seeds: int = Field(1, ge=1)
    threads: int = Field(1, ge=1)


class OutputSpec(_Strict):
    directory: str = "runs"
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class ChecksSpec(_Strict):
    # simulate
    max_stop_fraction: Optional[float] = None
    # transport
    w_norm_rel_tol: Optional[float] = None
    flat_tol: Optional[float] = None
    gap_tol: Optional[float] = None
    isometry_tol: Optional[float] = None
    # family
    derivative_rel_tol: Optional[float] = None
    length_tol: Optional[float] = None
    alpha_slope: Optional[List[float]] = None
    translation_tol: Optional[float] = None
    # coupling
    max_rate: Optional[float] = None
    fan_ratio: Optional[float] = None
    # ot-contract
    ratio_tol: Optional[float] = None
    rigidity_tol: Optional[float] = None
    monotone_tol: Optional[float] = None

    @field_validator("alpha_slope")
    @classmethod
    def _interval(cls, v):
        if v is not None and (len(v) != 2 or v[0] > v[1]):
            raise ValueError("alpha_slope must be [low, high]")
        return v


class ExperimentConfig(_Strict):
    manifold: List[ManifoldSpec] = Field(default_factory=lambda: [ManifoldSpec(name="euclidean")])
    generator: GeneratorSpec = Field(default_factory=GeneratorSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    start: Optional[List[float]] = None
    family: FamilySpec = Field(default_factory=FamilySpec)
    coupling: CouplingSpec = Field(default_factory=CouplingSpec)
    ot: OTSpec = Field(default_factory=OTSpec)
    mc: MCSpec
    output: OutputSpec = Field(default_factory=OutputSpec)
    checks: ChecksSpec = Field(default_factory=ChecksSpec)

    @field_validator("manifold", mode="before")
    @classmethod
    def _as_list(cls, v):
        return [v] if isinstance(v, dict) else v

    @property
    def manifolds(self) -> List[ManifoldSpec]:
        return self.manifold

    @property
    def seed(self) -> int:
        return self.mc.seed

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SEED_MISSING = "seed is required (there is no clock-based default)"


def _violation(err) -> tuple:
    path = ".".join(str(p) for p in err["loc"]) or "<root>"
    if err["type"] == "missing" and path in ("mc", "mc.seed"):
        return "mc.seed", _SEED_MISSING
    return path, err["msg"]


def validate_config(data) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SchemaError([("<root>", "config must be a mapping")])
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        seen, violations = set(), []
        for err in exc.errors():
            item = _violation(err)
            if item not in seen:
                seen.add(item)
                violations.append(item)
        raise SchemaError(violations) from None
    if cfg.family.alpha > cfg.family.u0:
        warnings.warn("family.alpha exceeds family.u0: every member is coupled to the base path",
                      stacklevel=2)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError([("<root>", f"not valid YAML: {exc}")]) from None
    return validate_config(data)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
