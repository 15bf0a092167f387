"""JSON scenario documents and their translation into geometry and coefficients."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .geometry import (
    CoefficientField,
    MeasuredGeometry,
    PartitionedMesh,
    build_mesh_1d,
    build_mesh_2d,
    measure_geometry,
    measured_geometry_direct,
)

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "build_problem",
    "Problem",
]

SCHEMA_VERSION = "membrane-scenario/1"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class IntervalGeometry(_Model):
    """1D multi-interval: subdomain ``k`` is ``[breakpoints[k-1], breakpoints[k]]``."""

    kind: Literal["interval"] = "interval"
    breakpoints: list[float] = Field(min_length=2)
    cells_per_unit: int = Field(200, gt=0)

    @property
    def n_subdomains(self) -> int:
        return len(self.breakpoints) - 1


class Rectangle(_Model):
    x0: float
    y0: float
    x1: float
    y1: float
    subdomain: int = Field(ge=1)


class RectilinearGeometry(_Model):
    """2D union of axis-aligned rectangles on a square grid of spacing ``h``."""

    kind: Literal["rectilinear"] = "rectilinear"
    rectangles: list[Rectangle] = Field(min_length=1)
    h: float = Field(gt=0)

    @property
    def n_subdomains(self) -> int:
        return max(r.subdomain for r in self.rectangles)


class MeasuredSpec(_Model):
    """Integrated geometry only: enough for the limit chain, not for a PDE solve.

    ``permeability[k][l]`` is the total permeability of the membrane between
    ``k`` and ``l`` approached from ``k`` (diagonal ignored); ``outer`` the
    total outer-boundary permeability of each subdomain.  ``survival_weighted``
    defaults to ``permeability`` (no killing on membranes).
    """

    kind: Literal["measured"] = "measured"
    volumes: list[float] = Field(min_length=1)
    outer: Optional[list[float]] = None
    permeability: Optional[list[list[float]]] = None
    survival_weighted: Optional[list[list[float]]] = None

    @property
    def n_subdomains(self) -> int:
        return len(self.volumes)


Geometry = Annotated[Union[IntervalGeometry, RectilinearGeometry, MeasuredSpec], Field(discriminator="kind")]


class Membrane(_Model):
    """Interface between subdomains ``between = [k, l]``: ``tau = [tau_k, tau_l]``, ``b = [b_kl, b_lk]``."""

    between: tuple[int, int]
    tau: tuple[float, float]
    b: tuple[float, float] = (1.0, 1.0)

    @field_validator("tau")
    @classmethod
    def _tau(cls, v):
        if any(not np.isfinite(x) or x < 0 for x in v):
            raise ValueError(f"permeabilities must be finite and non-negative, got {list(v)}")
        return v

    @field_validator("b")
    @classmethod
    def _b(cls, v):
        if any(not (0.0 <= x <= 1.0) for x in v):
            raise ValueError(f"survival factors must lie in [0, 1], got {list(v)}")
        return v


class IndicatorInit(_Model):
    kind: Literal["indicator"] = "indicator"
    subdomains: list[int] = Field(min_length=1)


class ConstantInit(_Model):
    kind: Literal["constant"] = "constant"
    value: float = 1.0


class PiecewiseInit(_Model):
    kind: Literal["piecewise"] = "piecewise"
    values: list[float]


class BoxInit(_Model):
    """``value`` on cells whose centre lies in the box ``[lower, upper]``, 0 elsewhere."""

    kind: Literal["box"] = "box"
    lower: list[float]
    upper: list[float]
    value: float = 1.0


class CellsInit(_Model):
    kind: Literal["cells"] = "cells"
    values: list[float]


Initial = Annotated[
    Union[IndicatorInit, ConstantInit, PiecewiseInit, BoxInit, CellsInit], Field(discriminator="kind")
]


class SolverOptions(_Model):
    scheme: Literal["crank-nicolson", "implicit-euler"] = "crank-nicolson"
    dt: Optional[float] = Field(None, gt=0)

    def step(self, kappa: float) -> float:
        """Configured step, or ``min(1e-3, 1e-2 / kappa)`` by default."""
        return self.dt if self.dt is not None else min(1e-3, 1e-2 / kappa)


class MonteCarloOptions(_Model):
    n_particles: int = 100_000
    dt: float = Field(1e-4, gt=0)
    kappa: Optional[float] = Field(None, gt=0)
    times: Optional[list[float]] = None
    block_size: int = Field(16384, gt=0)


class ScenarioConfig(_Model):
    schema_: Literal["membrane-scenario/1"] = Field(SCHEMA_VERSION, alias="schema")
    name: str = "scenario"
    description: str = ""
    geometry: Geometry
    diffusivity: Union[float, list[float]] = 1.0
    potential: Union[float, list[float]] = 0.0
    eta: float = Field(1.0, gt=0)
    membranes: list[Membrane] = []
    outer_tau: list[float] = []
    kappa: list[float] = [1.0]
    initial: Initial = ConstantInit()
    source: Optional[list[float]] = None
    times: list[float] = [0.0, 1.0]
    solver: SolverOptions = SolverOptions()
    orientation: Literal["forward", "backward"] = "forward"
    complement: bool = False
    seed: int = Field(0, ge=0)
    mc: Optional[MonteCarloOptions] = None
    output: Optional[str] = None

    @field_validator("kappa")
    @classmethod
    def _kappa(cls, v):
        if not v:
            raise ValueError("kappa list is empty")
        if any(not np.isfinite(k) or k <= 0 for k in v):
            raise ValueError("every kappa must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"kappa list must be strictly increasing, got {v}")
        return v

    @field_validator("times")
    @classmethod
    def _times(cls, v):
        if not v:
            raise ValueError("times list is empty")
        if v[0] < 0 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"times must be non-negative and strictly increasing, got {v}")
        return v

    @model_validator(mode="after")
    def _references(self):
        N = self.geometry.n_subdomains
        ok = set(range(1, N + 1))
        for name in ("diffusivity", "potential"):
            val = getattr(self, name)
            if isinstance(val, list) and len(val) != N:
                raise ValueError(f"{name} has {len(val)} entries for {N} subdomains")
        if np.any(np.asarray(self.diffusivity) <= 0):
            raise ValueError("diffusivity must be positive")
        if np.any(np.asarray(self.potential) < 0):
            raise ValueError("potential must be non-negative")
        seen = set()
        for m in self.membranes:
            k, l = m.between
            if k not in ok or l not in ok:
                raise ValueError(f"membrane {list(m.between)} references a subdomain outside 1..{N}")
            if k == l:
                raise ValueError(f"membrane {list(m.between)} joins a subdomain to itself")
            key = frozenset((k, l))
            if key in seen:
                raise ValueError(f"membrane between {k} and {l} is listed twice")
            seen.add(key)
        if isinstance(self.geometry, IntervalGeometry):
            for m in self.membranes:
                if abs(m.between[0] - m.between[1]) != 1:
                    raise ValueError(f"1D membrane {list(m.between)} must join neighbouring intervals")
            if self.outer_tau and len(self.outer_tau) != 2:
                raise ValueError("interval geometry takes outer_tau = [left end, right end]")
        elif self.outer_tau and len(self.outer_tau) != N:
            raise ValueError(f"outer_tau needs one value per subdomain ({N})")
        if any(t < 0 for t in self.outer_tau):
            raise ValueError("outer_tau must be non-negative")
        init = self.initial
        if isinstance(init, IndicatorInit) and not set(init.subdomains) <= ok:
            raise ValueError(f"initial indicator references a subdomain outside 1..{N}")
        if isinstance(init, PiecewiseInit) and len(init.values) != N:
            raise ValueError(f"piecewise initial datum needs {N} values")
        if self.source is not None and len(self.source) != N:
            raise ValueError(f"source needs one value per subdomain ({N})")
        if self.complement and self.orientation != "backward":
            raise ValueError("complement reporting is defined for averages, i.e. backward orientation")
        return self


class Problem:
    """Mesh (if any), coefficients and integrated geometry derived from a config."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        g = config.geometry
        N = g.n_subdomains
        a = np.broadcast_to(np.asarray(config.diffusivity, dtype=float), (N,)) * config.eta
        c = np.broadcast_to(np.asarray(config.potential, dtype=float), (N,))
        self.mesh: PartitionedMesh | None = None
        self.coeff: CoefficientField | None = None
        if isinstance(g, MeasuredSpec):
            self.geometry = _measured(config, g, c)
            return
        eta = config.eta
        if isinstance(g, IntervalGeometry):
            x = np.asarray(g.breakpoints, dtype=float)
            for i in range(len(x) - 1):
                if not x[i + 1] > x[i]:
                    raise ConfigurationError(
                        f"breakpoints not strictly increasing at index {i + 1} ({x[i]} -> {x[i + 1]})")
            counts = [max(1, int(round(g.cells_per_unit * (x[k + 1] - x[k])))) for k in range(N)]
            data = []
            for k in range(1, N):
                tk, tl, bkl, blk = _lookup(config.membranes, k, k + 1)
                data.append((eta * tk, eta * tl, bkl, blk))
            outer = [eta * t for t in (config.outer_tau or [0.0, 0.0])]
            self.mesh = build_mesh_1d(x, counts, data, tuple(outer))
        else:
            rects = [(r.x0, r.y0, r.x1, r.y1, r.subdomain) for r in g.rectangles]
            data = {}
            for k in range(1, N + 1):
                for l in range(k + 1, N + 1):
                    tk, tl, bkl, blk = _lookup(config.membranes, k, l)
                    data[(k, l)] = (eta * tk, eta * tl, bkl, blk)
            outer = {k + 1: eta * t for k, t in enumerate(config.outer_tau)}
            self.mesh = build_mesh_2d(rects, g.h, data, outer)
        self.coeff = CoefficientField.per_subdomain(self.mesh, a, c)
        self.geometry = measure_geometry(self.mesh, self.coeff)

    @property
    def N(self) -> int:
        return self.geometry.N

    def require_mesh(self) -> PartitionedMesh:
        if self.mesh is None:
            raise ConfigurationError(
                f"scenario {self.config.name!r} has measured geometry only; PDE and particle runs need a mesh")
        return self.mesh

    def initial_field(self) -> np.ndarray:
        mesh = self.require_mesh()
        init = self.config.initial
        lab = mesh.labels
        if isinstance(init, IndicatorInit):
            return np.isin(lab, init.subdomains).astype(float)
        if isinstance(init, ConstantInit):
            return np.full(mesh.n_cells, float(init.value))
        if isinstance(init, PiecewiseInit):
            return np.asarray(init.values, dtype=float)[lab - 1]
        if isinstance(init, BoxInit):
            lo, hi = np.asarray(init.lower), np.asarray(init.upper)
            if lo.shape != (mesh.dim,) or hi.shape != (mesh.dim,):
                raise ConfigurationError(f"box bounds need {mesh.dim} coordinates")
            inside = np.all((mesh.centers >= lo) & (mesh.centers <= hi), axis=1)
            return np.where(inside, float(init.value), 0.0)
        vals = np.asarray(init.values, dtype=float)
        if vals.shape != (mesh.n_cells,):
            raise ConfigurationError(f"cell initial datum has {len(vals)} values, mesh has {mesh.n_cells} cells")
        return vals

    def initial_average(self) -> np.ndarray:
        """Subdomain averages of the initial datum (the only part the limit sees)."""
        if self.mesh is not None:
            from .chain import project

            return project(self.mesh, self.initial_field()).values
        init = self.config.initial
        if isinstance(init, IndicatorInit):
            return np.isin(np.arange(1, self.N + 1), init.subdomains).astype(float)
        if isinstance(init, ConstantInit):
            return np.full(self.N, float(init.value))
        if isinstance(init, PiecewiseInit):
            return np.asarray(init.values, dtype=float)
        raise ConfigurationError("measured geometry supports indicator, constant or piecewise initial data")

    def source_average(self) -> np.ndarray | None:
        return None if self.config.source is None else np.asarray(self.config.source, dtype=float)

    def source_field(self) -> np.ndarray | None:
        s = self.source_average()
        return None if s is None else s[self.require_mesh().labels - 1]


def _lookup(membranes: list[Membrane], k: int, l: int) -> tuple[float, float, float, float]:
    """(tau_k, tau_l, b_kl, b_lk); interfaces not listed are reflecting."""
    for m in membranes:
        if m.between == (k, l):
            return m.tau[0], m.tau[1], m.b[0], m.b[1]
        if m.between == (l, k):
            return m.tau[1], m.tau[0], m.b[1], m.b[0]
    return 0.0, 0.0, 1.0, 1.0


def _measured(config: ScenarioConfig, g: MeasuredSpec, cbar: np.ndarray) -> MeasuredGeometry:
    N = g.n_subdomains
    perm = np.zeros((N, N)) if g.permeability is None else np.asarray(g.permeability, dtype=float)
    if perm.shape != (N, N):
        raise ConfigurationError(f"permeability must be {N}x{N}")
    outer = np.zeros(N) if g.outer is None else np.asarray(g.outer, dtype=float)
    if outer.shape != (N,):
        raise ConfigurationError(f"outer permeability needs {N} values")
    eta = config.eta
    rho = eta * np.column_stack([outer, perm])
    varrho = None if g.survival_weighted is None else eta * np.asarray(g.survival_weighted, dtype=float)
    if varrho is not None and varrho.shape != (N, N):
        raise ConfigurationError(f"survival_weighted must be {N}x{N}")
    return measured_geometry_direct(N, g.volumes, rho, varrho, cbar)


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(doc: dict | str) -> ScenarioConfig:
    """Validate a scenario document (dict or JSON text)."""
    try:
        if isinstance(doc, str):
            doc = json.loads(doc)
        if not isinstance(doc, dict):
            raise ConfigurationError("scenario document must be a JSON object")
        if "schema" not in doc:
            raise ConfigurationError(f"scenario document lacks the 'schema' field (expected {SCHEMA_VERSION!r})")
        if doc["schema"] != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema {doc['schema']!r}; this version reads {SCHEMA_VERSION!r}")
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid scenario: {_format_errors(exc)}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scenario is not valid JSON: {exc}") from exc


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(config: ScenarioConfig) -> dict:
    """Plain JSON-compatible document; ``parse_config(dump_config(c)) == c``."""
    return config.model_dump(mode="json", by_alias=True)


def build_problem(config: ScenarioConfig) -> Problem:
    return Problem(config)
