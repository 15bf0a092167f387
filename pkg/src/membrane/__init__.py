"""Diffusion on domains split by semi-permeable membranes, and its Markov-chain limit."""

from .chain import LimitChain, LimitTrajectory, MassVector, build_chain, evolve_limit, expm, project
from .config import ScenarioConfig, dump_config, load_config, parse_config
from .errors import ConfigurationError, NumericalError
from .fv import (
    GeneratorMatrix,
    Traces,
    assemble,
    evaluate_form,
    evolve,
    expand,
    generator_diagnostics,
    lp_distance,
    resolve,
    trace_values,
)
from .geometry import (
    CoefficientField,
    MeasuredGeometry,
    MembraneFace,
    PartitionedMesh,
    build_mesh_1d,
    build_mesh_2d,
    measure_geometry,
    measured_geometry_direct,
)
from .mc import Occupancy, simulate
from .presets import preset, preset_names

__all__ = [
    "CoefficientField", "ConfigurationError", "GeneratorMatrix", "LimitChain", "LimitTrajectory",
    "MassVector", "MeasuredGeometry", "MembraneFace", "NumericalError", "Occupancy", "PartitionedMesh",
    "ScenarioConfig", "Traces", "assemble", "build_chain", "build_mesh_1d", "build_mesh_2d",
    "dump_config", "evaluate_form", "evolve", "evolve_limit", "expand", "expm", "generator_diagnostics",
    "load_config", "lp_distance", "measure_geometry", "measured_geometry_direct", "parse_config",
    "preset", "preset_names", "project", "resolve", "simulate", "trace_values",
]
