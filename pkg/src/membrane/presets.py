"""Built-in scenario documents."""

from __future__ import annotations

import copy
import math

from .config import SCHEMA_VERSION, ScenarioConfig, parse_config
from .errors import ConfigurationError

__all__ = ["PRESETS", "preset", "preset_names"]

_FIGURE1 = {
    "schema": SCHEMA_VERSION,
    "name": "figure1",
    "description": "Two unit intervals joined by a membrane with alpha=2/3, beta=1/3; mass starts on the left.",
    "geometry": {"kind": "interval", "breakpoints": [-1.0, 0.0, 1.0], "cells_per_unit": 200},
    "membranes": [{"between": [1, 2], "tau": [2 / 3, 1 / 3], "b": [1.0, 1.0]}],
    "outer_tau": [0.0, 0.0],
    "kappa": [0.1, 1.0, 10.0],
    "initial": {"kind": "indicator", "subdomains": [1]},
    "times": [0.0, 0.05, 0.15, 0.30, 0.50, 1.0, 6.0],
    "orientation": "forward",
    "seed": 0,
    "mc": {"n_particles": 100_000, "dt": 1e-4, "kappa": 1.0, "times": [0.5, 1.0, 2.0]},
}

_FIGURE1_MC = copy.deepcopy(_FIGURE1)
_FIGURE1_MC.update(
    name="figure1-mc",
    description="Particle version of figure1 at kappa=1.",
    kappa=[1.0],
    times=[0.0, 0.5, 1.0, 2.0],
)

_NEUMANN = {
    "schema": SCHEMA_VERSION,
    "name": "neumann",
    "description": "Single insulated interval; the left half starts at 1 and the profile flattens to the mean.",
    "geometry": {"kind": "interval", "breakpoints": [0.0, 1.0], "cells_per_unit": 200},
    "kappa": [1.0],
    "initial": {"kind": "box", "lower": [0.0], "upper": [0.5], "value": 1.0},
    "times": [0.0, 1.0, 6.0],
    "orientation": "forward",
}

_AC = 0.5
_KINASE = {
    "schema": SCHEMA_VERSION,
    "name": "kinase",
    "description": (
        "Unit ball with a uniform activating membrane (aC=0.5); evolves the inactive fraction "
        "and reports the active one, k* = 1 - k."
    ),
    "geometry": {
        "kind": "measured",
        "volumes": [4 * math.pi / 3],
        "outer": [_AC * 4 * math.pi],
    },
    "potential": [1.0],
    "source": [1.0],
    "initial": {"kind": "constant", "value": 1.0},
    "times": [0.0, 0.1, 1.0, 10.0],
    "orientation": "backward",
    "complement": True,
}

_KINASE_SQUARE = {
    "schema": SCHEMA_VERSION,
    "name": "kinase-square",
    "description": "Planar analogue of kinase: unit square, outer permeability 0.375 so that q = 1.5.",
    "geometry": {"kind": "rectilinear", "h": 0.0625, "rectangles": [{"x0": 0, "y0": 0, "x1": 1, "y1": 1, "subdomain": 1}]},
    "outer_tau": [0.375],
    "potential": [1.0],
    "source": [1.0],
    "initial": {"kind": "box", "lower": [0.0, 0.0], "upper": [0.5, 1.0], "value": 2.0},
    "kappa": [1.0, 10.0, 100.0],
    "times": [0.0, 0.1, 1.0],
    "orientation": "backward",
    "complement": True,
}

_NEUROTRANSMITTER = {
    "schema": SCHEMA_VERSION,
    "name": "neurotransmitter",
    "description": "Three pools in a row (volumes 1, 2, 4); production and loss in the large pool, release from the first.",
    "geometry": {
        "kind": "rectilinear",
        "h": 0.125,
        "rectangles": [
            {"x0": 0, "y0": 0, "x1": 1, "y1": 1, "subdomain": 1},
            {"x0": 1, "y0": 0, "x1": 3, "y1": 1, "subdomain": 2},
            {"x0": 3, "y0": 0, "x1": 7, "y1": 1, "subdomain": 3},
        ],
    },
    "membranes": [
        {"between": [1, 2], "tau": [0.6, 0.8]},
        {"between": [2, 3], "tau": [0.5, 0.4]},
    ],
    "outer_tau": [0.1, 0.0, 0.0],
    "potential": [0.0, 0.0, 0.3],
    "source": [0.0, 0.0, 0.6],
    "initial": {"kind": "constant", "value": 1.0},
    "kappa": [1.0, 10.0, 100.0],
    "times": [0.0, 1.0, 5.0],
    "orientation": "backward",
}

_CALCIUM = {
    "schema": SCHEMA_VERSION,
    "name": "calcium",
    "description": (
        "Cytosol (3) surrounding reticulum (1) and mitochondrion (2) in a 4x4 cell; "
        "buffering factor eta=0.5, calcium released from the reticulum."
    ),
    "geometry": {
        "kind": "rectilinear",
        "h": 0.125,
        "rectangles": [
            {"x0": 1, "y0": 2, "x1": 2, "y1": 3, "subdomain": 1},
            {"x0": 2, "y0": 0.5, "x1": 3, "y1": 1, "subdomain": 2},
            {"x0": 0, "y0": 0, "x1": 1, "y1": 4, "subdomain": 3},
            {"x0": 3, "y0": 0, "x1": 4, "y1": 4, "subdomain": 3},
            {"x0": 1, "y0": 3, "x1": 3, "y1": 4, "subdomain": 3},
            {"x0": 1, "y0": 0, "x1": 3, "y1": 0.5, "subdomain": 3},
            {"x0": 1, "y0": 0.5, "x1": 2, "y1": 2, "subdomain": 3},
            {"x0": 2, "y0": 1, "x1": 3, "y1": 3, "subdomain": 3},
        ],
    },
    "eta": 0.5,
    "membranes": [
        {"between": [1, 3], "tau": [0.2, 0.05]},
        {"between": [2, 3], "tau": [0.3, 0.1]},
    ],
    "outer_tau": [0.0, 0.0, 0.02],
    "initial": {"kind": "indicator", "subdomains": [1]},
    "kappa": [1.0, 10.0, 100.0],
    "times": [0.0, 0.5, 1.0, 2.0],
    "orientation": "forward",
}

PRESETS = {
    d["name"]: d
    for d in (_FIGURE1, _FIGURE1_MC, _NEUMANN, _KINASE, _KINASE_SQUARE, _NEUROTRANSMITTER, _CALCIUM)
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str) -> ScenarioConfig:
    """Validated copy of a built-in scenario."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown scenario {name!r}; available: {', '.join(preset_names())}")
    return parse_config(copy.deepcopy(PRESETS[name]))
