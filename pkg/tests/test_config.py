import copy
import json

import numpy as np
import pytest

from membrane import ConfigurationError, build_chain, dump_config, load_config, parse_config, preset, preset_names
from membrane.config import Problem
from membrane.presets import PRESETS


@pytest.mark.parametrize("name", preset_names())
def test_roundtrip(name):
    c = preset(name)
    doc = dump_config(c)
    assert doc["schema"] == "membrane-scenario/1"
    assert parse_config(doc) == c
    assert parse_config(json.dumps(doc)) == c


def test_load_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(dump_config(preset("figure1"))))
    assert load_config(p) == preset("figure1")
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def _fig1():
    return copy.deepcopy(PRESETS["figure1"])


def _without(doc, key):
    doc.pop(key)
    return doc


def _set(doc, **kw):
    doc.update(kw)
    return doc


@pytest.mark.parametrize(
    "doc, match",
    [
        (_without(_fig1(), "schema"), "schema"),
        (_set(_fig1(), schema="membrane-scenario/2"), "unsupported schema"),
        (_set(_fig1(), colour="blue"), "colour"),
        (_set(_fig1(), kappa=[10.0, 1.0]), "strictly increasing"),
        (_set(_fig1(), kappa=[]), "empty"),
        (_set(_fig1(), kappa=[-1.0]), "positive"),
        (_set(_fig1(), times=[1.0, 0.5]), "increasing"),
        (_set(_fig1(), membranes=[{"between": [1, 3], "tau": [1, 1]}]), "outside"),
        (_set(_fig1(), membranes=[{"between": [1, 2], "tau": [1, 1]}, {"between": [2, 1], "tau": [1, 1]}]), "twice"),
        (_set(_fig1(), membranes=[{"between": [1, 2], "tau": [-1, 1]}]), "non-negative"),
        (_set(_fig1(), membranes=[{"between": [1, 2], "tau": [1, 1], "b": [1.5, 1]}]), r"\[0, 1\]"),
        (_set(_fig1(), outer_tau=[0.0, 0.0, 0.0]), "outer_tau"),
        (_set(_fig1(), diffusivity=[1.0, 2.0, 3.0]), "diffusivity"),
        (_set(_fig1(), diffusivity=[1.0, 0.0]), "positive"),
        (_set(_fig1(), complement=True), "backward"),
        (_set(_fig1(), initial={"kind": "indicator", "subdomains": [3]}), "outside"),
        (_set(_fig1(), geometry={"kind": "sphere"}), "geometry"),
        ("{not json", "JSON"),
        ("[1, 2]", "object"),
    ],
)
def test_rejects(doc, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_config(doc)


def test_rejects_unordered_breakpoints():
    doc = _fig1()
    doc["geometry"]["breakpoints"] = [-1.0, 1.0, 0.0]
    with pytest.raises(ConfigurationError, match="index 2"):
        Problem(parse_config(doc))


def test_missing_interface_is_reflecting():
    doc = _fig1()
    doc["membranes"] = []
    p = Problem(parse_config(doc))
    (m,) = p.mesh.membranes
    assert (m.tau_left, m.tau_right, m.b_left_to_right, m.b_right_to_left) == (0.0, 0.0, 1.0, 1.0)
    np.testing.assert_array_equal(build_chain(p.geometry).Q, np.zeros((2, 2)))


def test_reversed_membrane_orientation():
    doc = _fig1()
    doc["membranes"] = [{"between": [2, 1], "tau": [1 / 3, 2 / 3], "b": [0.5, 0.25]}]
    (m,) = Problem(parse_config(doc)).mesh.membranes
    assert (m.tau_left, m.tau_right) == (2 / 3, 1 / 3)
    assert (m.b_left_to_right, m.b_right_to_left) == (0.25, 0.5)


def test_calcium_volumes_and_eta():
    p = Problem(preset("calcium"))
    np.testing.assert_allclose(p.geometry.lam, [1.0, 0.5, 14.5], rtol=1e-14)
    # eta = 0.5 scales diffusivity and every permeability
    assert np.all(p.coeff.a == 0.5)
    seen = set()
    for f in p.mesh.membranes:
        seen |= {(f.left, f.right, f.tau_left), (f.right, f.left, f.tau_right)}
    assert seen == {(1, 3, 0.1), (3, 1, 0.025), (2, 3, 0.15), (3, 2, 0.05)}


def test_initial_data_kinds():
    p = Problem(preset("kinase-square"))
    u = p.initial_field()
    assert u.max() == 2.0 and u.min() == 0.0
    np.testing.assert_allclose(p.initial_average(), [1.0])
    doc = _fig1()
    doc["initial"] = {"kind": "piecewise", "values": [0.25, 0.75]}
    np.testing.assert_allclose(Problem(parse_config(doc)).initial_average(), [0.25, 0.75])
    doc["initial"] = {"kind": "cells", "values": [1.0, 2.0]}
    with pytest.raises(ConfigurationError, match="cells"):
        Problem(parse_config(doc)).initial_field()


def test_measured_geometry_needs_no_mesh():
    p = Problem(preset("kinase"))
    assert p.mesh is None
    with pytest.raises(ConfigurationError, match="mesh"):
        p.require_mesh()


def test_default_step():
    s = preset("figure1").solver
    assert s.step(1.0) == 1e-3
    assert s.step(1000.0) == 1e-5
