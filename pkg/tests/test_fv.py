import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from membrane import (
    CoefficientField,
    ConfigurationError,
    MassVector,
    Traces,
    assemble,
    build_chain,
    build_mesh_1d,
    build_mesh_2d,
    evaluate_form,
    evolve,
    generator_diagnostics,
    lp_distance,
    measure_geometry,
    resolve,
    trace_values,
)

from conftest import figure1_mesh
from oracles import dense_generator


def _mixed_2d():
    rects = [(0, 0, 1, 1, 1), (1, 0, 2, 0.5, 2), (1, 0.5, 2, 1, 3)]
    data = {(1, 2): (0.7, 0.2, 0.9, 0.4), (1, 3): (0.1, 1.3, 1.0, 0.6), (2, 3): (0.5, 0.5, 1.0, 1.0)}
    mesh = build_mesh_2d(rects, 0.25, data, {1: 0.3, 3: 0.05})
    coeff = CoefficientField.per_subdomain(mesh, a=[1.0, 2.5, 0.4], c=[0.0, 0.2, 1.0], gamma=0.4)
    return mesh, coeff


def _mixed_1d():
    mesh = build_mesh_1d((0.0, 0.5, 1.5, 2.0), [5, 7, 3], [(0.4, 1.1, 0.8, 0.3), (2.0, 0.0, 1.0, 1.0)], (0.6, 0.0))
    coeff = CoefficientField.per_subdomain(mesh, a=[1.0, 3.0, 0.5], c=[0.1, 0.0, 0.4], gamma=0.5)
    return mesh, coeff


CASES = {
    "figure1": lambda: (figure1_mesh(cells=10), CoefficientField.per_subdomain(figure1_mesh(cells=10))),
    "mixed-1d": _mixed_1d,
    "mixed-2d": _mixed_2d,
}


@pytest.mark.parametrize("tau", [0.0, 0.25, 1.0, 7.0])
def test_two_cell_hand_elimination(tau):
    mesh = build_mesh_1d((0.0, 1.0, 2.0), 1, [(tau, tau, 1.0, 1.0)])
    L = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0, "backward").matrix.toarray()
    # G = kappa a / (h/2) = 2 on each side; resistances 1/2 + 1/tau + 1/2 in series
    t_eff = tau / (1 + tau)
    np.testing.assert_allclose(L, [[-t_eff, t_eff], [t_eff, -t_eff]], rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("orientation", ["backward", "forward"])
@pytest.mark.parametrize("kappa", [0.3, 10.0])
def test_matches_dense_schur_complement(name, orientation, kappa):
    mesh, coeff = CASES[name]()
    VL = assemble(mesh, coeff, kappa, orientation).weighted.toarray()
    ref = dense_generator(mesh, coeff, kappa, orientation)
    assert np.abs(VL - ref).max() <= 1e-12 * np.abs(ref).max()


def test_neumann_constant_in_kernel():
    mesh = build_mesh_1d((0.0, 1.0), 50, [])
    L = assemble(mesh, CoefficientField.per_subdomain(mesh, a=2.0), 3.0)
    assert np.all(L.matrix @ np.full(mesh.n_cells, 4.2) == 0)


@pytest.mark.parametrize("name", sorted(CASES))
def test_duality_exact(name):
    mesh, coeff = CASES[name]()
    Lb = assemble(mesh, coeff, 2.0, "backward").weighted
    Lf = assemble(mesh, coeff, 2.0, "forward").weighted
    assert abs(Lf - Lb.T).max() == 0


@pytest.mark.parametrize("kappa", [0.1, 1.0, 1e3])
def test_conservation(kappa):
    mesh = build_mesh_2d([(0, 0, 1, 1, 1), (1, 0, 2, 1, 2)], 0.125, {(1, 2): (0.3, 2.0, 1.0, 1.0)})
    coeff = CoefficientField.per_subdomain(mesh, a=[1.0, 0.2], gamma=0.2)
    d = generator_diagnostics(mesh, coeff, kappa)
    assert d["conservative"]
    assert d["row_sum"] <= 1e-12 and d["mass"] <= 1e-12 and d["duality"] <= 1e-12


def test_killing_breaks_conservation_flag():
    mesh, coeff = _mixed_2d()
    assert not generator_diagnostics(mesh, coeff, 1.0)["conservative"]


def test_figure1_stationary_density():
    mesh = figure1_mesh(cells=400)
    coeff = CoefficientField.per_subdomain(mesh)
    gen = assemble(mesh, coeff, 1.0, "forward")
    u0 = (mesh.labels == 1).astype(float)
    _, snaps = evolve(gen, u0, 80.0, 0.5, scheme="implicit-euler")
    u = snaps[-1]
    scale = abs(gen.matrix).sum(axis=1).max()
    assert np.abs(gen.matrix @ u).max() <= 1e-10 * scale
    m1 = np.sum((u * mesh.volumes)[mesh.labels == 1])
    m2 = np.sum((u * mesh.volumes)[mesh.labels == 2])
    assert m2 / m1 == pytest.approx(2.0, abs=1e-3)
    # each solve conserves mass up to roundoff of order eps * |I - dt L|
    assert m1 + m2 == pytest.approx(1.0, rel=1e-9)


def test_isolated_cell_stays_constant():
    mesh = build_mesh_1d((0.0, 1.0), 1, [])
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 5.0)
    _, snaps = evolve(gen, [3.0], 2.0, 0.1, times=[0.0, 1.0, 2.0])
    np.testing.assert_array_equal(snaps, 3.0)


def test_neumann_averaging():
    mesh = build_mesh_1d((0.0, 1.0), 200, [])
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0, "forward")
    u0 = (mesh.centers[:, 0] < 0.5).astype(float)
    _, snaps = evolve(gen, u0, 6.0, 1e-3)
    assert np.abs(snaps[-1] - 0.5).max() <= 1e-3


def test_figure1_mass_tracks_chain():
    mesh = figure1_mesh()
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 10.0, "forward")
    left = mesh.labels == 1
    worst = [0.0]

    def watch(t, u):
        v = np.sum(u[left] * mesh.volumes[left])
        worst[0] = max(worst[0], abs(v - (1 / 3 + 2 / 3 * np.exp(-t))))

    evolve(gen, left.astype(float), 6.0, 1e-3, observer=watch)
    assert worst[0] <= 0.02


def test_requested_times_hit_exactly():
    mesh = figure1_mesh(cells=10)
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0, "forward")
    seen = []
    t, _ = evolve(gen, np.ones(mesh.n_cells), 0.35, 0.1, times=[0.0, 0.05, 0.35], observer=lambda s, u: seen.append(s))
    assert 0.05 in seen and 0.35 in seen
    np.testing.assert_array_equal(t, [0.0, 0.05, 0.35])


def test_source_drives_constant_growth():
    mesh = build_mesh_1d((0.0, 1.0), 10, [])
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0)
    _, snaps = evolve(gen, np.zeros(10), 2.0, 0.01, source=np.full(10, 0.5))
    np.testing.assert_allclose(snaps[-1], 1.0, rtol=1e-12)


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(dt=0.0), "dt"),
        (dict(dt=-1.0), "dt"),
        (dict(scheme="rk4"), "scheme"),
        (dict(times=[0.0, 2.0]), "times"),
        (dict(times=[0.5, 0.2]), "times"),
    ],
)
def test_evolve_rejects(kwargs, match):
    mesh = figure1_mesh(cells=4)
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0)
    args = dict(dt=0.1, scheme="crank-nicolson", times=None)
    args.update(kwargs)
    with pytest.raises(ConfigurationError, match=match):
        evolve(gen, np.ones(mesh.n_cells), 1.0, **args)


def test_refinement_consistency():
    """Differences between successive grids shrink by at least 1.8 per halving."""
    sols = []
    for cells in (25, 50, 100, 200):
        mesh = figure1_mesh(cells=cells)
        gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0, "forward")
        _, snaps = evolve(gen, (mesh.labels == 1).astype(float), 1.0, 1e-3)
        sols.append(snaps[-1])
    diffs = []
    for coarse, fine in zip(sols, sols[1:]):
        restricted = 0.5 * (fine[0::2] + fine[1::2])
        h = 1.0 / len(coarse) * 2
        diffs.append(np.sqrt(np.sum((coarse - restricted) ** 2) * h))
    assert diffs[0] / diffs[1] >= 1.8
    assert diffs[1] / diffs[2] >= 1.8


def test_implicit_euler_first_order_in_time():
    mesh = figure1_mesh(cells=50)
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 1.0, "forward")
    u0 = (mesh.labels == 1).astype(float)
    ref = evolve(gen, u0, 1.0, 1e-4, scheme="crank-nicolson")[1][-1]
    errs = [np.abs(evolve(gen, u0, 1.0, dt, scheme="implicit-euler")[1][-1] - ref).max() for dt in (0.02, 0.01, 0.005)]
    assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8
    cn = np.abs(evolve(gen, u0, 1.0, 0.01, scheme="crank-nicolson")[1][-1] - ref).max()
    assert cn < errs[1]


def test_resolve_trivial_cases():
    single = build_mesh_1d((0.0, 1.0), 1, [])
    gen0 = assemble(single, CoefficientField.per_subdomain(single), 1.0)
    np.testing.assert_allclose(resolve(gen0, 2.0, [3.0]), [1.5], rtol=1e-15)
    mesh = figure1_mesh(cells=20)
    gen = assemble(mesh, CoefficientField.per_subdomain(mesh), 3.0, "backward")
    np.testing.assert_allclose(resolve(gen, 4.0, np.ones(mesh.n_cells)), 0.25, rtol=1e-12)
    with pytest.raises(ConfigurationError):
        resolve(gen, 0.0, np.ones(mesh.n_cells))


@pytest.mark.parametrize("orientation", ["forward", "backward"])
def test_figure1_resolvent_converges_to_limit(orientation):
    mesh = figure1_mesh()
    coeff = CoefficientField.per_subdomain(mesh)
    ch = build_chain(measure_geometry(mesh, coeff))
    A = ch.generator(orientation)
    z = np.linalg.solve(np.eye(2) - A, [1.0, 0.0])
    # worked by hand: (I - A) z = (1, 0)
    expected = [2 / 3, 1 / 3] if orientation == "forward" else [2 / 3, 1 / 6]
    np.testing.assert_allclose(z, expected, rtol=1e-14)
    f = (mesh.labels == 1).astype(float)
    d = [lp_distance(mesh, resolve(assemble(mesh, coeff, k, orientation), 1.0, f), MassVector(z)) for k in (1, 10, 100, 1000)]
    assert all(b < a for a, b in zip(d, d[1:]))


def test_form_of_constants_vanishes():
    mesh = figure1_mesh(cells=30)
    coeff = CoefficientField.per_subdomain(mesh)
    gen = assemble(mesh, coeff, 5.0, "backward")
    one = trace_values(gen, np.ones(mesh.n_cells))
    assert abs(evaluate_form(mesh, coeff, 5.0, one, one)) <= 1e-12


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("kappa", [0.5, 50.0])
def test_form_operator_identity(name, kappa, rng):
    mesh, coeff = CASES[name]()
    gen = assemble(mesh, coeff, kappa, "backward")
    V = mesh.volumes
    for _ in range(20):
        u = trace_values(gen, rng.normal(size=mesh.n_cells))
        v0 = rng.normal(size=mesh.n_cells)
        # any traces for v: the identity only uses the elimination for u
        v = Traces(v0, rng.normal(size=u.membrane.shape), rng.normal(size=u.outer.shape))
        a, scale = evaluate_form(mesh, coeff, kappa, u, v, return_scale=True)
        rhs = -np.sum((gen.matrix @ u.u) * v0 * V)
        assert abs(a - rhs) <= 1e-12 * scale


@pytest.mark.parametrize("kappa", [0.05, 1.0, 20.0])
def test_accretive_for_symmetric_permeability(kappa):
    mesh = build_mesh_1d((0.0, 1.0, 2.0, 2.5), 8, [(0.7, 0.7, 0.5, 0.5), (1.2, 1.2, 1.0, 1.0)], (0.3, 0.0))
    coeff = CoefficientField.per_subdomain(mesh, a=[1.0, 0.3, 2.0], c=[0.0, 0.5, 0.0], gamma=0.3)
    VL = assemble(mesh, coeff, kappa, "backward").weighted.toarray()
    sym = -(VL + VL.T) / 2
    assert np.linalg.eigvalsh(sym).min() >= -1e-12 * np.abs(VL).max()


def test_asymmetric_permeability_is_not_accretive_for_small_kappa():
    # the limit form -<Qx, x>_mu is indefinite for tau_left != tau_right
    mesh = figure1_mesh(cells=4)
    VL = assemble(mesh, CoefficientField.per_subdomain(mesh), 1e-3, "backward").weighted.toarray()
    assert np.linalg.eigvalsh(-(VL + VL.T) / 2).min() < 0


def test_lp_distance_examples():
    mesh = figure1_mesh(cells=8)
    one = np.ones(mesh.n_cells)
    assert lp_distance(mesh, one, one, 1) == 0
    assert lp_distance(mesh, one, np.zeros(mesh.n_cells), 1) == pytest.approx(2.0, rel=1e-15)
    assert lp_distance(mesh, one, np.zeros(mesh.n_cells), 2) == pytest.approx(np.sqrt(2.0), rel=1e-15)
    assert lp_distance(mesh, one, np.zeros(mesh.n_cells), np.inf) == 1.0
    ind = (mesh.labels == 1).astype(float)
    assert lp_distance(mesh, ind, MassVector([1.0, 0.0])) == 0
    assert lp_distance(mesh, ind, MassVector([1.0, 0.0], "mass")) == 0
    with pytest.raises(ConfigurationError):
        lp_distance(mesh, one, np.ones(3))
    with pytest.raises(ConfigurationError):
        lp_distance(mesh, one, one, 3)


@given(
    u0=st.lists(st.floats(0.0, 1.0), min_size=12, max_size=12),
    tau=st.tuples(st.floats(0.0, 3.0), st.floats(0.0, 3.0)),
    b=st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)),
    kappa=st.floats(0.05, 50.0),
    dt=st.floats(1e-3, 0.5),
)
def test_implicit_euler_positive_and_contractive(u0, tau, b, kappa, dt):
    mesh = build_mesh_1d((0.0, 1.0, 2.0), 6, [(tau[0], tau[1], b[0], b[1])], (0.2, 0.0))
    coeff = CoefficientField.per_subdomain(mesh)
    u0 = np.asarray(u0)
    for orientation in ("forward", "backward"):
        gen = assemble(mesh, coeff, kappa, orientation)
        # forward max-norm contraction needs L 1 <= 0, i.e. no net inflow anywhere
        contractive = orientation == "backward" or np.all(gen.matrix @ np.ones(mesh.n_cells) <= 1e-12)
        top = u0.max()

        def watch(t, u):
            assert u.min() >= -1e-13
            if contractive:
                assert u.max() <= top + 1e-13

        evolve(gen, u0, 5 * dt, dt, scheme="implicit-euler", observer=watch)


def test_bad_inputs_rejected():
    mesh = figure1_mesh(cells=4)
    coeff = CoefficientField.per_subdomain(mesh)
    with pytest.raises(ConfigurationError):
        assemble(mesh, coeff, 0.0)
    with pytest.raises(ConfigurationError):
        assemble(mesh, coeff, 1.0, "sideways")
    other = figure1_mesh(cells=5)
    with pytest.raises(ConfigurationError):
        assemble(other, coeff, 1.0)
