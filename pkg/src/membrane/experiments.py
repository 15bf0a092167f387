"""Scenario runs, kappa sweeps and CSV/JSON emission."""

from __future__ import annotations

import json
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import LimitChain, LimitTrajectory, MassVector, build_chain, evolve_limit
from .config import Problem, ScenarioConfig
from .errors import ConfigurationError, NumericalError
from .fv import assemble, evolve, generator_diagnostics, lp_distance, resolve
from .mc import Occupancy, default_workers, simulate

__all__ = [
    "fmt",
    "limit_trajectory",
    "run_scenario",
    "run_convergence",
    "run_limit",
    "run_mc",
    "ConvergenceReport",
    "check_generators",
]

STRUCTURE_TOL = 1e-12


def fmt(x: float) -> str:
    """Seventeen significant digits: round-trips every double."""
    return "%.17g" % x


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _out_dir(config: ScenarioConfig, out: str | Path | None) -> Path:
    d = Path(out if out is not None else (config.output or f"out/{config.name}"))
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {d}: {exc}") from exc
    return d


def _kappas(config: ScenarioConfig, override: Sequence[float] | None) -> list[float]:
    ks = list(config.kappa if override is None else override)
    if not ks or any(not np.isfinite(k) or k <= 0 for k in ks):
        raise ConfigurationError("every kappa must be positive")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigurationError(f"kappa list must be strictly increasing, got {ks}")
    return ks


def _map(fn, items, workers: int | None):
    workers = default_workers(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def check_generators(problem: Problem, kappa: float) -> dict:
    """Assemble both orientations and enforce duality and (where applicable) conservation."""
    d = generator_diagnostics(problem.require_mesh(), problem.coeff, kappa)
    if d["duality"] > STRUCTURE_TOL:
        raise NumericalError(f"kappa={kappa:g}: forward/backward duality residual {d['duality']:.3e}")
    for key in ("row_sum", "mass"):
        if key in d and d[key] > STRUCTURE_TOL:
            raise NumericalError(f"kappa={kappa:g}: conservation residual ({key}) {d[key]:.3e}")
    return d


def _coordinates(config: ScenarioConfig) -> str:
    return "mass" if config.orientation == "forward" else "average"


def limit_trajectory(problem: Problem, times=None) -> tuple[LimitChain, LimitTrajectory]:
    """Limit chain and its trajectory on the config's time grid.

    Forward runs are reported as subdomain masses, backward runs as averages.
    """
    config = problem.config
    chain = build_chain(problem.geometry)
    t = np.asarray(config.times if times is None else times, dtype=float)
    z0 = MassVector(problem.initial_average(), "average")
    s = problem.source_average()
    src = None if s is None else MassVector(s, "average")
    if config.orientation == "forward":
        z0 = z0.to_mass(chain.mu)
        src = None if src is None else src.to_mass(chain.mu)
    return chain, evolve_limit(chain, z0, t, source=src, orientation=config.orientation)


def _report_values(config: ScenarioConfig, values: np.ndarray) -> np.ndarray:
    return 1.0 - values if config.complement else values


def _chain_json(chain: LimitChain, config: ScenarioConfig) -> str:
    doc = {
        "orientation": config.orientation,
        "coordinates": _coordinates(config),
        "Q": chain.Q.tolist(),
        "Qstar": chain.Qstar.tolist(),
        "C": chain.C.tolist(),
        "mu": chain.mu.tolist(),
    }
    return json.dumps(doc, indent=2) + "\n"


def run_limit(config: ScenarioConfig, out: str | Path | None = None) -> dict:
    """Write ``limit.csv`` (``t,z_1..z_N``) and ``chain.json``."""
    problem = Problem(config)
    chain, traj = limit_trajectory(problem)
    d = _out_dir(config, out)
    vals = _report_values(config, traj.values)
    N = chain.N
    _write_csv(d / "limit.csv", ["t"] + [f"z_{k}" for k in range(1, N + 1)],
               ([t, *row] for t, row in zip(traj.t, vals)))
    (d / "chain.json").write_text(_chain_json(chain, config))
    return {"chain": chain, "trajectory": traj, "files": [d / "limit.csv", d / "chain.json"]}


@dataclass
class _KappaRun:
    kappa: float
    t: np.ndarray
    snapshots: np.ndarray
    masses: np.ndarray


def _solve_pde(problem: Problem, kappa: float, times) -> _KappaRun:
    config = problem.config
    mesh = problem.require_mesh()
    check_generators(problem, kappa)
    gen = assemble(mesh, problem.coeff, kappa, config.orientation)
    t_end = float(times[-1])
    try:
        t, snaps = evolve(gen, problem.initial_field(), t_end, config.solver.step(kappa),
                          scheme=config.solver.scheme, source=problem.source_field(), times=times)
    except NumericalError as exc:
        raise NumericalError(f"kappa={kappa:g}: {exc}") from exc
    N = mesh.n_subdomains
    masses = np.stack([np.bincount(mesh.labels - 1, weights=s * mesh.volumes, minlength=N) for s in snaps])
    return _KappaRun(kappa=kappa, t=t, snapshots=snaps, masses=masses)


def run_scenario(config: ScenarioConfig, out: str | Path | None = None,
                 kappas: Sequence[float] | None = None, workers: int | None = None) -> dict:
    """PDE snapshots per kappa, subdomain mass trajectories and the limit trajectory."""
    problem = Problem(config)
    mesh = problem.require_mesh()
    ks = _kappas(config, kappas)
    runs = _map(lambda k: _solve_pde(problem, k, config.times), ks, workers)
    d = _out_dir(config, out)
    files = []
    coords = [mesh.centers[:, i] for i in range(mesh.dim)]
    cols = ["t", "x", "y"][: mesh.dim + 1] + ["subdomain", "u"]
    for run in runs:
        path = d / f"snapshots_k{run.kappa:g}.csv"
        rows = []
        for t, u in zip(run.t, run.snapshots):
            for i in range(mesh.n_cells):
                rows.append([t, *(c[i] for c in coords), str(int(mesh.labels[i])), u[i]])
        _write_csv(path, cols, rows)
        files.append(path)
    N = mesh.n_subdomains
    _write_csv(d / "masses.csv", ["kappa", "t"] + [f"v_{k}" for k in range(1, N + 1)],
               ([run.kappa, t, *m] for run in runs for t, m in zip(run.t, run.masses)))
    files.append(d / "masses.csv")
    lim = run_limit(config, d)
    files += lim["files"]
    return {"runs": runs, "chain": lim["chain"], "limit": lim["trajectory"], "files": files}


@dataclass
class ConvergenceReport:
    rows: list[tuple[float, float, float, float, float, float]]
    checks: list[tuple[str, bool]] = field(default_factory=list)
    ratios: list[tuple[float, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.checks)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if ok else 'FAIL'} {name}" for name, ok in self.checks]
        out += [f"INFO e_L2 ratio t={t:g} kappa {k0:g}->{k1:g}: {r:.4g}" for t, k0, k1, r in self.ratios]
        return out


def _strictly_decreasing(x) -> bool:
    return all(b < a for a, b in zip(x, x[1:]))


def run_convergence(config: ScenarioConfig, out: str | Path | None = None,
                    kappas: Sequence[float] | None = None, times: Sequence[float] | None = None,
                    workers: int | None = None) -> ConvergenceReport:
    """Distances between the PDE solution and the expanded limit, swept over kappa.

    ``times`` defaults to the positive config times (at ``t = 0`` the distance
    does not depend on kappa).  The resolvent distance compares
    ``(I - L)^{-1} u0`` with ``(I - A)^{-1} P u0``, ``A`` the limit generator.
    """
    problem = Problem(config)
    mesh = problem.require_mesh()
    ks = _kappas(config, kappas)
    if len(ks) < 2:
        raise ConfigurationError("a convergence sweep needs at least two kappa values")
    ts = [t for t in config.times if t > 0] if times is None else list(times)
    if not ts or any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigurationError("convergence times must be positive and strictly increasing")
    chain, traj = limit_trajectory(problem, ts)
    # expanded limit as a cell field, in the same coordinates as the PDE solution
    lim_fields = []
    for i in range(len(ts)):
        z = MassVector(traj.values[i], traj.kind).to_average(chain.mu)
        lim_fields.append(z.values[mesh.labels - 1])
    u0 = problem.initial_field()
    A = chain.generator(config.orientation, "average")
    z_res = np.linalg.solve(np.eye(chain.N) - A, problem.initial_average())
    res_field = z_res[mesh.labels - 1]

    def one(k):
        run = _solve_pde(problem, k, ts)
        gen = assemble(mesh, problem.coeff, k, config.orientation)
        try:
            ur = resolve(gen, 1.0, u0)
        except NumericalError as exc:
            raise NumericalError(f"kappa={k:g}: {exc}") from exc
        e_res = lp_distance(mesh, ur, res_field, 2)
        return [(k, t, lp_distance(mesh, u, v, 1), lp_distance(mesh, u, v, 2), lp_distance(mesh, u, v, np.inf), e_res)
                for t, u, v in zip(run.t, run.snapshots, lim_fields)]

    per_k = _map(one, ks, workers)
    rows = [r for rows in per_k for r in rows]
    report = ConvergenceReport(rows=rows)
    for j, t in enumerate(ts):
        for p, name in ((2, "e_L1"), (3, "e_L2"), (4, "e_Linf")):
            seq = [per_k[i][j][p] for i in range(len(ks))]
            report.checks.append((f"{name} strictly decreasing in kappa at t={t:g}", _strictly_decreasing(seq)))
        for i in range(len(ks) - 1):
            e0, e1 = per_k[i][j][3], per_k[i + 1][j][3]
            report.ratios.append((t, ks[i], ks[i + 1], e1 / e0 if e0 > 0 else 0.0))
    report.checks.append(("e_resolvent strictly decreasing in kappa",
                          _strictly_decreasing([per_k[i][0][5] for i in range(len(ks))])))
    d = _out_dir(config, out)
    _write_csv(d / "convergence.csv", ["kappa", "t", "e_L1", "e_L2", "e_Linf", "e_resolvent"], rows)
    return report


def run_mc(config: ScenarioConfig, out: str | Path | None = None, seed: int | None = None,
           kappa: float | None = None, workers: int | None = None) -> Occupancy:
    """Particle occupancy per subdomain; writes ``occupancy.csv``."""
    problem = Problem(config)
    mesh = problem.require_mesh()
    opts = config.mc
    if opts is None:
        raise ConfigurationError(f"scenario {config.name!r} has no 'mc' section")
    k = kappa if kappa is not None else (opts.kappa if opts.kappa is not None else config.kappa[0])
    times = opts.times if opts.times is not None else config.times
    occ = simulate(mesh, problem.coeff, k, problem.initial_field(), opts.n_particles, opts.dt, times,
                   seed=config.seed if seed is None else seed, workers=workers, block_size=opts.block_size)
    d = _out_dir(config, out)
    N = mesh.n_subdomains
    _write_csv(d / "occupancy.csv",
               ["t"] + [f"occ_{i}" for i in range(1, N + 1)] + [f"se_{i}" for i in range(1, N + 1)],
               ([t, *o, *s] for t, o, s in zip(occ.t, occ.occupancy, occ.se)))
    return occ
