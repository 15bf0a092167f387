"""Cell-centred finite volumes with membrane traces eliminated face by face.

Every membrane face carries two trace unknowns, one per side.  Equating the
one-sided diffusive flux ``G (g - u_cell)`` with ``G = kappa a / d`` to the
membrane law gives a 2x2 system per face:

* backward: ``G_k (g_k - u_k) = -tau_k (g_k - b_kl g_l)``
* forward:  ``G_k (g_k - u_k) = -(tau_k g_k - tau_l b_lk g_l)``

The forward trace matrix is the transpose of the backward one, which is what
makes ``V L_forward = L_backward^T V`` hold entrywise.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .chain import MassVector
from .errors import ConfigurationError, NumericalError
from .geometry import CoefficientField, PartitionedMesh

__all__ = [
    "GeneratorMatrix",
    "Traces",
    "assemble",
    "trace_values",
    "evaluate_form",
    "evolve",
    "resolve",
    "expand",
    "lp_distance",
    "generator_diagnostics",
]

Orientation = Literal["backward", "forward"]
Scheme = Literal["implicit-euler", "crank-nicolson"]
THETA = {"implicit-euler": 1.0, "crank-nicolson": 0.5}
RESIDUAL_RTOL = 1e-10


def _inf_norm(A: sparse.spmatrix) -> float:
    return float(abs(A).sum(axis=1).max()) if A.shape[0] else 0.0


def _check_residual(A, x: np.ndarray, b: np.ndarray, anorm: float, what: str) -> None:
    """Normwise relative residual ``|Ax - b| / (|A||x| + |b|)`` in the max norm."""
    r = np.abs(A @ x - b).max() if len(b) else 0.0
    scale = anorm * np.abs(x).max() + np.abs(b).max() if len(b) else 0.0
    if not np.isfinite(r) or r > RESIDUAL_RTOL * scale:
        raise NumericalError(f"{what}: relative residual {r / scale if scale else r:.3e} exceeds {RESIDUAL_RTOL:g}")


@dataclass(frozen=True)
class GeneratorMatrix:
    """Sparse generator ``L`` (so that ``u' = L u``) and its volume-weighted form ``V L``."""

    matrix: sparse.csr_matrix
    weighted: sparse.csr_matrix
    orientation: Orientation
    kappa: float
    mesh: PartitionedMesh
    coeff: CoefficientField

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, u):
        return self.matrix @ u


@dataclass(frozen=True)
class Traces:
    """A cell field together with its membrane traces (``(n_mem, 2)``: left, right) and outer traces."""

    u: np.ndarray
    membrane: np.ndarray
    outer: np.ndarray


@dataclass(frozen=True)
class _FaceData:
    cl: np.ndarray
    cr: np.ndarray
    area: np.ndarray
    GL: np.ndarray
    GR: np.ndarray
    tl: np.ndarray
    tr: np.ndarray
    blr: np.ndarray
    brl: np.ndarray


def _check_orientation(orientation: str) -> None:
    if orientation not in ("backward", "forward"):
        raise ConfigurationError(f"orientation must be 'backward' or 'forward', got {orientation!r}")


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not (np.isfinite(kappa) and kappa > 0):
        raise ConfigurationError(f"diffusion speed kappa={kappa} must be positive")
    return kappa


def _membrane_data(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float) -> _FaceData:
    mem = mesh.membranes
    cl = np.array([f.cell_left for f in mem], dtype=int)
    cr = np.array([f.cell_right for f in mem], dtype=int)
    dl = np.array([f.dist_left for f in mem])
    dr = np.array([f.dist_right for f in mem])
    return _FaceData(
        cl=cl, cr=cr,
        area=np.array([f.area for f in mem]),
        GL=kappa * coeff.a[cl] / dl if len(mem) else np.zeros(0),
        GR=kappa * coeff.a[cr] / dr if len(mem) else np.zeros(0),
        tl=np.array([f.tau_left for f in mem]),
        tr=np.array([f.tau_right for f in mem]),
        blr=np.array([f.b_left_to_right for f in mem]),
        brl=np.array([f.b_right_to_left for f in mem]),
    )


def _trace_matrix(fd: _FaceData, orientation: str):
    """Entries ``(m11, m12, m21, m22)`` and determinant of the per-face trace system."""
    m11 = fd.GL + fd.tl
    m22 = fd.GR + fd.tr
    if orientation == "backward":
        m12, m21 = -fd.tl * fd.blr, -fd.tr * fd.brl
    else:
        m12, m21 = -fd.tr * fd.brl, -fd.tl * fd.blr
    det = m11 * m22 - m12 * m21
    if np.any(~(det > 0)):
        raise NumericalError("singular membrane trace system")
    return m11, m12, m21, m22, det


def _check_mesh_coeff(mesh: PartitionedMesh, coeff: CoefficientField) -> None:
    if coeff.a.shape != (mesh.n_cells,):
        raise ConfigurationError(f"coefficients have {coeff.a.shape[0]} cells, mesh has {mesh.n_cells}")


def assemble(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float,
             orientation: Orientation = "backward") -> GeneratorMatrix:
    """Discrete generator for speed ``kappa`` and the given transmission orientation."""
    kappa = _check_kappa(kappa)
    _check_orientation(orientation)
    _check_mesh_coeff(mesh, coeff)
    # overflow is reported below as NumericalError
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _assemble(mesh, coeff, kappa, orientation)


def _assemble(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float,
              orientation: Orientation) -> GeneratorMatrix:
    n = mesh.n_cells
    a = coeff.a
    rows, cols, vals = [], [], []

    # interior faces: two-point flux with series (harmonic) transmissibility
    I = mesh.interior
    T = I.area / (I.dist_a / (kappa * a[I.cell_a]) + I.dist_b / (kappa * a[I.cell_b]))
    rows += [I.cell_a, I.cell_b, I.cell_a, I.cell_b]
    cols += [I.cell_b, I.cell_a, I.cell_a, I.cell_b]
    vals += [T, T, -T, -T]

    # membrane faces: area * (G M^{-1} G - G) = -area * G M^{-1} (M - G); the second
    # form vanishes exactly for tau = 0 and is bitwise transposed between orientations
    if mesh.membranes:
        fd = _membrane_data(mesh, coeff, kappa)
        m11, m12, m21, m22, det = _trace_matrix(fd, orientation)
        GL, GR, A = fd.GL, fd.GR, fd.area
        cross = m12 * m21
        GG = GL * GR
        rows += [fd.cl, fd.cl, fd.cr, fd.cr]
        cols += [fd.cl, fd.cr, fd.cl, fd.cr]
        vals += [
            -A * GL * (m22 * fd.tl - cross) / det,
            -A * GG * m12 / det,
            -A * GG * m21 / det,
            -A * GR * (m11 * fd.tr - cross) / det,
        ]

    # outer Robin faces
    if mesh.outer:
        oc = np.array([f.cell_left for f in mesh.outer], dtype=int)
        G = kappa * a[oc] / np.array([f.dist_left for f in mesh.outer])
        tau = np.array([f.tau_left for f in mesh.outer])
        area = np.array([f.area for f in mesh.outer])
        rows.append(oc)
        cols.append(oc)
        vals.append(-area * G * tau / (G + tau))

    # potential
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(-coeff.c * mesh.volumes)

    VL = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    VL.sum_duplicates()
    L = (sparse.diags(1.0 / mesh.volumes) @ VL).tocsr()
    if not np.all(np.isfinite(VL.data)):
        raise NumericalError("generator has non-finite entries")
    return GeneratorMatrix(matrix=L, weighted=VL, orientation=orientation, kappa=kappa, mesh=mesh, coeff=coeff)


def trace_values(gen: GeneratorMatrix, u) -> Traces:
    """Recover the eliminated trace unknowns of ``u`` for the generator's orientation."""
    mesh, coeff, kappa = gen.mesh, gen.coeff, gen.kappa
    u = _as_field(mesh, u)
    if mesh.membranes:
        fd = _membrane_data(mesh, coeff, kappa)
        m11, m12, m21, m22, det = _trace_matrix(fd, gen.orientation)
        r1 = fd.GL * u[fd.cl]
        r2 = fd.GR * u[fd.cr]
        mem = np.column_stack([(m22 * r1 - m12 * r2) / det, (m11 * r2 - m21 * r1) / det])
    else:
        mem = np.zeros((0, 2))
    if mesh.outer:
        oc = np.array([f.cell_left for f in mesh.outer], dtype=int)
        G = kappa * coeff.a[oc] / np.array([f.dist_left for f in mesh.outer])
        tau = np.array([f.tau_left for f in mesh.outer])
        out = G * u[oc] / (G + tau)
    else:
        out = np.zeros(0)
    return Traces(u=u, membrane=mem, outer=out)


def _form_terms(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float, u: Traces, v: Traces):
    a = coeff.a
    I = mesh.interior
    T = I.area / (I.dist_a / (kappa * a[I.cell_a]) + I.dist_b / (kappa * a[I.cell_b]))
    terms = [T * (u.u[I.cell_a] - u.u[I.cell_b]) * np.conj(v.u[I.cell_a] - v.u[I.cell_b])]
    terms.append(coeff.c * u.u * np.conj(v.u) * mesh.volumes)
    if mesh.membranes:
        fd = _membrane_data(mesh, coeff, kappa)
        gu, gv = u.membrane, v.membrane
        # gradient energy in the half cells next to the membrane
        terms.append(fd.area * fd.GL * (gu[:, 0] - u.u[fd.cl]) * np.conj(gv[:, 0] - v.u[fd.cl]))
        terms.append(fd.area * fd.GR * (gu[:, 1] - u.u[fd.cr]) * np.conj(gv[:, 1] - v.u[fd.cr]))
        # membrane form
        terms.append(fd.area * fd.tl * (gu[:, 0] - fd.blr * gu[:, 1]) * np.conj(gv[:, 0]))
        terms.append(fd.area * fd.tr * (gu[:, 1] - fd.brl * gu[:, 0]) * np.conj(gv[:, 1]))
    if mesh.outer:
        oc = np.array([f.cell_left for f in mesh.outer], dtype=int)
        G = kappa * a[oc] / np.array([f.dist_left for f in mesh.outer])
        tau = np.array([f.tau_left for f in mesh.outer])
        area = np.array([f.area for f in mesh.outer])
        terms.append(area * G * (u.outer - u.u[oc]) * np.conj(v.outer - v.u[oc]))
        terms.append(area * tau * u.outer * np.conj(v.outer))
    return terms


def evaluate_form(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float, u: Traces, v: Traces,
                  return_scale: bool = False):
    """Discrete sesquilinear form: diffusion energy + potential + membrane and Robin terms.

    With ``u`` carrying its backward traces this equals ``-<L_backward u, v>_V``
    for any traces of ``v``.  With ``return_scale=True`` also returns the sum
    of the absolute values of all contributions, the natural roundoff scale.
    """
    kappa = _check_kappa(kappa)
    _check_mesh_coeff(mesh, coeff)
    terms = _form_terms(mesh, coeff, kappa, u, v)
    total = sum(np.sum(t) for t in terms)
    if np.isrealobj(total) or np.imag(total) == 0:
        total = float(np.real(total))
    if return_scale:
        return total, float(sum(np.sum(np.abs(t)) for t in terms))
    return total


def _as_field(mesh: PartitionedMesh, u) -> np.ndarray:
    if isinstance(u, MassVector):
        return expand(mesh, u)
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_cells,):
        raise ConfigurationError(f"field has shape {u.shape}, mesh has {mesh.n_cells} cells")
    return u


FieldSource = Union[None, np.ndarray, Callable[[float], np.ndarray]]


class _Stepper:
    """Factorised ``(I - theta dt L)`` with residual-checked solves, cached per step size."""

    def __init__(self, L: sparse.csr_matrix, theta: float):
        self.L = L
        self.theta = theta
        self.I = sparse.identity(L.shape[0], format="csc")
        self._cache: dict[float, tuple] = {}

    def _factor(self, dt: float):
        if dt not in self._cache:
            lhs = (self.I - self.theta * dt * self.L).tocsc()
            rhs = (self.I + (1 - self.theta) * dt * self.L).tocsr()
            try:
                lu = splu(lhs)
            except RuntimeError as exc:
                raise NumericalError(f"factorisation failed for dt={dt}: {exc}") from exc
            lhs = lhs.tocsr()
            self._cache[dt] = (lhs, rhs, lu, _inf_norm(lhs))
        return self._cache[dt]

    def step(self, u: np.ndarray, dt: float, forcing: np.ndarray | None) -> np.ndarray:
        lhs, rhs, lu, anorm = self._factor(dt)
        b = rhs @ u
        if forcing is not None:
            b = b + dt * forcing
        x = lu.solve(b)
        _check_residual(lhs, x, b, anorm, f"time step dt={dt:g}")
        return x


def _source_fn(mesh: PartitionedMesh, source: FieldSource):
    if source is None:
        return None
    if callable(source):
        return lambda t: _as_field(mesh, source(t))
    const = _as_field(mesh, source)
    return lambda t: const


def evolve(
    gen: GeneratorMatrix,
    u0,
    t_end: float,
    dt: float,
    scheme: Scheme = "crank-nicolson",
    source: FieldSource = None,
    times=None,
    observer: Callable[[float, np.ndarray], None] | None = None,
):
    """Theta-scheme time stepping of ``u' = L u + f(t)``.

    Returns ``(t, snapshots)`` at the requested ``times`` (default ``[0, t_end]``);
    each requested time is hit exactly by shortening the step that would pass it.
    ``observer(t, u)`` is called after every step, and once at ``t = 0``.
    """
    if scheme not in THETA:
        raise ConfigurationError(f"scheme must be one of {sorted(THETA)}, got {scheme!r}")
    dt = float(dt)
    t_end = float(t_end)
    if not (np.isfinite(dt) and dt > 0):
        raise ConfigurationError(f"time step dt={dt} must be positive")
    if not (np.isfinite(t_end) and t_end >= 0):
        raise ConfigurationError(f"t_end={t_end} must be non-negative")
    mesh = gen.mesh
    u = _as_field(mesh, u0).copy()
    times = np.array([0.0, t_end] if times is None else times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > t_end * (1 + 1e-12):
        raise ConfigurationError("output times must be strictly increasing within [0, t_end]")
    f = _source_fn(mesh, source)
    theta = THETA[scheme]
    stepper = _Stepper(gen.matrix, theta)

    snaps = np.empty((len(times), mesh.n_cells))
    k = 0
    t = 0.0
    if observer is not None:
        observer(t, u)
    while k < len(times) and times[k] <= 0.0:
        snaps[k] = u
        k += 1
    nstep = 0
    t_base = 0.0
    while k < len(times):
        target = times[k]
        t_next = t_base + (nstep + 1) * dt
        if t_next >= target - 1e-12 * max(1.0, target):
            h = target - t
            hit = True
        else:
            h = t_next - t
            hit = False
        # keep the common step bit-identical to reuse the cached factorisation
        if abs(h - dt) <= 1e-12 * dt:
            h = dt
        if h > 0:
            forcing = f(t + theta * h) if f is not None else None
            u = stepper.step(u, h, forcing)
            t = target if hit else t_next
            if observer is not None:
                observer(t, u)
        if hit:
            snaps[k] = u
            k += 1
            t_base = t
            nstep = 0
        else:
            nstep += 1
    return times, snaps


def resolve(gen: GeneratorMatrix, lam: float, f) -> np.ndarray:
    """Solve ``(lam I - L) u = f``."""
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigurationError(f"resolvent parameter lambda={lam} must be positive")
    f = _as_field(gen.mesh, f)
    A = (lam * sparse.identity(gen.shape[0]) - gen.matrix).tocsc()
    try:
        u = splu(A).solve(f)
    except RuntimeError as exc:
        raise NumericalError(f"resolvent solve failed: {exc}") from exc
    _check_residual(A, u, f, _inf_norm(A), "resolvent solve")
    return u


def expand(mesh: PartitionedMesh, z: MassVector) -> np.ndarray:
    """Piecewise-constant cell field of a per-subdomain vector (masses are divided by volume)."""
    if len(z) != mesh.n_subdomains:
        raise ConfigurationError(f"vector has {len(z)} components, mesh has {mesh.n_subdomains} subdomains")
    if z.kind == "mass":
        lam = np.bincount(mesh.labels - 1, weights=mesh.volumes, minlength=mesh.n_subdomains)
        z = z.to_average(lam)
    return z.values[mesh.labels - 1]


def lp_distance(mesh: PartitionedMesh, u, v, p: float = 2) -> float:
    """Volume-weighted discrete ``L^p`` distance, ``p`` in ``{1, 2, inf}``."""
    d = np.abs(_as_field(mesh, u) - _as_field(mesh, v))
    if p == 1:
        return float(np.sum(d * mesh.volumes))
    if p == 2:
        return float(np.sqrt(np.sum(d * d * mesh.volumes)))
    if p == np.inf or p == "inf":
        return float(d.max()) if len(d) else 0.0
    raise ConfigurationError(f"p must be 1, 2 or inf, got {p!r}")


def is_conservative(mesh: PartitionedMesh, coeff: CoefficientField) -> bool:
    """No killing anywhere: ``b = 1`` on every membrane side, no outer flux, ``c = 0``."""
    if np.any(coeff.c != 0):
        return False
    if any(f.tau_left != 0 for f in mesh.outer):
        return False
    for f in mesh.membranes:
        if (f.tau_left > 0 and f.b_left_to_right != 1) or (f.tau_right > 0 and f.b_right_to_left != 1):
            return False
    return True


def generator_diagnostics(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float) -> dict:
    """Relative residuals of the structural identities of the assembled pair.

    All residuals are divided by ``max |V L|``.  ``row_sum`` and ``mass`` are
    only meaningful (and only reported) for conservative data.
    """
    Lb = assemble(mesh, coeff, kappa, "backward")
    Lf = assemble(mesh, coeff, kappa, "forward")
    scale = max(abs(Lb.weighted).max(), np.finfo(float).tiny)
    out = {
        "scale": float(scale),
        "duality": float(abs(Lf.weighted - Lb.weighted.T).max() / scale),
        "conservative": is_conservative(mesh, coeff),
    }
    if out["conservative"]:
        one = np.ones(mesh.n_cells)
        out["row_sum"] = float(np.abs(Lb.weighted @ one).max() / scale)
        out["mass"] = float(np.abs(Lf.weighted.T @ one).max() / scale)
    return out
