"""Partitioned domains: meshes, coefficients and integrated ("measured") geometry.

Subdomains are labelled ``1..N``; label ``0`` stands for the exterior of the
whole domain and never labels a cell.  Two kinds of geometry exist:

* mesh-backed (:class:`PartitionedMesh`), built on a 1D multi-interval or a 2D
  rectilinear grid, used by the finite-volume solver and the particle walk;
* :class:`MeasuredGeometry`, the handful of integrated numbers (volumes,
  total permeabilities, averaged potentials) that fully determine the limit
  Markov chain.  Any mesh reduces to one via :func:`measure_geometry`, and
  3D examples enter directly through :func:`measured_geometry_direct`.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import ConfigurationError

__all__ = [
    "MembraneFace",
    "InteriorFaces",
    "PartitionedMesh",
    "CoefficientField",
    "MeasuredGeometry",
    "build_mesh_1d",
    "build_mesh_2d",
    "measure_geometry",
    "measured_geometry_direct",
]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MembraneFace:
    """One face of a membrane (or of the outer boundary when ``right == 0``).

    ``left`` and ``right`` are the subdomains on either side; ``left`` is the
    side with the smaller coordinate along the face normal.  ``tau_left`` is
    the permeability seen when the face is approached from ``left``,
    ``b_left_to_right`` the survival probability of a particle crossing from
    ``left`` into ``right``.  For outer faces ``tau_right`` is ``None`` and both
    survival factors are 0 (particles leaving the domain are killed).
    """

    center: tuple[float, ...]
    area: float
    left: int
    right: int
    tau_left: float
    tau_right: float | None
    b_left_to_right: float
    b_right_to_left: float
    cell_left: int
    cell_right: int
    dist_left: float
    dist_right: float

    @property
    def is_outer(self) -> bool:
        return self.right == 0


@dataclass(frozen=True)
class InteriorFaces:
    """Faces between two cells of the same subdomain, stored as arrays."""

    cell_a: np.ndarray
    cell_b: np.ndarray
    area: np.ndarray
    dist_a: np.ndarray
    dist_b: np.ndarray

    def __len__(self) -> int:
        return len(self.cell_a)


@dataclass(frozen=True)
class PartitionedMesh:
    """Cells labelled by subdomain plus the three families of faces.

    Every adjacency between two cells is exactly one interior face (same label)
    or one membrane face (different labels).  Each cell side on the boundary of
    the whole domain is an outer face carrying the Robin permeability.
    """

    dim: int
    centers: np.ndarray
    volumes: np.ndarray
    labels: np.ndarray
    n_subdomains: int
    interior: InteriorFaces
    membranes: tuple[MembraneFace, ...]
    outer: tuple[MembraneFace, ...]
    spacing: float = field(default=0.0)

    @property
    def n_cells(self) -> int:
        return len(self.volumes)

    def subdomain_cells(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def validate(self) -> None:
        """Check the structural invariants; raise :class:`ConfigurationError`."""
        n = self.n_cells
        if np.any(self.volumes <= 0):
            raise ConfigurationError("cell volumes must be positive")
        if np.any(self.labels < 1) or np.any(self.labels > self.n_subdomains):
            raise ConfigurationError("cell labels must lie in 1..N (0 is the exterior)")
        present = np.unique(self.labels)
        if len(present) != self.n_subdomains:
            missing = sorted(set(range(1, self.n_subdomains + 1)) - set(present.tolist()))
            raise ConfigurationError(f"subdomains {missing} label no cell")
        ia, ib = self.interior.cell_a, self.interior.cell_b
        if np.any(self.labels[ia] != self.labels[ib]):
            raise ConfigurationError("interior face joins two different subdomains")
        for f in self.membranes:
            if f.left == f.right or f.right == 0:
                raise ConfigurationError(f"membrane face at {f.center} must join two distinct subdomains")
            if self.labels[f.cell_left] != f.left or self.labels[f.cell_right] != f.right:
                raise ConfigurationError(f"membrane face at {f.center} has inconsistent labels")
        for f in self.outer:
            if f.right != 0 or self.labels[f.cell_left] != f.left:
                raise ConfigurationError(f"outer face at {f.center} is inconsistent")
        # each subdomain must be face-connected
        rows = np.concatenate([ia, ib])
        cols = np.concatenate([ib, ia])
        adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        ncomp, comp = csgraph.connected_components(adj, directed=False)
        for k in range(1, self.n_subdomains + 1):
            if len(np.unique(comp[self.labels == k])) != 1:
                raise ConfigurationError(f"subdomain {k} is not connected")


@dataclass(frozen=True)
class CoefficientField:
    """Per-cell diffusivity ``a`` (isotropic) and potential ``c``."""

    a: np.ndarray
    c: np.ndarray
    gamma: float

    def __post_init__(self):
        a = _frozen(self.a)
        c = _frozen(self.c)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)
        if not self.gamma > 0:
            raise ConfigurationError(f"ellipticity bound gamma={self.gamma} must be positive")
        if a.shape != c.shape:
            raise ConfigurationError("diffusivity and potential must have one value per cell")
        if np.any(~np.isfinite(a)) or np.any(a < self.gamma):
            raise ConfigurationError(f"diffusivity must satisfy a >= gamma={self.gamma}")
        if np.any(~np.isfinite(c)) or np.any(c < 0):
            raise ConfigurationError("potential c must be non-negative")

    @classmethod
    def per_subdomain(cls, mesh: PartitionedMesh, a=1.0, c=0.0, gamma=None) -> CoefficientField:
        """Piecewise-constant coefficients; ``a`` and ``c`` are scalars or length-N sequences."""
        N = mesh.n_subdomains
        av = np.broadcast_to(np.asarray(a, dtype=float), (N,))
        cv = np.broadcast_to(np.asarray(c, dtype=float), (N,))
        idx = mesh.labels - 1
        if gamma is None:
            gamma = float(av.min()) if av.min() > 0 else 1.0
        return cls(a=av[idx], c=cv[idx], gamma=gamma)


@dataclass(frozen=True)
class MeasuredGeometry:
    """Integrated geometry of an ``N``-subdomain partition.

    ``rho`` has shape ``(N, N+1)``: column 0 is the total outer-boundary
    permeability, column ``l`` the total permeability of the membrane towards
    subdomain ``l`` when approached from the row subdomain.  ``varrho`` is the
    same with the survival factor folded in (``N x N``).  Diagonal entries of
    both are unused.
    """

    lam: np.ndarray
    rho: np.ndarray
    varrho: np.ndarray
    cbar: np.ndarray

    def __post_init__(self):
        for name in ("lam", "rho", "varrho", "cbar"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        N = len(self.lam)
        if N < 1:
            raise ConfigurationError("need at least one subdomain")
        if self.rho.shape != (N, N + 1):
            raise ConfigurationError(f"rho must have shape ({N}, {N + 1}), got {self.rho.shape}")
        if self.varrho.shape != (N, N):
            raise ConfigurationError(f"varrho must have shape ({N}, {N}), got {self.varrho.shape}")
        if self.cbar.shape != (N,):
            raise ConfigurationError(f"cbar must have length {N}")
        for name in ("lam", "rho", "varrho", "cbar"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"{name} has non-finite entries")
        bad = np.flatnonzero(self.lam <= 0)
        if len(bad):
            raise ConfigurationError(f"volume lambda[{bad[0] + 1}] must be positive")
        off = ~np.eye(N, dtype=bool)
        if np.any(self.rho < 0) or np.any(self.varrho[off] < 0):
            raise ConfigurationError("permeabilities must be non-negative")
        excess = off & (self.varrho > self.rho[:, 1:] * (1 + 1e-12))
        if np.any(excess):
            k, l = np.argwhere(excess)[0]
            raise ConfigurationError(f"varrho[{k + 1},{l + 1}] exceeds rho[{k + 1},{l + 1}]")
        if np.any(self.cbar < 0):
            raise ConfigurationError("averaged potential must be non-negative")

    @property
    def N(self) -> int:
        return len(self.lam)


def _check_tau(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ConfigurationError(f"{name}={value} must be a non-negative permeability")
    return value


def _check_b(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ConfigurationError(f"{name}={value} must lie in [0, 1]")
    return value


def build_mesh_1d(
    breakpoints: Sequence[float],
    cells_per_subdomain: int | Sequence[int],
    membrane_data: Sequence[Sequence[float]] = (),
    outer_tau: tuple[float, float] = (0.0, 0.0),
) -> PartitionedMesh:
    """Uniform cells on each interval ``[x_{k-1}, x_k]`` of a 1D partition.

    ``membrane_data[i]`` is ``(tau_left, tau_right, b_lr, b_rl)`` for the
    membrane at interior breakpoint ``i + 1``.  The surface measure of a point
    membrane is 1.
    """
    x = np.asarray(breakpoints, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ConfigurationError("need at least two breakpoints")
    for i in range(len(x) - 1):
        if not x[i + 1] > x[i]:
            raise ConfigurationError(f"breakpoints not strictly increasing at index {i + 1} ({x[i]} -> {x[i + 1]})")
    N = len(x) - 1
    counts = np.broadcast_to(np.asarray(cells_per_subdomain, dtype=int), (N,))
    if np.any(counts < 1):
        raise ConfigurationError("cells_per_subdomain must be positive")
    if len(membrane_data) != N - 1:
        raise ConfigurationError(f"expected membrane data for {N - 1} interior breakpoints, got {len(membrane_data)}")
    if len(outer_tau) != 2:
        raise ConfigurationError("outer_tau needs (left end, right end)")
    tau_out = (_check_tau("outer_tau[0]", outer_tau[0]), _check_tau("outer_tau[1]", outer_tau[1]))

    centers, vols, labels = [], [], []
    for k in range(N):
        h = (x[k + 1] - x[k]) / counts[k]
        centers.append(x[k] + h * (np.arange(counts[k]) + 0.5))
        vols.append(np.full(counts[k], h))
        labels.append(np.full(counts[k], k + 1))
    centers = np.concatenate(centers)
    vols = np.concatenate(vols)
    labels = np.concatenate(labels)
    n = len(vols)

    same = labels[:-1] == labels[1:]
    ia = np.flatnonzero(same)
    interior = InteriorFaces(
        cell_a=_frozen(ia, int),
        cell_b=_frozen(ia + 1, int),
        area=_frozen(np.ones(len(ia))),
        dist_a=_frozen(vols[ia] / 2),
        dist_b=_frozen(vols[ia + 1] / 2),
    )
    membranes = []
    for i, j in enumerate(np.flatnonzero(~same)):
        data = membrane_data[i]
        if len(data) != 4:
            raise ConfigurationError(f"membrane_data[{i}] needs (tau_left, tau_right, b_lr, b_rl)")
        tl = _check_tau(f"membrane_data[{i}].tau_left", data[0])
        tr = _check_tau(f"membrane_data[{i}].tau_right", data[1])
        blr = _check_b(f"membrane_data[{i}].b_lr", data[2])
        brl = _check_b(f"membrane_data[{i}].b_rl", data[3])
        membranes.append(
            MembraneFace(
                center=(float(x[i + 1]),), area=1.0,
                left=int(labels[j]), right=int(labels[j + 1]),
                tau_left=tl, tau_right=tr, b_left_to_right=blr, b_right_to_left=brl,
                cell_left=int(j), cell_right=int(j + 1),
                dist_left=float(vols[j] / 2), dist_right=float(vols[j + 1] / 2),
            )
        )
    outer = (
        MembraneFace(center=(float(x[0]),), area=1.0, left=1, right=0, tau_left=tau_out[0], tau_right=None,
                     b_left_to_right=0.0, b_right_to_left=0.0, cell_left=0, cell_right=-1,
                     dist_left=float(vols[0] / 2), dist_right=0.0),
        MembraneFace(center=(float(x[-1]),), area=1.0, left=N, right=0, tau_left=tau_out[1], tau_right=None,
                     b_left_to_right=0.0, b_right_to_left=0.0, cell_left=n - 1, cell_right=-1,
                     dist_left=float(vols[-1] / 2), dist_right=0.0),
    )
    mesh = PartitionedMesh(
        dim=1,
        centers=_frozen(centers[:, None]),
        volumes=_frozen(vols),
        labels=_frozen(labels, int),
        n_subdomains=N,
        interior=interior,
        membranes=tuple(membranes),
        outer=outer,
        spacing=float(vols.min()),
    )
    mesh.validate()
    return mesh


def _grid_index(value: float, origin: float, h: float, what: str) -> int:
    q = (value - origin) / h
    r = round(q)
    if abs(q - r) > 1e-9 * max(1.0, abs(q)):
        raise ConfigurationError(f"{what}={value} is not aligned to the grid spacing h={h}")
    return int(r)


def _membrane_params(data: Mapping, k: int, l: int) -> tuple[float, float, float, float]:
    """(tau_k, tau_l, b_kl, b_lk) for the interface between k and l, either key order."""
    if (k, l) in data:
        tk, tl, bkl, blk = data[(k, l)]
    elif (l, k) in data:
        tl, tk, blk, bkl = data[(l, k)]
    else:
        raise ConfigurationError(f"no membrane data for the interface between subdomains {k} and {l}")
    return (
        _check_tau(f"tau of subdomain {k} on interface ({k},{l})", tk),
        _check_tau(f"tau of subdomain {l} on interface ({k},{l})", tl),
        _check_b(f"b_{k},{l}", bkl),
        _check_b(f"b_{l},{k}", blk),
    )


def build_mesh_2d(
    rectangles: Sequence[Sequence[float]],
    grid_h: float,
    membrane_data: Mapping[tuple[int, int], Sequence[float]],
    outer_tau: Mapping[int, float] | Sequence[float] = (),
) -> PartitionedMesh:
    """Square cells of side ``grid_h`` on a union of labelled axis-aligned rectangles.

    ``rectangles`` holds ``(x0, y0, x1, y1, k)`` tuples.  ``membrane_data`` maps
    a subdomain pair ``(k, l)`` to ``(tau_k, tau_l, b_kl, b_lk)``; ``outer_tau``
    gives the outer-boundary permeability of each subdomain (missing means 0).
    """
    h = float(grid_h)
    if not h > 0:
        raise ConfigurationError("grid_h must be positive")
    if not rectangles:
        raise ConfigurationError("need at least one rectangle")
    rects = []
    for i, r in enumerate(rectangles):
        if len(r) != 5:
            raise ConfigurationError(f"rectangle {i} needs (x0, y0, x1, y1, subdomain)")
        x0, y0, x1, y1, k = float(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4])
        if not (x1 > x0 and y1 > y0):
            raise ConfigurationError(f"rectangle {i} is empty or inverted")
        if k < 1:
            raise ConfigurationError(f"rectangle {i} has subdomain {k}; labels start at 1")
        rects.append((x0, y0, x1, y1, k))
    ox = min(r[0] for r in rects)
    oy = min(r[1] for r in rects)
    idx = []
    for i, (x0, y0, x1, y1, k) in enumerate(rects):
        idx.append((
            _grid_index(x0, ox, h, f"rectangle {i} x0"), _grid_index(y0, oy, h, f"rectangle {i} y0"),
            _grid_index(x1, ox, h, f"rectangle {i} x1"), _grid_index(y1, oy, h, f"rectangle {i} y1"), k,
        ))
    nx = max(r[2] for r in idx)
    ny = max(r[3] for r in idx)
    grid = np.zeros((ny, nx), dtype=int)
    for i, (i0, j0, i1, j1, k) in enumerate(idx):
        if np.any(grid[j0:j1, i0:i1] != 0):
            raise ConfigurationError(f"rectangle {i} overlaps an earlier rectangle")
        grid[j0:j1, i0:i1] = k
    N = int(grid.max())
    present = set(np.unique(grid[grid > 0]).tolist())
    if present != set(range(1, N + 1)):
        raise ConfigurationError(f"subdomain labels must be 1..{N} without gaps")

    if isinstance(outer_tau, Mapping):
        tau_out = np.array([float(outer_tau.get(k, 0.0)) for k in range(1, N + 1)])
    else:
        tau_out = np.zeros(N)
        tau_out[: len(outer_tau)] = np.asarray(outer_tau, dtype=float)
        if len(outer_tau) > N:
            raise ConfigurationError(f"outer_tau has {len(outer_tau)} entries for {N} subdomains")
    for k in range(N):
        _check_tau(f"outer_tau[{k + 1}]", tau_out[k])

    cell_id = -np.ones((ny, nx), dtype=int)
    inside = grid > 0
    cell_id[inside] = np.arange(inside.sum())
    jj, ii = np.nonzero(inside)
    centers = np.column_stack([ox + (ii + 0.5) * h, oy + (jj + 0.5) * h])
    labels = grid[inside]
    vols = np.full(len(labels), h * h)

    ia, ib = [], []
    membranes, outer = [], []
    # horizontal neighbours (shared vertical edge) and vertical neighbours
    for axis in (1, 0):
        a_lab = grid[:, :-1] if axis == 1 else grid[:-1, :]
        b_lab = grid[:, 1:] if axis == 1 else grid[1:, :]
        a_id = cell_id[:, :-1] if axis == 1 else cell_id[:-1, :]
        b_id = cell_id[:, 1:] if axis == 1 else cell_id[1:, :]
        both = (a_lab > 0) & (b_lab > 0)
        same = both & (a_lab == b_lab)
        ia.append(a_id[same])
        ib.append(b_id[same])
        for ca, cb in zip(a_id[both & ~same], b_id[both & ~same]):
            k, l = int(labels[ca]), int(labels[cb])
            tk, tl, bkl, blk = _membrane_params(membrane_data, k, l)
            cen = tuple(float(v) for v in (centers[ca] + centers[cb]) / 2)
            membranes.append(MembraneFace(
                center=cen, area=h, left=k, right=l, tau_left=tk, tau_right=tl,
                b_left_to_right=bkl, b_right_to_left=blk, cell_left=int(ca), cell_right=int(cb),
                dist_left=h / 2, dist_right=h / 2,
            ))
    # outer faces: cell sides not shared with another cell
    padded = np.pad(grid, 1)
    offsets = ((0, -1, (-0.5, 0.0)), (0, 1, (0.5, 0.0)), (-1, 0, (0.0, -0.5)), (1, 0, (0.0, 0.5)))
    for dj, di, (sx, sy) in offsets:
        nb = padded[1 + dj: 1 + dj + ny, 1 + di: 1 + di + nx]
        for c in cell_id[inside & (nb == 0)]:
            k = int(labels[c])
            cen = (float(centers[c, 0] + sx * h), float(centers[c, 1] + sy * h))
            outer.append(MembraneFace(
                center=cen, area=h, left=k, right=0, tau_left=float(tau_out[k - 1]), tau_right=None,
                b_left_to_right=0.0, b_right_to_left=0.0, cell_left=int(c), cell_right=-1,
                dist_left=h / 2, dist_right=0.0,
            ))
    ia = np.concatenate(ia)
    ib = np.concatenate(ib)
    interior = InteriorFaces(
        cell_a=_frozen(ia, int), cell_b=_frozen(ib, int),
        area=_frozen(np.full(len(ia), h)), dist_a=_frozen(np.full(len(ia), h / 2)),
        dist_b=_frozen(np.full(len(ia), h / 2)),
    )
    mesh = PartitionedMesh(
        dim=2,
        centers=_frozen(centers),
        volumes=_frozen(vols),
        labels=_frozen(labels, int),
        n_subdomains=N,
        interior=interior,
        membranes=tuple(membranes),
        outer=tuple(outer),
        spacing=h,
    )
    # whole domain must be connected as well as each subdomain
    n = mesh.n_cells
    rows = np.concatenate([ia, ib, [f.cell_left for f in membranes], [f.cell_right for f in membranes]]).astype(int)
    cols = np.concatenate([ib, ia, [f.cell_right for f in membranes], [f.cell_left for f in membranes]]).astype(int)
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    if csgraph.connected_components(adj, directed=False)[0] != 1:
        raise ConfigurationError("the union of rectangles is not connected")
    mesh.validate()
    return mesh


def measure_geometry(mesh: PartitionedMesh, coeff: CoefficientField) -> MeasuredGeometry:
    """Volumes, total permeabilities and subdomain-averaged potentials of a mesh."""
    N = mesh.n_subdomains
    # correctly rounded sums: uniform cells of an interval add up to its exact length
    lam = np.array([math.fsum(mesh.volumes[mesh.labels == k]) for k in range(1, N + 1)])
    cbar = np.array([math.fsum((coeff.c * mesh.volumes)[mesh.labels == k]) for k in range(1, N + 1)]) / lam
    rho = np.zeros((N, N + 1))
    varrho = np.zeros((N, N))
    for f in mesh.membranes:
        k, l = f.left, f.right
        rho[k - 1, l] += f.area * f.tau_left
        rho[l - 1, k] += f.area * f.tau_right
        varrho[k - 1, l - 1] += f.area * f.b_left_to_right * f.tau_left
        varrho[l - 1, k - 1] += f.area * f.b_right_to_left * f.tau_right
    for f in mesh.outer:
        rho[f.left - 1, 0] += f.area * f.tau_left
    return MeasuredGeometry(lam=lam, rho=rho, varrho=varrho, cbar=cbar)


def measured_geometry_direct(N: int, lam, rho, varrho=None, cbar=None) -> MeasuredGeometry:
    """Validate and wrap integrated geometry given as plain numbers.

    ``varrho`` defaults to the off-diagonal part of ``rho`` (no killing on
    membranes) and ``cbar`` to zeros.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (N, N + 1):
        raise ConfigurationError(f"rho must have shape ({N}, {N + 1})")
    if varrho is None:
        varrho = rho[:, 1:] * (1 - np.eye(N))
    if cbar is None:
        cbar = np.zeros(N)
    geom = MeasuredGeometry(lam=np.asarray(lam, dtype=float), rho=rho,
                            varrho=np.asarray(varrho, dtype=float), cbar=np.asarray(cbar, dtype=float))
    if geom.N != N:
        raise ConfigurationError(f"lambda has {geom.N} entries for N={N}")
    return geom
