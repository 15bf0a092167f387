"""The finite-state limit: intensity matrices, projection and evolution.

As the diffusion speed grows, each subdomain collapses to a single state and
the dynamics reduce to a linear ODE driven by ``Q - C`` (expectations) or by
its ``mu``-adjoint ``Q* - C`` (densities).
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .errors import ConfigurationError, NumericalError
from .geometry import MeasuredGeometry, PartitionedMesh

__all__ = [
    "MassVector",
    "LimitChain",
    "LimitTrajectory",
    "build_chain",
    "project",
    "expm",
    "evolve_limit",
]

Kind = Literal["average", "mass"]
Orientation = Literal["backward", "forward"]


@dataclass(frozen=True)
class MassVector:
    """Per-subdomain values, either averages (``u_k``) or total masses (``v_k = lam_k u_k``)."""

    values: np.ndarray
    kind: Kind = "average"

    def __post_init__(self):
        if self.kind not in ("average", "mass"):
            raise ConfigurationError(f"unknown MassVector kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ConfigurationError("MassVector values must be one-dimensional")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def to_mass(self, mu) -> MassVector:
        if self.kind == "mass":
            return self
        return MassVector(self.values * np.asarray(mu, dtype=float), "mass")

    def to_average(self, mu) -> MassVector:
        if self.kind == "average":
            return self
        return MassVector(self.values / np.asarray(mu, dtype=float), "average")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class LimitChain:
    """Intensity matrix ``Q``, its ``mu``-adjoint ``Qstar``, potentials ``C`` and weights ``mu``."""

    Q: np.ndarray
    Qstar: np.ndarray
    C: np.ndarray
    mu: np.ndarray

    @property
    def N(self) -> int:
        return len(self.mu)

    def generator(self, orientation: Orientation = "backward", kind: Kind = "average") -> np.ndarray:
        """Matrix driving the limit ODE for the given orientation and coordinates."""
        if orientation == "backward":
            if kind != "average":
                raise ConfigurationError("the backward (expectation) chain acts on averages, not masses")
            return self.Q - np.diag(self.C)
        if orientation == "forward":
            if kind == "average":
                return self.Qstar - np.diag(self.C)
            return self.Q.T - np.diag(self.C)
        raise ConfigurationError(f"unknown orientation {orientation!r}")

    def inner(self, x, y) -> float:
        """The ``mu``-weighted inner product."""
        return float(np.sum(np.asarray(x) * np.asarray(y) * self.mu))


@dataclass(frozen=True)
class LimitTrajectory:
    t: np.ndarray
    values: np.ndarray
    kind: Kind

    def __getitem__(self, i: int) -> MassVector:
        return MassVector(self.values[i], self.kind)


def build_chain(geom: MeasuredGeometry) -> LimitChain:
    """Assemble ``Q``, ``Q*``, ``C`` and ``mu`` from integrated geometry."""
    N = geom.N
    lam = geom.lam
    off = ~np.eye(N, dtype=bool)
    Q = np.where(off, geom.varrho, 0.0) / lam[:, None]
    Qstar = np.where(off, geom.varrho.T, 0.0) / lam[:, None]
    rho = geom.rho.copy()
    rho[:, 1:][~off] = 0.0
    diag = -rho.sum(axis=1) / lam
    Q[np.diag_indices(N)] = diag
    Qstar[np.diag_indices(N)] = diag
    for a in (Q, Qstar):
        a.setflags(write=False)
    C = geom.cbar.copy()
    mu = lam.copy()
    C.setflags(write=False)
    mu.setflags(write=False)
    return LimitChain(Q=Q, Qstar=Qstar, C=C, mu=mu)


def project(mesh: PartitionedMesh, field) -> MassVector:
    """Volume-weighted subdomain averages of a cell field."""
    u = np.asarray(field, dtype=float)
    if u.shape != (mesh.n_cells,):
        raise ConfigurationError(f"field has shape {u.shape}, mesh has {mesh.n_cells} cells")
    idx = mesh.labels - 1
    N = mesh.n_subdomains
    mass = np.bincount(idx, weights=u * mesh.volumes, minlength=N)
    vol = np.bincount(idx, weights=mesh.volumes, minlength=N)
    return MassVector(mass / vol, "average")


def expm(M, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``exp(t M)`` for small dense ``M``.

    Scaling and squaring of a Taylor series applied to ``t(M - sI)`` with
    ``s`` the smallest diagonal entry, and the factor ``exp(s)`` folded into the
    scaled step before squaring.  For Metzler matrices (nonnegative
    off-diagonal, as every intensity matrix is) all series terms are then
    nonnegative, so the result is entrywise nonnegative without cancellation.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError("expm needs a square matrix")
    t = float(t)
    if not np.isfinite(t) or not np.all(np.isfinite(M)):
        raise NumericalError("expm input has non-finite entries")
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    A = t * M
    s = float(A.diagonal().min())
    B = A - s * np.eye(n)
    norm = np.abs(B).sum(axis=1).max()
    j = 0
    if norm > 0.5:
        j = int(np.ceil(np.log2(norm / 0.5)))
    B = B / 2.0**j
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ B / k
        E = E + term
        if np.abs(term).max() <= 1e-18 * np.abs(E).max():
            break
    # fold the shift in before squaring so intermediate powers stay representable
    E = np.exp(s / 2.0**j) * E
    for _ in range(j):
        E = E @ E
    out = E
    if not np.all(np.isfinite(out)):
        raise NumericalError("expm overflowed")
    return out


SourceLike = Union[None, MassVector, Callable[[float], MassVector]]


def _source_fn(source: SourceLike, kind: Kind, N: int) -> Callable[[float], np.ndarray] | None:
    if source is None:
        return None

    def check(mv) -> np.ndarray:
        if not isinstance(mv, MassVector):
            raise ConfigurationError("source must produce MassVector values")
        if mv.kind != kind:
            raise ConfigurationError(f"source is in {mv.kind!r} coordinates but the state is in {kind!r}")
        if len(mv) != N:
            raise ConfigurationError(f"source has {len(mv)} components, chain has {N}")
        return mv.values

    if isinstance(source, MassVector):
        const = check(source)
        return lambda t: const
    return lambda t: check(source(t))


def _duhamel_step(A: np.ndarray, f: Callable[[float], np.ndarray], t0: float, h: float,
                  rtol: float = 1e-8) -> np.ndarray:
    """``int_0^h exp((h - s)A) f(t0 + s) ds`` by composite Simpson with refinement."""
    prev = None
    m = 2
    while m <= 2**16:
        E = expm(A, h / m)
        # accumulate Horner-style: acc <- E acc + w_j f_j, from s=0 to s=h
        acc = np.zeros(A.shape[0])
        for jj in range(m + 1):
            w = 1.0 if jj in (0, m) else (4.0 if jj % 2 else 2.0)
            if jj > 0:
                acc = E @ acc
            acc = acc + w * f(t0 + jj * h / m)
        est = acc * h / (3 * m)
        if prev is not None:
            diff = np.abs(est - prev).max()
            scale = max(np.abs(est).max(), 1e-300)
            if diff <= rtol * scale or diff == 0.0:
                return est + (est - prev) / 15.0
        prev = est
        m *= 2
    raise NumericalError(f"variation-of-constants quadrature did not converge on [{t0}, {t0 + h}]")


def evolve_limit(
    chain: LimitChain,
    z0: MassVector,
    t_grid,
    source: SourceLike = None,
    orientation: Orientation = "backward",
) -> LimitTrajectory:
    """Solve ``z' = A z + f(t)`` on ``t_grid`` by the variation-of-constants formula.

    ``A`` is ``Q - C`` for the backward orientation, and for the forward
    orientation ``Q* - C`` on averages or ``Q^T - C`` on masses.
    ``source`` is ``None``, a constant :class:`MassVector` or a callable
    ``t -> MassVector`` in the same coordinates as ``z0``.
    """
    if not isinstance(z0, MassVector):
        raise ConfigurationError("z0 must be a MassVector")
    if len(z0) != chain.N:
        raise ConfigurationError(f"z0 has {len(z0)} components, chain has {chain.N}")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or not np.all(np.isfinite(t)):
        raise ConfigurationError("t_grid must be a non-empty finite 1D sequence")
    if np.any(np.diff(t) <= 0):
        raise ConfigurationError("t_grid must be strictly increasing")
    if t[0] < 0:
        raise ConfigurationError("t_grid must start at t >= 0")
    A = chain.generator(orientation, z0.kind)
    f = _source_fn(source, z0.kind, chain.N)
    out = np.empty((len(t), chain.N))
    z = z0.values.copy()
    prev_t = 0.0
    for i, ti in enumerate(t):
        h = ti - prev_t
        if h > 0:
            zn = expm(A, h) @ z
            if f is not None:
                zn = zn + _duhamel_step(A, f, prev_t, h)
            z = zn
        out[i] = z
        prev_t = ti
    out.setflags(write=False)
    return LimitTrajectory(t=t.copy(), values=out, kind=z0.kind)
