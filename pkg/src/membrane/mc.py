"""Particle simulation of the 1D membrane diffusion.

Each particle performs an Euler-Maruyama walk with step ``sqrt(2 kappa a dt)``.
A step that would leave the current subdomain hits a membrane (or the outer
boundary) and passes with probability ``tau sqrt(pi dt / (kappa a))``, using the
permeability and diffusivity of the side it comes from; otherwise it is
reflected.  A passing particle survives with probability ``b`` (zero at the
outer boundary).  The potential kills with probability ``1 - exp(-c dt)`` per
step.

Particles are split into fixed-size blocks, each driven by its own Philox
stream keyed by ``(seed, block index)``.  Results are integer counts summed over
blocks, so they do not depend on how many worker threads run the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import CoefficientField, PartitionedMesh

__all__ = ["Occupancy", "simulate", "crossing_probability", "default_workers"]

DEFAULT_BLOCK = 16384


@dataclass(frozen=True)
class Occupancy:
    """Fractions of the initial particles alive in each subdomain, with binomial standard errors."""

    t: np.ndarray
    occupancy: np.ndarray
    se: np.ndarray
    counts: np.ndarray
    n_particles: int


def crossing_probability(tau: float, kappa: float, a: float, dt: float) -> float:
    """Per-contact passage probability calibrated to a Robin flux ``tau``."""
    return float(tau * np.sqrt(np.pi * dt / (kappa * a)))


def _thread_cap() -> int | None:
    env = os.environ.get("MEMBRANE_THREADS")
    if env is None or env.strip() == "":
        return None
    try:
        n = int(env)
    except ValueError as exc:
        raise ConfigurationError(f"MEMBRANE_THREADS={env!r} is not an integer") from exc
    if n < 1:
        raise ConfigurationError(f"MEMBRANE_THREADS={n} must be at least 1")
    return n


def default_workers(requested: int | None = None) -> int:
    """Worker count: ``requested`` (default: CPU count), capped by ``MEMBRANE_THREADS``."""
    if requested is not None and int(requested) < 1:
        raise ConfigurationError("workers must be at least 1")
    n = int(requested) if requested is not None else (os.cpu_count() or 1)
    cap = _thread_cap()
    return n if cap is None else min(n, cap)


@dataclass(frozen=True)
class _Layout:
    lo: np.ndarray         # left end of each subdomain
    hi: np.ndarray         # right end
    sigma: np.ndarray      # step std per subdomain
    p_left: np.ndarray     # passage probability at the left end, approached from inside
    p_right: np.ndarray
    b_left: np.ndarray     # survival when passing the left end (0 at the outer boundary)
    b_right: np.ndarray
    ratio_left: np.ndarray  # sqrt(D_neighbour / D_k) for overshoot rescaling
    ratio_right: np.ndarray
    kill: np.ndarray       # per-step potential kill probability
    N: int


def _layout(mesh: PartitionedMesh, coeff: CoefficientField, kappa: float, dt: float) -> _Layout:
    if mesh.dim != 1:
        raise ConfigurationError("particle simulation is available for 1D meshes only")
    N = mesh.n_subdomains
    x = mesh.centers[:, 0]
    half = mesh.volumes / 2
    lo = np.array([(x - half)[mesh.labels == k].min() for k in range(1, N + 1)])
    hi = np.array([(x + half)[mesh.labels == k].max() for k in range(1, N + 1)])
    a = np.empty(N)
    c = np.empty(N)
    for k in range(N):
        ak = coeff.a[mesh.labels == k + 1]
        ck = coeff.c[mesh.labels == k + 1]
        if np.ptp(ak) > 0 or np.ptp(ck) > 0:
            raise ConfigurationError("particle simulation needs a and c constant on each subdomain")
        a[k], c[k] = ak[0], ck[0]
    if np.any(np.diff(np.argsort(lo)) != 1) or np.any(np.diff(lo) <= 0):
        raise ConfigurationError("subdomains must be numbered left to right")
    D = kappa * a
    sigma = np.sqrt(2 * D * dt)
    width = hi - lo
    if np.any(sigma >= width):
        k = int(np.argmax(sigma / width))
        raise ConfigurationError(
            f"step std {sigma[k]:.3g} is not below the width {width[k]:.3g} of subdomain {k + 1}; reduce dt")

    p_left, p_right = np.zeros(N), np.zeros(N)
    b_left, b_right = np.zeros(N), np.zeros(N)
    r_left, r_right = np.ones(N), np.ones(N)
    for f in mesh.outer:
        k = f.left - 1
        p = crossing_probability(f.tau_left, kappa, a[k], dt)
        if np.isclose(f.center[0], lo[k]):
            p_left[k] = p
        else:
            p_right[k] = p
    for f in mesh.membranes:
        k, l = f.left - 1, f.right - 1
        if l != k + 1:
            raise ConfigurationError("1D membranes must join neighbouring subdomains")
        p_right[k] = crossing_probability(f.tau_left, kappa, a[k], dt)
        p_left[l] = crossing_probability(f.tau_right, kappa, a[l], dt)
        b_right[k] = f.b_left_to_right
        b_left[l] = f.b_right_to_left
        r_right[k] = np.sqrt(D[l] / D[k])
        r_left[l] = np.sqrt(D[k] / D[l])
    for name, arr in (("left", p_left), ("right", p_right)):
        if np.any(arr > 1):
            k = int(np.argmax(arr))
            raise ConfigurationError(
                f"crossing probability {arr[k]:.3g} > 1 at the {name} end of subdomain {k + 1}; reduce dt")
    return _Layout(lo=lo, hi=hi, sigma=sigma, p_left=p_left, p_right=p_right, b_left=b_left,
                   b_right=b_right, ratio_left=r_left, ratio_right=r_right,
                   kill=-np.expm1(-c * dt), N=N)


def _sample_initial(rng: np.random.Generator, mesh: PartitionedMesh, weights: np.ndarray, n: int):
    cell = rng.choice(mesh.n_cells, size=n, p=weights)
    left = mesh.centers[cell, 0] - mesh.volumes[cell] / 2
    x = left + mesh.volumes[cell] * rng.random(n)
    return x, mesh.labels[cell] - 1


def _run_block(mesh, lay: _Layout, weights, n, seed, block, steps, marks) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))
    x, sub = _sample_initial(rng, mesh, weights, n)
    counts = np.zeros((len(marks), lay.N), dtype=np.int64)
    mi = 0
    while mi < len(marks) and marks[mi] == 0:
        counts[mi] = np.bincount(sub, minlength=lay.N)
        mi += 1
    uniform_sigma = np.all(lay.sigma == lay.sigma[0])
    any_kill = np.any(lay.kill > 0)
    lo_p, hi_p = lay.lo[sub], lay.hi[sub]
    sig_p = None if uniform_sigma else lay.sigma[sub]
    for step in range(1, steps + 1):
        if mi >= len(marks):
            break
        if len(x):
            xi = rng.standard_normal(len(x))
            y = x + (lay.sigma[0] * xi if uniform_sigma else sig_p * xi)
            alive = np.ones(len(x), dtype=bool)
            out = np.flatnonzero((y < lo_p) | (y > hi_p))
            while len(out):
                k = sub[out]
                yy = y[out]
                left = yy < lo_p[out]
                edge = np.where(left, lay.lo[k], lay.hi[k])
                over = np.abs(yy - edge)
                p = np.where(left, lay.p_left[k], lay.p_right[k])
                passed = rng.random(len(out)) < p
                # reflected particles stay on their side
                y[out] = np.where(left, edge + over, edge - over)
                idx = out[passed]
                if len(idx):
                    lp = left[passed]
                    kp = k[passed]
                    b = np.where(lp, lay.b_left[kp], lay.b_right[kp])
                    survive = rng.random(len(idx)) < b
                    alive[idx[~survive]] = False
                    s_idx, s_left, s_k = idx[survive], lp[survive], kp[survive]
                    if len(s_idx):
                        ratio = np.where(s_left, lay.ratio_left[s_k], lay.ratio_right[s_k])
                        e = edge[passed][survive]
                        o = over[passed][survive] * ratio
                        nk = np.where(s_left, s_k - 1, s_k + 1)
                        y[s_idx] = np.where(s_left, e - o, e + o)
                        sub[s_idx] = nk
                        lo_p[s_idx] = lay.lo[nk]
                        hi_p[s_idx] = lay.hi[nk]
                        if sig_p is not None:
                            sig_p[s_idx] = lay.sigma[nk]
                chk = out[alive[out]]
                out = chk[(y[chk] < lo_p[chk]) | (y[chk] > hi_p[chk])]
            if any_kill:
                alive &= rng.random(len(x)) >= lay.kill[sub]
            x = y
            if not alive.all():
                x, sub, lo_p, hi_p = x[alive], sub[alive], lo_p[alive], hi_p[alive]
                if sig_p is not None:
                    sig_p = sig_p[alive]
        while mi < len(marks) and marks[mi] == step:
            counts[mi] = np.bincount(sub, minlength=lay.N)
            mi += 1
    return counts


def simulate(
    mesh: PartitionedMesh,
    coeff: CoefficientField,
    kappa: float,
    u0,
    n_particles: int,
    dt: float,
    t_grid,
    seed: int,
    workers: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> Occupancy:
    """Occupancy of each subdomain at the times in ``t_grid``.

    ``u0`` is a non-negative per-cell initial density; particles are drawn
    from it (piecewise uniform).  Times must be multiples of ``dt``.
    """
    n_particles = int(n_particles)
    if n_particles < 1:
        raise ConfigurationError("n_particles must be at least 1")
    kappa, dt = float(kappa), float(dt)
    if not (np.isfinite(kappa) and kappa > 0):
        raise ConfigurationError(f"kappa={kappa} must be positive")
    if not (np.isfinite(dt) and dt > 0):
        raise ConfigurationError(f"dt={dt} must be positive")
    seed = int(seed)
    if seed < 0:
        raise ConfigurationError("seed must be non-negative")
    if block_size < 1:
        raise ConfigurationError("block_size must be positive")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (mesh.n_cells,):
        raise ConfigurationError(f"initial density has shape {u0.shape}, mesh has {mesh.n_cells} cells")
    if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
        raise ConfigurationError("initial density must be finite and non-negative")
    w = u0 * mesh.volumes
    if w.sum() <= 0:
        raise ConfigurationError("initial density has zero mass")
    w = w / w.sum()
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ConfigurationError("t_grid must be non-empty, non-negative and strictly increasing")
    marks = np.rint(t / dt).astype(np.int64)
    if np.any(np.abs(marks * dt - t) > 1e-9 * np.maximum(t, dt)):
        raise ConfigurationError("every output time must be a multiple of dt")
    lay = _layout(mesh, coeff, kappa, dt)

    sizes = [block_size] * (n_particles // block_size)
    if n_particles % block_size:
        sizes.append(n_particles % block_size)
    workers = default_workers(workers)
    steps = int(marks[-1])
    args = [(mesh, lay, w, s, seed, b, steps, marks) for b, s in enumerate(sizes)]
    if workers == 1 or len(sizes) == 1:
        results = [_run_block(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(sizes))) as ex:
            results = list(ex.map(lambda a: _run_block(*a), args))
    counts = np.sum(results, axis=0)
    occ = counts / n_particles
    se = np.sqrt(occ * (1 - occ) / n_particles)
    return Occupancy(t=t, occupancy=occ, se=se, counts=counts, n_particles=n_particles)
