"""Independent reference computations used by the tests."""

import mpmath
import numpy as np


def expm_mp(M, t=1.0, dps=40):
    """exp(tM) in extended precision (mpmath), rounded to float."""
    with mpmath.workdps(dps):
        A = mpmath.matrix(np.asarray(M, dtype=float).tolist()) * mpmath.mpf(t)
        E = mpmath.expm(A)
        return np.array([[float(E[i, j]) for j in range(E.cols)] for i in range(E.rows)])


def dense_generator(mesh, coeff, kappa, orientation):
    """V L by keeping every trace as an unknown and taking a dense Schur complement.

    Written directly from the flux balances; shares no code with the sparse
    assembler's closed-form 2x2 elimination.
    """
    n = mesh.n_cells
    mem, out = mesh.membranes, mesh.outer
    m = 2 * len(mem) + len(out)
    Auu = np.zeros((n, n))
    Aug = np.zeros((n, m))
    Agu = np.zeros((m, n))
    Agg = np.zeros((m, m))
    a = coeff.a
    I = mesh.interior
    for i, j, area, di, dj in zip(I.cell_a, I.cell_b, I.area, I.dist_a, I.dist_b):
        T = area / (di / (kappa * a[i]) + dj / (kappa * a[j]))
        Auu[i, j] += T
        Auu[j, i] += T
        Auu[i, i] -= T
        Auu[j, j] -= T
    for f_idx, f in enumerate(mem):
        gl, gr = 2 * f_idx, 2 * f_idx + 1
        GL = kappa * a[f.cell_left] / f.dist_left
        GR = kappa * a[f.cell_right] / f.dist_right
        # cell balances: flux into the cell is area * G (g - u)
        Auu[f.cell_left, f.cell_left] -= f.area * GL
        Aug[f.cell_left, gl] += f.area * GL
        Auu[f.cell_right, f.cell_right] -= f.area * GR
        Aug[f.cell_right, gr] += f.area * GR
        # trace rows: G (g - u) + membrane flux = 0
        Agg[gl, gl] += GL
        Agu[gl, f.cell_left] -= GL
        Agg[gr, gr] += GR
        Agu[gr, f.cell_right] -= GR
        if orientation == "backward":
            Agg[gl, gl] += f.tau_left
            Agg[gl, gr] -= f.tau_left * f.b_left_to_right
            Agg[gr, gr] += f.tau_right
            Agg[gr, gl] -= f.tau_right * f.b_right_to_left
        else:
            Agg[gl, gl] += f.tau_left
            Agg[gl, gr] -= f.tau_right * f.b_right_to_left
            Agg[gr, gr] += f.tau_right
            Agg[gr, gl] -= f.tau_left * f.b_left_to_right
    base = 2 * len(mem)
    for o_idx, f in enumerate(out):
        g = base + o_idx
        G = kappa * a[f.cell_left] / f.dist_left
        Auu[f.cell_left, f.cell_left] -= f.area * G
        Aug[f.cell_left, g] += f.area * G
        Agg[g, g] += G + f.tau_left
        Agu[g, f.cell_left] -= G
    Auu -= np.diag(coeff.c * mesh.volumes)
    if m == 0:
        return Auu
    return Auu - Aug @ np.linalg.solve(Agg, Agu)


def two_state_mass(t, alpha, beta, v0=1.0):
    """Mass in state 1 of the chain 1 <-> 2 with rates alpha (1->2), beta (2->1), starting from (v0, 1 - v0)."""
    s = alpha + beta
    eq = beta / s
    return eq + (v0 - eq) * np.exp(-s * t)


def kinase_active(t, q):
    """Scalar linear ODE k' = -(q+1) k + q, k(0) = 0."""
    return q / (q + 1) * (1 - np.exp(-(q + 1) * np.asarray(t)))
