"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np
import scipy.linalg

X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


def lp_vertex_oracle(c, A_ub, b_ub, lower, upper, A_eq=None, b_eq=None, maximize=False, tol=1e-9):
    """Best objective over all basic feasible points, or ``None`` if infeasible.

    Every vertex of a bounded polytope is the solution of ``n`` linearly
    independent active constraints, so enumerating all ``n``-subsets of the
    constraint rows (bounds included) and keeping the feasible solutions
    finds the optimum.
    """
    c = np.asarray(c, float)
    n = c.size
    rows, rhs = [], []
    for a, b in zip(A_ub, b_ub):
        rows.append(a)
        rhs.append(b)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1
        rows += [e, -e]
        rhs += [upper[j], -lower[j]]
    rows, rhs = np.array(rows), np.array(rhs)
    eq_rows = np.zeros((0, n)) if A_eq is None else np.atleast_2d(A_eq)
    eq_rhs = np.zeros(0) if b_eq is None else np.atleast_1d(b_eq)
    k = n - eq_rows.shape[0]
    best = None
    for subset in itertools.combinations(range(len(rows)), k):
        M = np.vstack([eq_rows, rows[list(subset)]])
        r = np.concatenate([eq_rhs, rhs[list(subset)]])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, r)
        if np.all(rows @ x <= rhs + tol) and np.allclose(eq_rows @ x, eq_rhs, atol=tol):
            val = c @ x
            if best is None or (val > best if maximize else val < best):
                best = val
    return best


def propagate_dense(theta, T, wx, wz):
    """Time-ordered product of scipy ``expm`` steps."""
    theta = np.atleast_1d(np.asarray(theta, float))
    h = T / theta.size
    U = np.eye(2, dtype=complex)
    for th in theta:
        U = scipy.linalg.expm(-1j * h * (th * wx * X + wz * Z)) @ U
    return U


def fidelity_dense(W, U):
    n = W.shape[0]
    return abs(np.trace(W.conj().T @ U)) ** 2 / n**2


def fd_gradient(fun, x, step=1e-5):
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g
