"""Trust-region subproblem of the SCP iteration.

The subproblem is a linear program in epigraph form: maximise ``f0`` subject
to ``f_i + g_i . d >= f0`` for every sample, the trust box ``|d_k| <= rho``
and the linear parts of the control constraint set.  Quadratic constraints
(fluence, per-block amplitude balls) are imposed by tangent cutting planes
around the LP.  The LP itself is solved by a dense bounded-variable primal
simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import UnboundedError, ValidationError

FEAS_TOL = 1e-9
MAX_CUTS = 100


@dataclass
class LinearProgram:
    """``min c.x`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``lower <= x <= upper``.

    Missing bounds default to a free variable.  Set ``maximize`` to flip the
    sense of the objective.
    """

    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "eq")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).copy()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValidationError("bounds must have one entry per variable")

    @property
    def n(self) -> int:
        return self.c.size


def _rows(A, b, n, name):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape != (b.size, n):
        raise ValidationError(f"A_{name} has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass
class LPResult:
    x: Optional[np.ndarray]
    objective: float
    status: str  # "optimal" | "infeasible"
    iterations: int = 0


class _Tableau:
    """Dense tableau ``B^-1 A`` with basic values and nonbasic bound states."""

    def __init__(self, A, b, ub, basis, piv_tol=1e-9, opt_tol=1e-10):
        self.T = A.copy()
        self.beta = b.copy()
        self.ub = ub.copy()
        self.basis = np.array(basis)
        self.at_upper = np.zeros(A.shape[1], dtype=bool)
        self.piv_tol = piv_tol
        self.opt_tol = opt_tol
        self.iterations = 0

    def pivot(self, r, j, value):
        a = self.T[:, j].copy()
        self.T[r] /= a[r]
        a[r] = 0.0
        self.T -= np.outer(a, self.T[r])
        self.beta[r] = value
        self.basis[r] = j
        self.at_upper[j] = False

    def run(self, cost, bland_after, max_iter):
        """Primal simplex on ``cost``; returns ``"optimal"``, raises if unbounded."""
        m, ncol = self.T.shape
        degenerate = 0
        bland = False
        nonbasic = np.ones(ncol, dtype=bool)
        for _ in range(max_iter):
            nonbasic[:] = True
            nonbasic[self.basis] = False
            d = cost - cost[self.basis] @ self.T
            eligible = nonbasic & (self.ub > 0) & (
                ((~self.at_upper) & (d < -self.opt_tol)) | (self.at_upper & (d > self.opt_tol))
            )
            if not eligible.any():
                return "optimal"
            idx = np.flatnonzero(eligible)
            j = idx[0] if bland else idx[np.argmax(np.abs(d[idx]))]
            s = -1.0 if self.at_upper[j] else 1.0
            sa = s * self.T[:, j]
            ratio = np.full(m, np.inf)
            to_upper = np.zeros(m, dtype=bool)
            dec = sa > self.piv_tol
            ratio[dec] = np.maximum(self.beta[dec], 0.0) / sa[dec]
            ubB = self.ub[self.basis]
            inc = (sa < -self.piv_tol) & np.isfinite(ubB)
            ratio[inc] = np.maximum(ubB[inc] - self.beta[inc], 0.0) / (-sa[inc])
            to_upper[inc] = True
            t_flip = self.ub[j]
            t_row = ratio.min() if m else np.inf
            if not np.isfinite(min(t_row, t_flip)):
                raise UnboundedError("linear program is unbounded")
            self.iterations += 1
            if t_flip <= t_row:
                self.beta -= t_flip * sa
                self.at_upper[j] = not self.at_upper[j]
                step = t_flip
            else:
                ties = np.flatnonzero(ratio <= t_row + 1e-12)
                r = ties[np.argmin(self.basis[ties])] if bland else ties[np.argmax(np.abs(sa[ties]))]
                leaving = self.basis[r]
                self.beta -= t_row * sa
                value = t_row if s > 0 else self.ub[j] - t_row
                self.pivot(r, j, value)
                self.at_upper[leaving] = bool(to_upper[r])
                step = t_row
            if step <= 1e-12:
                degenerate += 1
                if degenerate >= bland_after:
                    bland = True
            else:
                degenerate = 0
        raise RuntimeError(f"simplex did not converge in {max_iter} iterations")


def solve_lp(lp: LinearProgram, tol: float = FEAS_TOL) -> LPResult:
    """Solve ``lp`` by a two-phase bounded-variable simplex.

    Dantzig pricing switches to Bland's rule after a run of degenerate
    pivots.  Infeasibility is reported through ``status``; an unbounded
    problem raises :class:`UnboundedError`.
    """
    n = lp.n
    lo, up = lp.lower, lp.upper
    if np.any(lo > up + tol):
        return LPResult(None, np.nan, "infeasible")
    up = np.maximum(up, lo)

    # x = x0 + D y with y >= 0 (and y <= yub)
    cols, x0, yub = [], np.zeros(n), []
    for j in range(n):
        if np.isfinite(lo[j]):
            x0[j] = lo[j]
            cols.append((j, 1.0))
            yub.append(up[j] - lo[j])
        elif np.isfinite(up[j]):
            x0[j] = up[j]
            cols.append((j, -1.0))
            yub.append(np.inf)
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
            yub.extend([np.inf, np.inf])
    ny = len(cols)
    D = np.zeros((n, ny))
    for k, (j, sgn) in enumerate(cols):
        D[j, k] = sgn

    m_ub, m_eq = lp.b_ub.size, lp.b_eq.size
    m = m_ub + m_eq
    A = np.zeros((m, ny + m_ub))
    A[:m_ub, :ny] = lp.A_ub @ D
    A[:m_ub, ny:] = np.eye(m_ub)
    A[m_ub:, :ny] = lp.A_eq @ D
    b = np.concatenate([lp.b_ub - lp.A_ub @ x0, lp.b_eq - lp.A_eq @ x0])
    ub = np.concatenate([yub, np.full(m_ub, np.inf)])
    cost2 = np.concatenate([(-lp.c if lp.maximize else lp.c) @ D, np.zeros(m_ub)])

    # phase I: artificials on rows that have no usable slack
    need_art = np.ones(m, dtype=bool)
    need_art[:m_ub] = b[:m_ub] < 0
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    arts = np.flatnonzero(need_art)
    nbase = A.shape[1]
    A = np.hstack([A, np.zeros((m, arts.size))])
    A[arts, nbase + np.arange(arts.size)] = 1.0
    ub = np.concatenate([ub, np.full(arts.size, np.inf)])
    basis = np.zeros(m, dtype=int)
    basis[:m_ub] = ny + np.arange(m_ub)
    basis[arts] = nbase + np.arange(arts.size)
    tab = _Tableau(A, b, ub, basis)
    bland_after = 2 * (n + m)
    max_iter = 50 * (A.shape[1] + m) + 100

    if arts.size:
        cost1 = np.zeros(A.shape[1])
        cost1[nbase:] = 1.0
        tab.run(cost1, bland_after, max_iter)
        infeas = cost1[tab.basis] @ tab.beta
        if infeas > tol * max(1.0, np.max(np.abs(b))):
            return LPResult(None, np.nan, "infeasible", tab.iterations)
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if tab.basis[r] < nbase:
                continue
            row = tab.T[r, :nbase].copy()
            row[tab.basis[tab.basis < nbase]] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size == 0:
                keep[r] = False  # redundant row
                continue
            j = cand[np.argmax(np.abs(row[cand]))]
            value = tab.ub[j] if tab.at_upper[j] else 0.0
            tab.pivot(r, j, value)
        tab.T, tab.beta, tab.basis = tab.T[keep], tab.beta[keep], tab.basis[keep]
        tab.ub[nbase:] = 0.0

    cost = np.concatenate([cost2, np.zeros(arts.size)])
    tab.run(cost, bland_after, max_iter)

    y = np.where(tab.at_upper, tab.ub, 0.0)
    y[tab.basis] = tab.beta
    y = y[:ny]
    x = x0 + D @ y
    obj = float(lp.c @ x)
    return LPResult(x, obj, "optimal", tab.iterations)


# --------------------------------------------------------------------------
# control constraint sets


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Convex design set built from the usual control constraints.

    ``box``: ``(c_min, c_max)`` on every field value; ``slew``: bound on
    ``|theta_{k+1} - theta_k| / h``; ``area``: bound on ``||theta||_1 h``;
    ``linear``: ``(a, b)`` with ``a theta = b``; ``fluence``: bound on
    ``theta^T B theta`` with ``B = fluence_matrix`` (default ``h I``);
    ``balls``: ``(start, stop, radius)`` triples bounding the 2-norm of
    ``theta[start:stop]``.
    """

    box: Optional[tuple] = None
    slew: Optional[float] = None
    area: Optional[float] = None
    linear: Optional[tuple] = None
    fluence: Optional[float] = None
    fluence_matrix: Optional[np.ndarray] = None
    balls: tuple = ()

    def __post_init__(self):
        if self.box is not None:
            lo, hi = self.box
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValidationError(f"invalid box {self.box}")
        for name in ("slew", "area"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} bound must be finite and >= 0")
        if self.fluence is not None and not (self.fluence > 0 and np.isfinite(self.fluence)):
            raise ValidationError("fluence bound must be finite and > 0")
        for start, stop, radius in self.balls:
            if not radius > 0 or stop <= start:
                raise ValidationError(f"invalid ball ({start}, {stop}, {radius})")

    def with_fluence(self, gamma: Optional[float]) -> "ConstraintSet":
        return ConstraintSet(self.box, self.slew, self.area, self.linear, gamma, self.fluence_matrix, self.balls)

    def quadratics(self, N: int, h: float):
        """``(index, Q, bound)`` triples for ``x[index]^T Q x[index] <= bound``."""
        out = []
        if self.fluence is not None:
            B = h * np.eye(N) if self.fluence_matrix is None else np.asarray(self.fluence_matrix, dtype=float)
            out.append((np.arange(N), B, float(self.fluence)))
        for start, stop, radius in self.balls:
            idx = np.arange(start, stop)
            out.append((idx, np.eye(idx.size), float(radius) ** 2))
        return out

    def violation(self, theta, h: float) -> float:
        """Largest constraint violation of ``theta`` (0 when feasible)."""
        x = np.asarray(theta, dtype=float)
        v = [0.0]
        if self.box is not None:
            v += [self.box[0] - x.min(), x.max() - self.box[1]]
        if self.slew is not None and x.size > 1:
            v.append(np.max(np.abs(np.diff(x))) - self.slew * h)
        if self.area is not None:
            v.append(np.sum(np.abs(x)) * h - self.area)
        if self.linear is not None:
            a, b = self.linear
            v.append(np.max(np.abs(np.atleast_2d(a) @ x - np.atleast_1d(b))))
        for idx, Q, bound in self.quadratics(x.size, h):
            xs = x[idx]
            v.append(np.sqrt(max(xs @ Q @ xs, 0.0)) - np.sqrt(bound))
        return float(max(v))


UNCONSTRAINED = ConstraintSet()


def assemble_constraints(theta, cset: ConstraintSet, rho: float, h: float) -> LinearProgram:
    """Linear constraints on the increment ``d`` (plus auxiliary variables).

    Variables are ``[d_1..d_N]`` followed by ``N`` split variables when an
    area bound is present.  Box and trust bounds become variable bounds;
    slew and area become inequality rows; quadratic constraints are left to
    the cutting-plane loop.
    """
    theta = np.asarray(theta, dtype=float)
    N = theta.size
    naux = N if cset.area is not None else 0
    nv = N + naux
    lower = np.full(nv, -np.inf)
    upper = np.full(nv, np.inf)
    lower[:N], upper[:N] = -rho, rho
    if cset.box is not None:
        lower[:N] = np.maximum(lower[:N], cset.box[0] - theta)
        upper[:N] = np.minimum(upper[:N], cset.box[1] - theta)
    rows, rhs = [], []
    if cset.slew is not None and N > 1:
        Dm = np.zeros((N - 1, nv))
        Dm[:, 1:N] += np.eye(N - 1)
        Dm[:, : N - 1] -= np.eye(N - 1)
        dtheta = np.diff(theta)
        rows += [Dm, -Dm]
        rhs += [cset.slew * h - dtheta, cset.slew * h + dtheta]
    if naux:
        lower[N:] = 0.0
        I = np.eye(N)
        split = np.zeros((2 * N, nv))
        split[:N, :N], split[:N, N:] = I, -I
        split[N:, :N], split[N:, N:] = -I, -I
        rows.append(split)
        rhs.append(np.concatenate([-theta, theta]))
        total = np.zeros((1, nv))
        total[0, N:] = h
        rows.append(total)
        rhs.append([cset.area])
    A_eq = b_eq = None
    if cset.linear is not None:
        a, b = cset.linear
        a = np.atleast_2d(np.asarray(a, dtype=float))
        A_eq = np.zeros((a.shape[0], nv))
        A_eq[:, :N] = a
        b_eq = np.atleast_1d(b) - a @ theta
    A_ub = np.vstack(rows) if rows else None
    b_ub = np.concatenate([np.asarray(r, dtype=float) for r in rhs]) if rhs else None
    return LinearProgram(np.zeros(nv), A_ub, b_ub, A_eq, b_eq, lower, upper)


@dataclass
class SubproblemSolution:
    increment: np.ndarray
    f0: float
    cuts_added: int
    status: str  # "optimal" | "infeasible"
    cuts: list = field(default_factory=list)


def _tangent_cut(x, idx, Q, bound, N):
    """Tangent plane at the radial projection of ``x`` onto the quadric boundary."""
    xs = x[idx]
    xp = xs * np.sqrt(bound / (xs @ Q @ xs))
    a = np.zeros(N)
    a[idx] = Q @ xp
    scale = np.linalg.norm(a)
    return a / scale, bound / scale


def _shrink_to_quadratics(theta, d, quads):
    """Largest ``lam`` in ``[0, 1]`` keeping ``theta + lam d`` inside every quadric."""
    lam = 1.0
    for idx, Q, bound in quads:
        x0, dd = theta[idx], d[idx]
        qa, qb, qc = dd @ Q @ dd, 2 * x0 @ Q @ dd, x0 @ Q @ x0 - bound
        if qa * lam * lam + qb * lam + qc <= 0 or qa <= 0:
            continue
        disc = max(qb * qb - 4 * qa * qc, 0.0)
        root = (-qb + np.sqrt(disc)) / (2 * qa)
        lam = min(lam, max(root, 0.0))
    return lam


def solve_subproblem(f, g, theta, cset: ConstraintSet, rho: float, h: float,
                     cuts=(), max_cuts: int = MAX_CUTS) -> SubproblemSolution:
    """Best increment for the worst sampled linearised fidelity.

    ``f`` has the sampled fidelities and ``g[i]`` the gradient at sample
    ``i``.  ``cuts`` are previously generated half-spaces ``a.x <= b`` in
    absolute field coordinates; they stay valid across iterations and are
    returned (with any new ones) in the solution.
    """
    f = np.asarray(f, dtype=float).reshape(-1)
    g = np.atleast_2d(np.asarray(g, dtype=float))
    theta = np.asarray(theta, dtype=float)
    L, N = g.shape
    if f.size != L or N != theta.size:
        raise ValidationError(f"shape mismatch: f {f.shape}, g {g.shape}, theta {theta.shape}")
    if not (rho > 0 and np.all(np.isfinite(g))):
        raise ValidationError("need rho > 0 and finite gradients")
    if not np.any(g) and cset.violation(theta, h) <= FEAS_TOL:
        # flat model: every feasible step is optimal, stay put
        return SubproblemSolution(np.zeros(N), float(f.min()), 0, "optimal", list(cuts))
    base = assemble_constraints(theta, cset, rho, h)
    nv = base.n
    quads = cset.quadratics(N, h)
    cuts = list(cuts)

    # scaled variables: z = d / rho for the increment, phi for the epigraph
    fmin = f.min()
    gs = np.max(np.abs(g)) or 1.0
    gh = g / gs
    colscale = np.ones(nv + 1)
    colscale[:N] = rho

    # rows that cannot bind anywhere in the trust box are left out: a sample
    # whose lowest model value exceeds every sample's highest, and cuts that
    # the box cannot reach
    reach = rho * np.abs(g).sum(axis=1)
    live = f - reach <= np.min(f + reach)

    def build():
        A_rows = [np.hstack([-gh[live], np.zeros((live.sum(), nv - N)), np.ones((live.sum(), 1))])]
        b_rows = [(f[live] - fmin) / (gs * rho)]
        if base.A_ub.size:
            A_rows.append(np.hstack([base.A_ub, np.zeros((base.A_ub.shape[0], 1))]) * colscale)
            b_rows.append(base.b_ub)
        active = [(a, b) for a, b in cuts if a @ theta + rho * np.abs(a).sum() >= b - FEAS_TOL]
        if active:
            ac = np.array([a for a, _ in active])
            bc = np.array([b for _, b in active]) - ac @ theta
            A_rows.append(np.hstack([ac, np.zeros((len(active), nv - N + 1))]) * colscale)
            b_rows.append(bc)
        A_eq = b_eq = None
        if base.A_eq.size:
            A_eq = np.hstack([base.A_eq, np.zeros((base.A_eq.shape[0], 1))]) * colscale
            b_eq = base.b_eq
        lower = np.append(base.lower, -np.abs(gh).sum(axis=1).max() - 1.0) / colscale
        upper = np.append(base.upper, np.inf) / colscale
        c = np.zeros(nv + 1)
        c[-1] = 1.0
        return LinearProgram(c, np.vstack(A_rows), np.concatenate(b_rows), A_eq, b_eq, lower, upper, maximize=True)

    added = 0
    while True:
        res = solve_lp(build())
        if res.status != "optimal":
            return SubproblemSolution(np.zeros(N), float(fmin), added, "infeasible", cuts)
        d = res.x[:N] * rho
        x = theta + d
        violated = [q for q in quads if np.sqrt(max(x[q[0]] @ q[1] @ x[q[0]], 0.0)) - np.sqrt(q[2]) > FEAS_TOL]
        if not violated or added >= max_cuts:
            break
        for idx, Q, bound in violated:
            cuts.append(_tangent_cut(x, idx, Q, bound, N))
            added += 1
    if violated:
        d = d * _shrink_to_quadratics(theta, d, quads)
    d = np.clip(d, -rho, rho)
    f0 = float(np.min(f + g @ d))
    return SubproblemSolution(d, f0, added, "optimal", cuts)
