"""Dense two-phase revised simplex with exact dual values.

Deterministic LP backend for the dispatch and pricing layers. Problems built
by this package stay in the low hundreds of variables, so the basis system is
solved from scratch every iteration (dense O(m^3)); robustness and exact duals
beat speed at this scale. An alternative backend satisfying :class:`LpSolver`
(e.g. the bundled scipy adapter) can be swapped in by callers.

Convention: minimize c @ x subject to A_eq @ x = b_eq, A_ub @ x <= b_ub and
lo <= x <= hi. Marginals are sensitivities d(objective)/d(rhs), matching
scipy.optimize.linprog: equality marginals are sign-free, inequality
marginals are <= 0 at a minimum. Determinism: entering variable = most
negative reduced cost with lowest-index tie-break (Bland's rule after a stall,
which also rules out cycling); leaving variable = lowest ratio, ties resolved
toward artificials then lowest column index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import Infeasible, NotConverged, SingularSystem, UnboundedProblem

_RCOST_TOL = 1e-9     # reduced-cost optimality threshold
_PIVOT_TOL = 1e-9     # minimum acceptable pivot magnitude
_FEAS_TOL = 1e-7      # phase-1 objective considered zero below this
_DEGEN_TOL = 1e-9     # basic value treated as degenerate below this


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    dual_objective: float
    eq_marginals: np.ndarray
    ub_marginals: np.ndarray
    status: str
    iterations: int
    degenerate: bool


class LpSolver(Protocol):
    def solve(self, c, A_eq=None, b_eq=None, A_ub=None, b_ub=None,
              bounds=None) -> LpSolution: ...


def _normalize(c, A_eq, b_eq, A_ub, b_ub, bounds):
    c = np.asarray(c, dtype=float)
    n = c.size
    if A_eq is None:
        A_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    else:
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
    if A_ub is None:
        A_ub = np.zeros((0, n))
        b_ub = np.zeros(0)
    else:
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float))
    if bounds is None:
        bounds = [(0.0, None)] * n
    bounds = [(None if lo is None else float(lo), None if hi is None else float(hi))
              for lo, hi in bounds]
    return c, A_eq, b_eq, A_ub, b_ub, bounds


class RevisedSimplex:
    """Two-phase simplex over the equality-form standard problem."""

    def __init__(self, max_iterations: int = 20000):
        self.max_iterations = max_iterations

    def solve(self, c, A_eq=None, b_eq=None, A_ub=None, b_ub=None,
              bounds=None) -> LpSolution:
        c, A_eq, b_eq, A_ub, b_ub, bounds = _normalize(c, A_eq, b_eq, A_ub, b_ub, bounds)
        n = c.size
        m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]

        # Map original variables onto nonnegative columns: finite lower bounds
        # shift, free variables split into +/- parts. Finite upper bounds add
        # internal range rows after the user's inequality block.
        col_of = []        # per original var: list of (column, sign)
        shift = np.zeros(n)
        ncol = 0
        bound_rows = []    # (columns, signs, rhs)
        for j, (lo, hi) in enumerate(bounds):
            if lo is not None:
                shift[j] = lo
                col_of.append([(ncol, 1.0)])
                ncol += 1
                if hi is not None:
                    bound_rows.append(([ncol - 1], [1.0], hi - lo))
            else:
                col_of.append([(ncol, 1.0), (ncol + 1, -1.0)])
                ncol += 2
                if hi is not None:
                    bound_rows.append(([ncol - 2, ncol - 1], [1.0, -1.0], hi))
        m_bnd = len(bound_rows)
        m = m_eq + m_ub + m_bnd

        def expand(mat):
            out = np.zeros((mat.shape[0], ncol))
            for j in range(n):
                for col, sgn in col_of[j]:
                    out[:, col] += sgn * mat[:, j]
            return out

        A_rows = np.zeros((m, ncol))
        rhs = np.zeros(m)
        A_rows[:m_eq] = expand(A_eq)
        rhs[:m_eq] = b_eq - A_eq @ shift
        A_rows[m_eq:m_eq + m_ub] = expand(A_ub)
        rhs[m_eq:m_eq + m_ub] = b_ub - A_ub @ shift
        for k, (cols, sgns, r) in enumerate(bound_rows):
            for col, sgn in zip(cols, sgns):
                A_rows[m_eq + m_ub + k, col] = sgn
            rhs[m_eq + m_ub + k] = r

        c_u = np.zeros(ncol)
        for j in range(n):
            for col, sgn in col_of[j]:
                c_u[col] += sgn * c[j]
        offset = float(c @ shift)

        # Slack columns for every inequality row, then one artificial per row.
        n_slack = m_ub + m_bnd
        N = ncol + n_slack + m
        A = np.zeros((m, N))
        A[:, :ncol] = A_rows
        for k in range(n_slack):
            A[m_eq + k, ncol + k] = 1.0
        row_sign = np.ones(m)
        neg = rhs < 0.0
        row_sign[neg] = -1.0
        A[neg, :ncol + n_slack] *= -1.0
        rhs = rhs * row_sign
        art0 = ncol + n_slack
        for i in range(m):
            A[i, art0 + i] = 1.0

        if m == 0:
            if np.any(c_u < -_RCOST_TOL):
                raise UnboundedProblem("no constraints and a negative cost direction")
            x = shift.copy()
            return LpSolution(x=x, objective=float(c @ x), dual_objective=float(c @ x),
                              eq_marginals=np.zeros(0), ub_marginals=np.zeros(0),
                              status="optimal", iterations=0, degenerate=False)

        basis = list(range(art0, art0 + m))
        allow = np.ones(N, dtype=bool)
        c1 = np.zeros(N)
        c1[art0:] = 1.0
        basis, x_b, _y, it1 = self._iterate(A, rhs, c1, basis, allow, art0)
        if float(c1[basis] @ x_b) > _FEAS_TOL * max(1.0, float(np.abs(rhs).sum())):
            raise Infeasible("phase-1 optimum is positive: no feasible point")
        basis, x_b = self._expel_artificials(A, rhs, basis, art0)

        c2 = np.zeros(N)
        c2[:ncol] = c_u
        allow = np.ones(N, dtype=bool)
        allow[art0:] = False
        basis, x_b, y, it2 = self._iterate(A, rhs, c2, basis, allow, art0)

        u = np.zeros(N)
        u[basis] = np.maximum(x_b, 0.0)
        x = shift.copy()
        for j in range(n):
            for col, sgn in col_of[j]:
                x[j] += sgn * u[col]
        objective = float(c @ x)
        dual_objective = float(y @ rhs) + offset
        eq_marginals = y[:m_eq] * row_sign[:m_eq]
        ub_marginals = y[m_eq:m_eq + m_ub] * row_sign[m_eq:m_eq + m_ub]
        degenerate = bool(np.any(np.abs(x_b) < _DEGEN_TOL))
        return LpSolution(x=x, objective=objective, dual_objective=dual_objective,
                          eq_marginals=eq_marginals, ub_marginals=ub_marginals,
                          status="optimal", iterations=it1 + it2,
                          degenerate=degenerate)

    def _iterate(self, A, b, c, basis, allow, art0):
        m, N = A.shape
        bland = False
        stall = 0
        best = np.inf
        x_b = None
        y = np.zeros(m)
        for it in range(self.max_iterations):
            B = A[:, basis]
            try:
                x_b = np.linalg.solve(B, b)
                y = np.linalg.solve(B.T, c[basis])
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(f"simplex basis became singular: {exc}") from exc
            r = c - A.T @ y
            r[basis] = 0.0
            mask = allow & (r < -_RCOST_TOL)
            if not mask.any():
                return basis, x_b, y, it
            cand = np.flatnonzero(mask)
            enter = int(cand[0]) if bland else int(cand[np.lexsort((cand, r[cand]))[0]])
            d = np.linalg.solve(B, A[:, enter])
            pos = np.flatnonzero(d > _PIVOT_TOL)
            if pos.size == 0:
                raise UnboundedProblem("unbounded ray in simplex phase")
            ratios = x_b[pos] / d[pos]
            rmin = float(ratios.min())
            ties = pos[ratios <= rmin + 1e-9 * (1.0 + abs(rmin))]
            if bland:
                # Plain Bland ordering on both ends rules out cycling.
                leave = min(ties, key=lambda i: basis[i])
            else:
                # Prefer expelling artificials, then lowest column index.
                leave = min(ties, key=lambda i: (0 if basis[i] >= art0 else 1, basis[i]))
            obj = float(c[basis] @ x_b)
            if obj < best - 1e-12 * (1.0 + abs(best)):
                best = obj
                stall = 0
            else:
                stall += 1
                if stall > 2 * m:
                    bland = True
            basis[int(leave)] = enter
        raise NotConverged("simplex iteration limit reached")

    def _expel_artificials(self, A, b, basis, art0):
        """Pivot basic artificials out on any structural column; redundant rows
        keep their artificial basic at zero (it is barred from re-entering)."""
        m = A.shape[0]
        for i in range(m):
            if basis[i] < art0:
                continue
            B = A[:, basis]
            try:
                binv_row = np.linalg.solve(B.T, np.eye(m)[:, i])
            except np.linalg.LinAlgError:
                continue
            row = binv_row @ A[:, :art0]
            row[np.asarray(basis)[np.asarray(basis) < art0]] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-7)
            cand = [j for j in cand if j not in basis]
            if cand:
                basis[i] = int(cand[0])
        B = A[:, basis]
        x_b = np.linalg.solve(B, b)
        return basis, x_b


class ScipyLinprogSolver:
    """Adapter proving the backend swap point; used as a test oracle."""

    def solve(self, c, A_eq=None, b_eq=None, A_ub=None, b_ub=None,
              bounds=None) -> LpSolution:
        from scipy.optimize import linprog

        c, A_eq, b_eq, A_ub, b_ub, bounds = _normalize(c, A_eq, b_eq, A_ub, b_ub, bounds)
        res = linprog(c, A_ub=A_ub if A_ub.size else None,
                      b_ub=b_ub if b_ub.size else None,
                      A_eq=A_eq if A_eq.size else None,
                      b_eq=b_eq if b_eq.size else None,
                      bounds=bounds, method="highs")
        if res.status == 2:
            raise Infeasible(res.message)
        if res.status == 3:
            raise UnboundedProblem(res.message)
        if not res.success:
            raise SingularSystem(f"linprog failed: {res.message}")
        eq_m = np.asarray(res.eqlin.marginals) if A_eq.size else np.zeros(0)
        ub_m = np.asarray(res.ineqlin.marginals) if A_ub.size else np.zeros(0)
        dual = float(b_eq @ eq_m) + float(b_ub @ ub_m) if (A_eq.size or A_ub.size) else res.fun
        # Bound duals contribute to the dual objective as well.
        lower = np.array([lo if lo is not None else 0.0 for lo, _ in bounds])
        upper = np.array([hi if hi is not None else 0.0 for _, hi in bounds])
        low_m = np.asarray(res.lower.marginals)
        up_m = np.asarray(res.upper.marginals)
        dual += float(lower @ low_m) + float(upper @ up_m)
        return LpSolution(x=np.asarray(res.x), objective=float(res.fun),
                          dual_objective=dual, eq_marginals=eq_m, ub_marginals=ub_m,
                          status="optimal", iterations=int(res.nit),
                          degenerate=False)


DEFAULT_SOLVER: LpSolver = RevisedSimplex()
