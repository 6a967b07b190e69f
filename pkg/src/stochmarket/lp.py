"""Bounded-variable primal simplex with row duals and reduced costs.

The solver works on dense numpy arrays and is meant for desk-scale models
(a few thousand columns). Pivoting is deterministic: Dantzig pricing with a
smallest-index tie break, switching to Bland's rule once a run of degenerate
pivots exceeds a fixed budget.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

INF = np.inf
LE, EQ, GE = "<=", "=", ">="

FEAS_TOL = 1e-8
OPT_TOL = 1e-8
PIVOT_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical"


@dataclass
class LinearProgram:
    """min c @ x  s.t.  A x (sense) b,  lower <= x <= upper.

    The constraint matrix is kept as sparse triplets (row, col, value);
    duplicate entries are summed.
    """

    n_vars: int
    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    senses: list
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.senses)

    def dense_matrix(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_vars))
        np.add.at(A, (self.rows, self.cols), self.vals)
        return A

    def check(self):
        if len(self.c) != self.n_vars or len(self.lower) != self.n_vars or len(self.upper) != self.n_vars:
            raise ValueError("column arrays have inconsistent lengths")
        if len(self.rhs) != self.n_rows:
            raise ValueError("rhs length does not match row count")
        if len(self.rows) and (self.rows.min() < 0 or self.rows.max() >= self.n_rows):
            raise ValueError("row index out of range")
        if len(self.cols) and (self.cols.min() < 0 or self.cols.max() >= self.n_vars):
            raise ValueError("column index out of range")
        for arr in (self.c, self.vals, self.rhs):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coefficient")
        for s in self.senses:
            if s not in (LE, EQ, GE):
                raise ValueError(f"unknown row sense {s!r}")


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    basis: tuple = ()
    iterations: int = 0
    message: str = ""
    warm: object = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class LpBuilder:
    """Incremental construction of a LinearProgram with named blocks."""

    def __init__(self):
        self.c: list[float] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.names: list[str] = []
        self._r: list[int] = []
        self._c: list[int] = []
        self._v: list[float] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []

    def add_var(self, name="", cost=0.0, lb=0.0, ub=INF) -> int:
        self.c.append(float(cost))
        self.lower.append(-INF if lb is None else float(lb))
        self.upper.append(INF if ub is None else float(ub))
        self.names.append(name)
        return len(self.c) - 1

    def add_row(self, coeffs, sense, rhs, name="") -> int:
        i = len(self.senses)
        for j, v in coeffs:
            if v != 0.0:
                self._r.append(i)
                self._c.append(j)
                self._v.append(float(v))
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name)
        return i

    def build(self) -> LinearProgram:
        return LinearProgram(
            n_vars=len(self.c),
            c=np.array(self.c, dtype=float),
            rows=np.array(self._r, dtype=int),
            cols=np.array(self._c, dtype=int),
            vals=np.array(self._v, dtype=float),
            senses=list(self.senses),
            rhs=np.array(self.rhs, dtype=float),
            lower=np.array(self.lower, dtype=float),
            upper=np.array(self.upper, dtype=float),
        )


@dataclass
class WarmStart:
    """Basis of a previous solve: basic column indices (structurals then logicals)
    and which nonbasic columns rest at their upper bound."""

    basis: np.ndarray
    at_upper: np.ndarray


class _Simplex:
    """One-shot solver state. Columns: structurals, logicals, artificials."""

    REFACTOR_EVERY = 100
    DEGENERATE_BUDGET = 40
    BOUND_TOL = 1e-11

    def __init__(self, lp: LinearProgram, max_iters: int | None = None):
        self.lp = lp
        m, n = lp.n_rows, lp.n_vars
        self.m, self.n = m, n
        sign = np.array([-1.0 if s == GE else 1.0 for s in lp.senses])
        self.logical_sign = sign
        # column-major triplets for structurals + logicals; artificials appended later
        order = np.lexsort((lp.rows, lp.cols))
        self.t_row = np.concatenate([lp.rows[order], np.arange(m)]).astype(int)
        self.t_col = np.concatenate([lp.cols[order], n + np.arange(m)]).astype(int)
        self.t_val = np.concatenate([lp.vals[order], sign])
        self.lo = np.concatenate([lp.lower, np.zeros(m)])
        self.up = np.concatenate([lp.upper, np.array([0.0 if s == EQ else INF for s in lp.senses])])
        self.b = lp.rhs.astype(float)
        self.max_iters = max_iters or 50 * (m + n) + 1000
        self.iterations = 0
        self.n_art = 0
        self._index_columns()

    def _index_columns(self):
        ncol = len(self.lo)
        starts = np.searchsorted(self.t_col, np.arange(ncol + 1), side="left")
        self.col_start = starts

    def _column(self, j):
        a, b = self.col_start[j], self.col_start[j + 1]
        return self.t_row[a:b], self.t_val[a:b]

    def _times_x(self, x):
        out = np.zeros(self.m)
        np.add.at(out, self.t_row, self.t_val * x[self.t_col])
        return out

    def _transpose_times(self, y):
        return np.bincount(self.t_col, weights=self.t_val * y[self.t_row], minlength=len(self.lo))

    def _rest(self, j):
        if np.isfinite(self.lo[j]):
            return self.lo[j]
        if np.isfinite(self.up[j]):
            return self.up[j]
        return 0.0

    def _refactor(self):
        m = self.m
        B = np.zeros((m, m))
        for k, j in enumerate(self.basis):
            r, v = self._column(j)
            B[r, k] = v
        self.Binv = np.linalg.inv(B)
        xn = self.xval.copy()
        xn[self.basis] = 0.0
        self.xval[self.basis] = self.Binv @ (self.b - self._times_x(xn))

    def _add_artificials(self, rows_signs):
        """Append one artificial column per (row, sign)."""
        k = len(rows_signs)
        if not k:
            return
        first = len(self.lo)
        self.t_row = np.concatenate([self.t_row, [r for r, _ in rows_signs]]).astype(int)
        self.t_col = np.concatenate([self.t_col, first + np.arange(k)]).astype(int)
        self.t_val = np.concatenate([self.t_val, [s for _, s in rows_signs]])
        self.lo = np.concatenate([self.lo, np.zeros(k)])
        self.up = np.concatenate([self.up, np.full(k, INF)])
        self.xval = np.concatenate([self.xval, np.zeros(k)])
        self.n_art = k
        self._index_columns()

    def _setup_cold(self):
        m, n = self.m, self.n
        self.xval = np.zeros(n + m)
        for j in range(n):
            self.xval[j] = self._rest(j)
        r = self.b - self._times_x(self.xval)
        basis, arts = [], []
        for i in range(m):
            v = r[i] / self.logical_sign[i]
            j = n + i
            if self.lo[j] - FEAS_TOL <= v <= self.up[j] + FEAS_TOL:
                basis.append(j)
                self.xval[j] = v
            else:
                arts.append((i, 1.0 if r[i] >= 0 else -1.0))
                basis.append(-1)
        art_pos = [i for i, b in enumerate(basis) if b < 0]
        self._add_artificials(arts)
        for a, i in enumerate(art_pos):
            basis[i] = n + m + a
            self.xval[n + m + a] = abs(r[i])
        self.basis = np.array(basis, dtype=int)
        self._finish_setup()

    def _setup_warm(self, warm: WarmStart) -> bool:
        m, n = self.m, self.n
        old_basis = np.asarray(warm.basis, dtype=int)
        m_old = len(old_basis)
        if m_old > m or len(warm.at_upper) != n + m_old:
            return False
        self.xval = np.zeros(n + m)
        at_up = np.concatenate([np.asarray(warm.at_upper, dtype=bool), np.zeros(m - m_old, dtype=bool)])
        for j in range(n + m):
            if at_up[j] and np.isfinite(self.up[j]):
                self.xval[j] = self.up[j]
            else:
                self.xval[j] = self._rest(j)
        # logicals of old rows keep their index; new rows enter with their logical basic
        self.basis = np.concatenate([old_basis, n + np.arange(m_old, m)]).astype(int)
        if len(set(self.basis.tolist())) != m:
            return False
        self.xval[self.basis] = 0.0
        try:
            self._refactor()
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(self.Binv)):
            return False
        xb = self.xval[self.basis]
        bad = (xb < self.lo[self.basis] - FEAS_TOL) | (xb > self.up[self.basis] + FEAS_TOL)
        arts, pos = [], []
        for k in np.flatnonzero(bad):
            j = self.basis[k]
            if j < n:
                return False
            i = j - n
            v = xb[k] * self.logical_sign[i]  # amount the row is short by
            arts.append((i, 1.0 if v >= 0 else -1.0))
            pos.append(k)
            self.xval[j] = 0.0
        if arts:
            self._add_artificials(arts)
            for a, k in enumerate(pos):
                self.basis[k] = n + m + a
                self.xval[n + m + a] = abs(xb[k])
        self._finish_setup()
        return True

    def _finish_setup(self):
        self.is_basic = np.zeros(len(self.lo), dtype=bool)
        self.is_basic[self.basis] = True
        self._refactor()

    def _iterate(self, cost):
        """Run primal simplex on the current basis. Returns a status string."""
        degenerate_run = 0
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iters:
                return NUMERICAL
            y = cost[self.basis] @ self.Binv
            d = cost - self._transpose_times(y)
            bland = degenerate_run >= self.DEGENERATE_BUDGET
            j = self._price(d, bland)
            if j < 0:
                return OPTIMAL
            direction = -1.0 if d[j] > 0 else 1.0
            r, v = self._column(j)
            alpha = self.Binv[:, r] @ v
            step, leave, leave_to_upper = self._ratio(alpha, j, direction, bland)
            if step == INF:
                return UNBOUNDED
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if step <= 1e-12 else 0
            if step > 0:
                self.xval[self.basis] -= direction * step * alpha
                self.xval[j] += direction * step
            if leave < 0:
                continue  # bound flip of the entering column
            out = self.basis[leave]
            self.xval[out] = self.up[out] if leave_to_upper else self.lo[out]
            row = self.Binv[leave] / alpha[leave]
            nz = np.flatnonzero(alpha)
            self.Binv[nz] -= np.outer(alpha[nz], row)
            self.Binv[leave] = row
            self.basis[leave] = j
            self.is_basic[out] = False
            self.is_basic[j] = True
            since_refactor += 1
            if since_refactor >= self.REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0

    def _price(self, d, bland):
        lo, up, x = self.lo, self.up, self.xval
        movable = ~self.is_basic & (lo < up)
        can_inc = movable & (x < up - self.BOUND_TOL) & (d < -OPT_TOL)
        can_dec = movable & (x > lo + self.BOUND_TOL) & (d > OPT_TOL)
        idx = np.flatnonzero(can_inc | can_dec)
        if len(idx) == 0:
            return -1
        if bland:
            return int(idx[0])
        return int(idx[np.argmax(np.abs(d[idx]))])

    def _ratio(self, alpha, j, direction, bland):
        flip = self.up[j] - self.lo[j]
        moves = direction * alpha  # basic values change by -step * moves
        xb = self.xval[self.basis]
        lob = self.lo[self.basis]
        upb = self.up[self.basis]
        t = np.full(len(moves), INF)
        dec = (moves > PIVOT_TOL) & np.isfinite(lob)
        inc = (moves < -PIVOT_TOL) & np.isfinite(upb)
        t[dec] = np.maximum(xb[dec] - lob[dec], 0.0) / moves[dec]
        t[inc] = np.maximum(upb[inc] - xb[inc], 0.0) / (-moves[inc])
        tmin = t.min() if len(t) else INF
        if flip <= tmin:
            return flip, -1, False
        cand = np.flatnonzero(t <= tmin + 1e-12)
        if bland:
            k = cand[np.argmin(self.basis[cand])]
        else:
            k = cand[np.argmax(np.abs(moves[cand]))]
        return tmin, int(k), bool(moves[k] < 0)

    def run(self, warm: WarmStart | None = None) -> LpSolution:
        m, n = self.m, self.n
        if m == 0:
            return self._trivial()
        if warm is None or not self._setup_warm(warm):
            self.__init__(self.lp, self.max_iters)
            self._setup_cold()
        if self.n_art:
            c1 = np.zeros(len(self.lo))
            c1[n + m:] = 1.0
            st = self._iterate(c1)
            if st != OPTIMAL:
                return self._fail(NUMERICAL, "phase 1 did not converge")
            infeas = self.xval[n + m:].sum()
            scale = 1.0 + np.abs(self.b).max()
            if infeas > 1e-7 * scale:
                return self._fail(INFEASIBLE, f"phase 1 infeasibility {infeas:.3g}")
            self.up[n + m:] = 0.0
            self.xval[n + m:] = 0.0
            self._refactor()
        c2 = np.zeros(len(self.lo))
        c2[:n] = self.lp.c
        st = self._iterate(c2)
        if st != OPTIMAL:
            return self._fail(st, "phase 2 " + st)
        self._refactor()
        x = np.clip(self.xval[:n], self.lp.lower, self.lp.upper)
        y = c2[self.basis] @ self.Binv
        red = self.lp.c - self._transpose_times(y)[:n]
        obj = float(self.lp.c @ x)
        basis = self.basis.copy()
        for k, j in enumerate(basis):
            if j >= n + m:  # artificial stuck in the basis at zero: swap for its row's logical
                basis[k] = n + self.t_row[self.col_start[j]]
        at_upper = np.isfinite(self.up[:n + m]) & (self.xval[:n + m] >= self.up[:n + m] - self.BOUND_TOL) \
            & (self.lo[:n + m] < self.up[:n + m])
        at_upper[basis] = False
        sol = LpSolution(OPTIMAL, x, y, red, obj, tuple(int(b) for b in basis), self.iterations)
        sol.warm = WarmStart(basis, at_upper)
        return sol

    def _trivial(self):
        lp = self.lp
        x = np.zeros(self.n)
        for j in range(self.n):
            cj = lp.c[j]
            if cj > 0:
                x[j] = lp.lower[j]
            elif cj < 0:
                x[j] = lp.upper[j]
            else:
                x[j] = self._rest(j)
            if not np.isfinite(x[j]):
                return self._fail(UNBOUNDED, "unbounded column")
        return LpSolution(OPTIMAL, x, np.zeros(0), lp.c.copy(), float(lp.c @ x))

    def _fail(self, status, msg):
        n, m = self.n, self.m
        return LpSolution(status, np.full(n, np.nan), np.full(m, np.nan), np.full(n, np.nan), np.nan,
                          iterations=self.iterations, message=msg)


def solve(problem: LinearProgram, max_iters: int | None = None, warm: WarmStart | None = None) -> LpSolution:
    """Solve ``problem``; the status is never silently optimal on failure.

    ``warm`` may carry the basis of an earlier solve of a problem with the same
    columns and a prefix of the same rows (cuts appended, costs changed).
    """
    problem.check()
    try:
        sol = _Simplex(problem, max_iters).run(warm)
    except np.linalg.LinAlgError as exc:
        m, n = problem.n_rows, problem.n_vars
        return LpSolution(NUMERICAL, np.full(n, np.nan), np.full(m, np.nan), np.full(n, np.nan), np.nan,
                          message=f"singular basis: {exc}")
    if sol.optimal:
        res = primal_residual(problem, sol.x)
        scale = 1.0 + np.abs(problem.rhs).max(initial=0.0)
        if res > 1e-7 * scale:
            sol.status = NUMERICAL
            sol.message = f"primal residual {res:.3g}"
    return sol


REDUCED_COST_TOL = 1e-12


def row_activity(problem: LinearProgram, x) -> np.ndarray:
    act = np.zeros(problem.n_rows)
    np.add.at(act, problem.rows, problem.vals * x[problem.cols])
    return act


def primal_residual(problem: LinearProgram, x) -> float:
    act = row_activity(problem, x)
    worst = 0.0
    for i, s in enumerate(problem.senses):
        gap = act[i] - problem.rhs[i]
        if s == LE:
            worst = max(worst, gap)
        elif s == GE:
            worst = max(worst, -gap)
        else:
            worst = max(worst, abs(gap))
    bnd = np.maximum(problem.lower - x, x - problem.upper)
    return max(worst, float(bnd.max(initial=0.0)))


def dual_objective(problem: LinearProgram, sol: LpSolution) -> float:
    """Dual value b@y + sum of bound terms implied by the reduced costs."""
    d = np.where(np.abs(sol.reduced_costs) <= REDUCED_COST_TOL, 0.0, sol.reduced_costs)
    bound = np.where(d > 0, problem.lower, problem.upper)
    bound = np.where(d == 0, 0.0, bound)
    return float(problem.rhs @ sol.duals + d @ bound)


def complementary_slackness(problem: LinearProgram, sol: LpSolution) -> float:
    act = row_activity(problem, sol.x)
    row_cs = np.abs(sol.duals * (act - problem.rhs))
    d = np.where(np.abs(sol.reduced_costs) <= REDUCED_COST_TOL, 0.0, sol.reduced_costs)
    gap_lo = np.where(np.isfinite(problem.lower), sol.x - problem.lower, INF)
    gap_up = np.where(np.isfinite(problem.upper), problem.upper - sol.x, INF)
    with np.errstate(invalid="ignore"):
        col_cs = np.where(d > 0, np.abs(d) * gap_lo, np.where(d < 0, np.abs(d) * gap_up, 0.0))
    return float(max(row_cs.max(initial=0.0), col_cs.max(initial=0.0)))


def _dual_face_program(problem: LinearProgram, objective: float):
    """Dual LP of ``problem`` restricted to its optimal face.

    Variables: row duals y, then multipliers for finite lower bounds (>= 0)
    and for finite upper bounds (>= 0). Rows: A^T y + wl - wu = c, plus the
    dual objective pinned to the primal optimum.
    """
    m, n = problem.n_rows, problem.n_vars
    bld = LpBuilder()
    for s in problem.senses:
        if s == GE:
            bld.add_var(lb=0.0, ub=INF)
        elif s == LE:
            bld.add_var(lb=-INF, ub=0.0)
        else:
            bld.add_var(lb=-INF, ub=INF)
    cols_by_var: list[list] = [[] for _ in range(n)]
    for r, c, v in zip(problem.rows, problem.cols, problem.vals):
        cols_by_var[c].append((int(r), float(v)))
    objcoef = [(i, float(problem.rhs[i])) for i in range(m)]
    for j in range(n):
        entries = list(cols_by_var[j])
        if np.isfinite(problem.lower[j]):
            k = bld.add_var(lb=0.0)
            entries.append((k, 1.0))
            objcoef.append((k, float(problem.lower[j])))
        if np.isfinite(problem.upper[j]):
            k = bld.add_var(lb=0.0)
            entries.append((k, -1.0))
            objcoef.append((k, -float(problem.upper[j])))
        bld.add_row(entries, EQ, problem.c[j])
    tol = 0.0
    bld.add_row(objcoef, GE, objective - tol)
    return bld


def resolve_degenerate_duals(problem: LinearProgram, solution: LpSolution, preference: str = "min",
                             rows: Sequence[int] | None = None) -> LpSolution:
    """Pick a deterministic dual among all optimal duals.

    ``preference`` is "min" (lexicographically smallest duals over ``rows``)
    or "max" (lexicographically largest). Rows default to all rows. The
    primal part of the solution is returned unchanged.
    """
    if not solution.optimal:
        raise ValueError("resolve_degenerate_duals needs an optimal solution")
    if preference not in ("min", "max"):
        raise ValueError(f"unknown preference {preference!r}")
    rows = list(range(problem.n_rows)) if rows is None else list(rows)
    if not rows:
        return solution
    bld = _dual_face_program(problem, solution.objective)
    sign = 1.0 if preference == "min" else -1.0
    m = problem.n_rows
    y = None
    warm = None
    for r in rows:
        bld.c = [0.0] * len(bld.c)
        bld.c[r] = sign
        sol = solve(bld.build(), warm=warm)
        if not sol.optimal:
            return solution
        warm = sol.warm
        val = sol.x[r]
        tol = 0.0
        if preference == "min":
            bld.add_row([(r, 1.0)], LE, val + tol)
        else:
            bld.add_row([(r, 1.0)], GE, val - tol)
        y = sol.x[:m]
    if y is None:
        return solution
    y = y.copy()
    A_t_y = np.zeros(problem.n_vars)
    np.add.at(A_t_y, problem.cols, problem.vals * y[problem.rows])
    red = problem.c - A_t_y
    return LpSolution(OPTIMAL, solution.x.copy(), y, red, solution.objective, solution.basis,
                      solution.iterations, "duals resolved (" + preference + ")")


def write_mps(problem: LinearProgram, path, name="MODEL", col_names=None, row_names=None):
    """Dump ``problem`` in fixed-column MPS for cross-checking elsewhere."""
    m, n = problem.n_rows, problem.n_vars
    cn = col_names or [f"C{j}" for j in range(n)]
    rn = row_names or [f"R{i}" for i in range(m)]
    kind = {LE: "L", GE: "G", EQ: "E"}
    lines = [f"NAME          {name}", "ROWS", " N  OBJ"]
    lines += [f" {kind[s]}  {rn[i]}" for i, s in enumerate(problem.senses)]
    lines.append("COLUMNS")
    by_col: list[list] = [[] for _ in range(n)]
    for r, c, v in zip(problem.rows, problem.cols, problem.vals):
        by_col[c].append((rn[r], v))
    for j in range(n):
        if problem.c[j] != 0:
            lines.append(f"    {cn[j]:<8}  {'OBJ':<8}  {problem.c[j]:>12.6g}")
        for r, v in by_col[j]:
            lines.append(f"    {cn[j]:<8}  {r:<8}  {v:>12.6g}")
    lines.append("RHS")
    for i in range(m):
        if problem.rhs[i] != 0:
            lines.append(f"    {'RHS':<8}  {rn[i]:<8}  {problem.rhs[i]:>12.6g}")
    lines.append("BOUNDS")
    for j in range(n):
        lo, up = problem.lower[j], problem.upper[j]
        if lo == up:
            lines.append(f" FX {'BND':<8}  {cn[j]:<8}  {lo:>12.6g}")
            continue
        if not np.isfinite(lo) and not np.isfinite(up):
            lines.append(f" FR {'BND':<8}  {cn[j]}")
            continue
        if not np.isfinite(lo):
            lines.append(f" MI {'BND':<8}  {cn[j]}")
        elif lo != 0:
            lines.append(f" LO {'BND':<8}  {cn[j]:<8}  {lo:>12.6g}")
        if np.isfinite(up):
            lines.append(f" UP {'BND':<8}  {cn[j]:<8}  {up:>12.6g}")
    lines.append("ENDATA")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text
