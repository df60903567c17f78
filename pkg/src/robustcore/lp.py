"""
Dense revised simplex solver for small linear programs.

Problems are stated as

    minimize    c @ z
    subject to  A_eq @ z == b_eq
                A_le @ z <= b_le
                lo <= z <= hi        (entries of lo/hi may be infinite)

and converted internally to ``A w = b, 0 <= w <= ub``. Finite upper
bounds are handled by the ratio test rather than as rows; free variables
are split.
Phase 1 minimizes the sum of artificial variables, phase 2 the original
objective. Pivoting follows Bland's rule, so runs are deterministic and
cannot cycle.
"""

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-10
OPT_TOL = 1e-9
MAX_PIVOTS = 20_000
REFACTOR_EVERY = 50

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_CAP = "iteration_cap"


class LpError(RuntimeError):
    """Raised when the solver hits its pivot limit or a singular basis."""


@dataclass(frozen=True)
class LinearProgram:
    """A linear program in inequality form with variable bounds.

    Missing constraint blocks may be passed as ``None``. Bounds default to
    ``z >= 0``.
    """

    c: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_le: Optional[np.ndarray] = None
    b_le: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        object.__setattr__(self, "c", c)
        for a_name, b_name in (("A_eq", "b_eq"), ("A_le", "b_le")):
            A, b = getattr(self, a_name), getattr(self, b_name)
            if A is None or b is None:
                if (A is None) != (b is None):
                    raise ValueError(f"{a_name} and {b_name} must be given together")
                A, b = np.zeros((0, n)), np.zeros(0)
            A = np.atleast_2d(np.asarray(A, dtype=float))
            if A.size == 0:
                A = A.reshape(0, n)
            b = np.asarray(b, dtype=float).ravel()
            if A.shape != (b.size, n):
                raise ValueError(f"{a_name} has shape {A.shape}, expected ({b.size}, {n})")
            object.__setattr__(self, a_name, A)
            object.__setattr__(self, b_name, b)
        lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).ravel()
        hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel()
        if lo.size != n or hi.size != n:
            raise ValueError("bounds must have one entry per variable")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValueError("bounds must admit a finite value")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class DualCertificate:
    """Dual values of an optimal solution.

    ``y_eq`` and ``y_le`` multiply the equality and inequality rows
    (``y_le <= 0``); ``reduced_costs`` is ``c - A_eq.T y_eq - A_le.T y_le``,
    whose positive part prices active lower bounds and negative part
    active upper bounds.
    """

    y_eq: np.ndarray
    y_le: np.ndarray
    reduced_costs: np.ndarray
    objective: float


@dataclass
class LpOutcome:
    status: str
    z_star: Optional[np.ndarray] = None
    objective_value: float = np.nan
    certificate: Optional[DualCertificate] = None
    pivots: int = 0
    basis: Optional[tuple] = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class _StandardForm:
    """``A w = b, 0 <= w <= ub`` with ``z = T @ w[:n_struct] + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    ub: np.ndarray
    T: np.ndarray
    d: np.ndarray
    row_sign: np.ndarray
    n_eq: int
    n_le: int
    slack_of_row: np.ndarray  # column of a +1 slack per row, or -1
    n_struct: int


def _to_standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    cols = []  # (original index, sign, upper bound)
    d = np.zeros(n)
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        if np.isfinite(lo):
            d[j] = lo
            cols.append((j, 1.0, hi - lo))
        elif np.isfinite(hi):
            d[j] = hi
            cols.append((j, -1.0, np.inf))
        else:
            cols.append((j, 1.0, np.inf))
            cols.append((j, -1.0, np.inf))
    n_struct = len(cols)
    T = np.zeros((n, n_struct))
    for k, (j, s, _) in enumerate(cols):
        T[j, k] = s

    n_eq, n_le = lp.b_eq.size, lp.b_le.size
    m = n_eq + n_le
    A = np.zeros((m, n_struct + n_le))
    b = np.zeros(m)
    A[:n_eq, :n_struct] = lp.A_eq @ T
    b[:n_eq] = lp.b_eq - lp.A_eq @ d
    A[n_eq:, :n_struct] = lp.A_le @ T
    b[n_eq:] = lp.b_le - lp.A_le @ d
    slack_of_row = np.full(m, -1)
    for r in range(n_le):
        A[n_eq + r, n_struct + r] = 1.0
        slack_of_row[n_eq + r] = n_struct + r

    row_sign = np.where(b < 0, -1.0, 1.0)
    A *= row_sign[:, None]
    b *= row_sign
    slack_of_row[row_sign < 0] = -1

    c = np.zeros(n_struct + n_le)
    c[:n_struct] = lp.c @ T
    ub = np.concatenate([[u for _, _, u in cols], np.full(n_le, np.inf)])
    return _StandardForm(A, b, c, ub, T, d, row_sign, n_eq, n_le, slack_of_row, n_struct)


_STATUS_CODES = {0: OPTIMAL, 1: UNBOUNDED, 2: ITERATION_CAP}


@numba.njit(cache=True)
def _refactor_kernel(A, b, ub, basis, at_upper):
    m = A.shape[0]
    B = np.empty((m, m))
    for r in range(m):
        B[:, r] = A[:, basis[r]]
    Binv = np.linalg.inv(B)
    rhs = b.copy()
    for j in range(A.shape[1]):
        if at_upper[j]:
            rhs -= A[:, j] * ub[j]
    x_B = Binv @ rhs
    for r in range(m):
        if abs(x_B[r]) < 1e-13:
            x_B[r] = 0.0
    return Binv, x_B


@numba.njit(cache=True)
def _pivot_kernel(Binv, x_B, basis, at_upper, in_basis, r, q, u, entering_value, to_upper):
    leaving = basis[r]
    x_B[r] = entering_value
    basis[r] = q
    in_basis[leaving] = False
    in_basis[q] = True
    at_upper[q] = False
    at_upper[leaving] = to_upper
    piv_row = Binv[r] / u[r]
    m = Binv.shape[0]
    for i in range(m):
        if i != r and u[i] != 0.0:
            Binv[i] -= u[i] * piv_row
    Binv[r] = piv_row
    for i in range(m):
        if abs(x_B[i]) < 1e-13:
            x_B[i] = 0.0


@numba.njit(cache=True)
def _bland_kernel(A, b, ub, c, allowed, basis, at_upper, in_basis, Binv, x_B,
                  pivots, max_pivots, opt_tol, pivot_tol, refactor_every):
    m, n_cols = A.shape
    since = 0
    y = np.empty(m)
    u = np.empty(m)
    while True:
        y[:] = 0.0
        for r in range(m):
            cb = c[basis[r]]
            if cb != 0.0:
                y += cb * Binv[r]
        # Bland: the smallest-index improving column enters
        q = -1
        for j in range(n_cols):
            if not allowed[j] or in_basis[j]:
                continue
            dj = c[j]
            for r in range(m):
                dj -= y[r] * A[r, j]
            if (at_upper[j] and dj > opt_tol) or (not at_upper[j] and dj < -opt_tol):
                q = j
                break
        if q < 0:
            return 0, pivots, Binv, x_B
        if pivots >= max_pivots:
            return 2, pivots, Binv, x_B
        sigma = -1.0 if at_upper[q] else 1.0
        for r in range(m):
            s = 0.0
            for i in range(m):
                s += Binv[r, i] * A[i, q]
            u[r] = s
        # ratio test; the entering column may block by reaching its other bound
        theta = ub[q]
        for r in range(m):
            su = sigma * u[r]
            if su > pivot_tol:
                t = max(x_B[r], 0.0) / su
            elif su < -pivot_tol and np.isfinite(ub[basis[r]]):
                t = max(ub[basis[r]] - x_B[r], 0.0) / -su
            else:
                continue
            if t < theta:
                theta = t
        if not np.isfinite(theta):
            return 1, pivots, Binv, x_B
        slack = 1e-12 * max(1.0, theta)
        # Bland: among blocking variables the smallest index leaves
        leave_var = q if ub[q] <= theta + slack else n_cols + m
        leave_row = -1
        to_upper = False
        for r in range(m):
            su = sigma * u[r]
            if su > pivot_tol:
                t = max(x_B[r], 0.0) / su
                up = False
            elif su < -pivot_tol and np.isfinite(ub[basis[r]]):
                t = max(ub[basis[r]] - x_B[r], 0.0) / -su
                up = True
            else:
                continue
            if t <= theta + slack and basis[r] < leave_var:
                leave_var = basis[r]
                leave_row = r
                to_upper = up
        pivots += 1
        for r in range(m):
            x_B[r] -= theta * sigma * u[r]
        if leave_row < 0:
            at_upper[q] = not at_upper[q]
            for r in range(m):
                if abs(x_B[r]) < 1e-13:
                    x_B[r] = 0.0
            continue
        entering_value = (ub[q] - theta) if at_upper[q] else theta
        _pivot_kernel(Binv, x_B, basis, at_upper, in_basis, leave_row, q, u,
                      entering_value, to_upper)
        since += 1
        if since >= refactor_every:
            Binv, x_B = _refactor_kernel(A, b, ub, basis, at_upper)
            since = 0


class _Simplex:
    """Bounded-variable revised simplex with an explicit basis inverse.

    Nonbasic columns sit at their lower bound 0 or, when flagged in
    ``at_upper``, at their finite upper bound.
    """

    def __init__(self, A, b, ub, basis, max_pivots, pivots=0, at_upper=None):
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.ascontiguousarray(b, dtype=float)
        self.ub = np.ascontiguousarray(ub, dtype=float)
        n_cols = self.A.shape[1]
        self.basis = np.array(basis, dtype=np.int64)
        self.at_upper = np.zeros(n_cols, dtype=np.bool_) if at_upper is None else at_upper.astype(np.bool_)
        self.in_basis = np.zeros(n_cols, dtype=np.bool_)
        self.in_basis[self.basis] = True
        self.at_upper[self.basis] = False
        self.max_pivots = max_pivots
        self.pivots = pivots
        self._refactor()

    def _refactor(self):
        if self.basis.size == 0:
            self.Binv, self.x_B = np.zeros((0, 0)), np.zeros(0)
            return
        try:
            self.Binv, self.x_B = _refactor_kernel(self.A, self.b, self.ub, self.basis, self.at_upper)
        except np.linalg.LinAlgError as exc:
            raise LpError("singular basis") from exc

    def values(self) -> np.ndarray:
        w = np.zeros(self.A.shape[1])
        w[self.at_upper] = self.ub[self.at_upper]
        w[self.basis] = np.clip(self.x_B, 0.0, self.ub[self.basis])
        return w

    def run(self, c, allowed):
        """Optimize ``c`` over the columns flagged in ``allowed``.

        Returns one of OPTIMAL, UNBOUNDED, ITERATION_CAP.
        """
        c = np.ascontiguousarray(c, dtype=float)
        if self.basis.size == 0:
            # no rows: every column moves freely within its bounds
            d = c
            if np.any(allowed & (d < -OPT_TOL) & ~np.isfinite(self.ub)):
                return UNBOUNDED
            self.at_upper = allowed & (d < -OPT_TOL)
            return OPTIMAL
        try:
            code, self.pivots, self.Binv, self.x_B = _bland_kernel(
                self.A, self.b, self.ub, c, np.ascontiguousarray(allowed, dtype=np.bool_),
                self.basis, self.at_upper, self.in_basis, self.Binv, self.x_B,
                self.pivots, self.max_pivots, OPT_TOL, PIVOT_TOL, REFACTOR_EVERY)
        except np.linalg.LinAlgError as exc:
            raise LpError("singular basis") from exc
        return _STATUS_CODES[int(code)]

    def pivot(self, r, q, entering_value):
        u = self.Binv @ self.A[:, q]
        _pivot_kernel(self.Binv, self.x_B, self.basis, self.at_upper, self.in_basis,
                      r, q, u, entering_value, False)


def _dual_certificate(lp: LinearProgram, sf: _StandardForm, y_std) -> DualCertificate:
    y = y_std * sf.row_sign
    y_eq = y[:sf.n_eq]
    y_le = y[sf.n_eq:sf.n_eq + sf.n_le]
    r = lp.c - lp.A_eq.T @ y_eq - lp.A_le.T @ y_le
    mu = np.maximum(r, 0.0)
    nu = np.maximum(-r, 0.0)
    obj = float(lp.b_eq @ y_eq + lp.b_le @ y_le)
    fin_lo, fin_hi = np.isfinite(lp.lo), np.isfinite(lp.hi)
    obj += float(lp.lo[fin_lo] @ mu[fin_lo]) - float(lp.hi[fin_hi] @ nu[fin_hi])
    return DualCertificate(y_eq=y_eq, y_le=y_le, reduced_costs=r, objective=obj)


def solve(lp: LinearProgram, max_pivots: int = MAX_PIVOTS, basis=None) -> LpOutcome:
    """Solve ``lp`` with the two-phase bounded revised simplex method.

    Parameters
    ----------
    lp : LinearProgram
    max_pivots : int
        Limit on pivots (bound flips included) across both phases;
        exceeding it yields status ``iteration_cap``.
    basis : tuple, optional
        ``LpOutcome.basis`` from an earlier solve of the same program.
        When it is primal feasible, phase 1 is skipped.

    Returns
    -------
    LpOutcome
    """
    sf = _to_standard_form(lp)
    m, n_cols = sf.A.shape

    if basis is not None:
        outcome = _solve_from_basis(lp, sf, basis, max_pivots)
        if outcome is not None:
            return outcome

    # Phase 1: artificial columns on rows without a usable slack.
    art_rows = np.flatnonzero(sf.slack_of_row < 0)
    A1 = np.hstack([sf.A, np.zeros((m, art_rows.size))])
    ub1 = np.concatenate([sf.ub, np.full(art_rows.size, np.inf)])
    start = sf.slack_of_row.copy()
    for k, r in enumerate(art_rows):
        A1[r, n_cols + k] = 1.0
        start[r] = n_cols + k
    c1 = np.zeros(A1.shape[1])
    c1[n_cols:] = 1.0

    sx = _Simplex(A1, sf.b, ub1, start, max_pivots)
    if art_rows.size:
        status = sx.run(c1, np.ones(A1.shape[1], dtype=bool))
        if status == ITERATION_CAP:
            return LpOutcome(ITERATION_CAP, pivots=sx.pivots, message="phase 1 pivot limit")
        infeas = float(c1 @ sx.values())
        if infeas > FEAS_TOL * (1.0 + np.abs(sf.b).max(initial=0.0)):
            return LpOutcome(INFEASIBLE, pivots=sx.pivots, message=f"phase 1 residual {infeas:.3e}")
        keep = _drive_out_artificials(sx, n_cols)
    else:
        keep = np.arange(m)

    # Phase 2 on the original columns; redundant rows are dropped.
    basis2 = sx.basis[keep]
    sx2 = _Simplex(sf.A[keep], sf.b[keep], sf.ub, basis2, max_pivots,
                   pivots=sx.pivots, at_upper=sx.at_upper[:n_cols])
    status = sx2.run(sf.c, np.ones(n_cols, dtype=bool))
    return _finish(lp, sf, sx2, status, keep)


def _drive_out_artificials(sx: _Simplex, n_cols: int) -> np.ndarray:
    """Pivot zero-level artificials out of the basis; return kept rows."""
    m = len(sx.basis)
    redundant = set()
    for r in range(m):
        if sx.basis[r] < n_cols:
            continue
        row = sx.Binv[r] @ sx.A[:, :n_cols]
        cand = [j for j in np.flatnonzero(np.abs(row) > 1e-8) if not sx.in_basis[j]]
        if cand:
            q = int(cand[0])
            value = sx.ub[q] if sx.at_upper[q] else 0.0
            sx.pivot(r, q, value)
        else:
            redundant.add(r)
    return np.array([r for r in range(m) if r not in redundant], dtype=int)


def _solve_from_basis(lp, sf, basis, max_pivots):
    m, n_cols = sf.A.shape
    try:
        cols, upper = basis
        cols = [int(j) for j in cols]
    except (TypeError, ValueError):
        return None
    if len(cols) != m or any(not 0 <= j < n_cols for j in cols):
        return None
    at_upper = np.zeros(n_cols, dtype=bool)
    at_upper[list(upper)] = True
    try:
        sx = _Simplex(sf.A, sf.b, sf.ub, cols, max_pivots, at_upper=at_upper)
    except LpError:
        return None
    if np.any(sx.x_B < -FEAS_TOL) or np.any(sx.x_B > sf.ub[cols] + FEAS_TOL):
        return None
    status = sx.run(sf.c, np.ones(n_cols, dtype=bool))
    return _finish(lp, sf, sx, status, np.arange(m))


def _finish(lp, sf, sx: _Simplex, status, keep) -> LpOutcome:
    if status != OPTIMAL:
        return LpOutcome(status, pivots=sx.pivots)
    w = sx.values()
    z = sf.T @ w[:sf.n_struct] + sf.d
    # keep z inside its bounds despite rounding in the slack columns
    z = np.clip(z, lp.lo, lp.hi)
    y_std = np.zeros(sf.A.shape[0])
    y_std[keep] = sf.c[sx.basis] @ sx.Binv
    basis = None
    if keep.size == sf.A.shape[0]:
        basis = (tuple(sx.basis.tolist()), tuple(np.flatnonzero(sx.at_upper).tolist()))
    return LpOutcome(
        OPTIMAL,
        z_star=z,
        objective_value=float(lp.c @ z),
        certificate=_dual_certificate(lp, sf, y_std),
        pivots=sx.pivots,
        basis=basis,
    )


def primal_residual(lp: LinearProgram, z: np.ndarray) -> float:
    """Largest violation of any constraint or bound at ``z``."""
    res = [0.0]
    if lp.b_eq.size:
        res.append(np.abs(lp.A_eq @ z - lp.b_eq).max())
    if lp.b_le.size:
        res.append(np.maximum(lp.A_le @ z - lp.b_le, 0.0).max())
    res.append(np.maximum(lp.lo - z, 0.0).max(initial=0.0))
    res.append(np.maximum(z - lp.hi, 0.0).max(initial=0.0))
    return float(max(res))


def feasible_point(A_eq, b_eq, A_ge, b_ge, max_pivots: int = MAX_PIVOTS) -> LpOutcome:
    """Find a point of ``{z : A_eq z = b_eq, A_ge z >= b_ge}`` with free ``z``.

    Runs phase 1 only (the objective is zero). Status ``optimal`` means
    feasible and ``z_star`` is a witness.
    """
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)) if A_eq is not None else None
    A_ge = np.atleast_2d(np.asarray(A_ge, dtype=float)) if A_ge is not None else None
    n = None
    for A in (A_eq, A_ge):
        if A is not None and A.shape[-1] > 0:
            n = A.shape[-1]
    if n is None:
        raise ValueError("cannot infer the number of variables; pass an empty (0, n) matrix")
    if A_eq is None or A_eq.size == 0:
        A_eq, b_eq = np.zeros((0, n)), np.zeros(0)
    if A_ge is None or A_ge.size == 0:
        A_ge, b_ge = np.zeros((0, n)), np.zeros(0)
    lp = LinearProgram(
        c=np.zeros(n),
        A_eq=A_eq,
        b_eq=b_eq,
        A_le=-A_ge,
        b_le=-np.asarray(b_ge, dtype=float),
        lo=np.full(n, -np.inf),
        hi=np.full(n, np.inf),
    )
    return solve(lp, max_pivots=max_pivots)
