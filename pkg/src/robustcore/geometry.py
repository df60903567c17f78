"""
Polyhedral cores and bounding sets, and the operators fixing them.

A :class:`PolyhedralSet` is ``{x : A x >= b, sum(x) == total}``. Projection
uses Dykstra's cyclic scheme: the efficiency hyperplane first, then the
halfspaces in row order. Each piece has a closed-form projection, so the
scheme is exact in the limit for any nonempty intersection.
"""

from dataclasses import dataclass

import numba
import numpy as np

from . import lp
from .game import ValueFunction, indicator_matrix, strict_masks

PROJ_TOL = 1e-10
PROJ_MAX_ITER = 50_000
# a settled point further than this from the set signals an empty intersection
PROJ_RESIDUAL_TOL = 1e-7

PROJECTION = "projection"
OVER_PROJECTION = "over_projection"
MIXED = "mixed"
KINDS = (PROJECTION, OVER_PROJECTION, MIXED)

_ALIASES = {
    "proj": PROJECTION,
    "projection": PROJECTION,
    "overproj": OVER_PROJECTION,
    "over_projection": OVER_PROJECTION,
    "over-projection": OVER_PROJECTION,
    "mixed": MIXED,
}


class ProjectionError(RuntimeError):
    """Dykstra's iteration did not settle within ``max_iter`` sweeps."""

    def __init__(self, message, residual=np.nan, iterations=0, agent=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.agent = agent


@dataclass(frozen=True, eq=False)
class PolyhedralSet:
    """Rows ``A @ x >= b`` plus the efficiency row ``sum(x) == total``.

    ``masks`` records the coalition behind each row (``-1`` when a row
    was given directly as a vector).
    """

    A: np.ndarray
    b: np.ndarray
    total: float
    masks: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] != b.size:
            raise ValueError("inequality rows and offsets disagree")
        if np.any(np.einsum("ij,ij->i", A, A) == 0):
            raise ValueError("inequality normals must be nonzero")
        for name, val in (("A", A), ("b", b)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "total", float(self.total))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.b.size

    def residual(self, x) -> float:
        """Largest violation of any row at ``x``."""
        x = np.asarray(x, dtype=float)
        eq = abs(x.sum() - self.total)
        if self.n_rows == 0:
            return float(eq)
        return float(max(eq, np.max(self.b - self.A @ x, initial=0.0)))

    def contains(self, x, tol: float = 1e-8) -> bool:
        return self.residual(x) <= tol


def core_polyhedron(v: ValueFunction) -> PolyhedralSet:
    """The core of ``v``: one row per nonempty strict coalition."""
    masks = np.array(list(strict_masks(v.n_agents)), dtype=np.int64)
    A = indicator_matrix(masks, v.n_agents) if masks.size else np.zeros((0, v.n_agents))
    return PolyhedralSet(A, v.values[masks], v.grand_value, masks)


def bounding_polyhedron(v: ValueFunction, agent: int) -> PolyhedralSet:
    """Payoffs acceptable to ``agent``: rows for strict coalitions containing it."""
    if not 0 <= agent < v.n_agents:
        raise IndexError(f"agent {agent} out of range for {v.n_agents} agents")
    masks = np.array([m for m in strict_masks(v.n_agents) if m >> agent & 1], dtype=np.int64)
    A = indicator_matrix(masks, v.n_agents) if masks.size else np.zeros((0, v.n_agents))
    return PolyhedralSet(A, v.values[masks], v.grand_value, masks)


def bounding_row_mask(core: PolyhedralSet, agent: int) -> np.ndarray:
    """Which rows of a core belong to ``agent``'s bounding set."""
    return (core.masks >> agent) & 1 == 1


@numba.njit(cache=True)
def _active_set_finish(x0, guess, A, b, active_row, total, tight_tol, out):
    """Exact projection from a near-optimal guess, or False.

    Rows nearly tight at ``guess`` are made equalities with the efficiency
    row; the equality-constrained least-squares point is accepted once it
    is feasible and every multiplier of a tight row has the right sign.
    Otherwise one row is added (most violated), dropped (most negative
    multiplier) or released (loosest, when the equalities are inconsistent)
    and the solve is repeated.
    """
    n = x0.size
    R = A.shape[0]
    tight = np.zeros(R, dtype=np.bool_)
    slack = np.empty(R)
    for r in range(R):
        s = 0.0
        for j in range(n):
            s += A[r, j] * guess[j]
        slack[r] = s - b[r]
        tight[r] = active_row[r] and slack[r] <= tight_tol
    for _ in range(3 * R + 3):
        k = 1
        for r in range(R):
            if tight[r]:
                k += 1
        C = np.empty((k, n))
        d = np.empty(k)
        idx = np.empty(k, dtype=np.int64)
        C[0, :] = 1.0
        d[0] = total
        idx[0] = -1
        row = 1
        for r in range(R):
            if tight[r]:
                C[row, :] = A[r]
                d[row] = b[r]
                idx[row] = r
                row += 1
        # p = x0 + C^T nu with C p = d
        nu = np.linalg.lstsq(C @ C.T, d - C @ x0)[0]
        p = x0 + C.T @ nu
        if np.max(np.abs(C @ p - d)) > 1e-10 * (1.0 + np.max(np.abs(d))):
            # inconsistent near-ties: release the loosest tight row
            loosest, loose_r = -np.inf, -1
            for r in range(R):
                if tight[r] and slack[r] > loosest:
                    loosest, loose_r = slack[r], r
            if loose_r < 0:
                return False
            tight[loose_r] = False
            continue
        worst, worst_r = 1e-11, -1
        for r in range(R):
            if active_row[r] and not tight[r]:
                s = 0.0
                for j in range(n):
                    s += A[r, j] * p[j]
                if b[r] - s > worst:
                    worst, worst_r = b[r] - s, r
        if worst_r >= 0:
            tight[worst_r] = True
            continue
        worst, worst_r = -1e-11, -1
        for q in range(1, k):
            if nu[q] < worst:
                worst, worst_r = nu[q], idx[q]
        if worst_r >= 0:
            tight[worst_r] = False
            continue
        out[:] = p
        return True
    return False


FINISH_EVERY = 500


@numba.njit(cache=True)
def _dykstra_kernel(X, A, b, active, total, tol, max_iter):
    M, n = X.shape
    R = A.shape[0]
    P = np.empty_like(X)
    iters = np.zeros(M, dtype=np.int64)
    ok = np.zeros(M, dtype=np.bool_)
    norms = np.empty(R)
    for r in range(R):
        s = 0.0
        for j in range(n):
            s += A[r, j] * A[r, j]
        norms[r] = s
    inc = np.zeros((R + 1, n))
    x = np.empty(n)
    prev = np.empty(n)
    y = np.empty(n)
    tol2 = tol * tol
    for p in range(M):
        inc[:, :] = 0.0
        for j in range(n):
            x[j] = X[p, j]
        it = 0
        while it < max_iter:
            it += 1
            for j in range(n):
                prev[j] = x[j]
            # squared change of the correction terms over the sweep
            dinc = 0.0
            # efficiency hyperplane
            s = 0.0
            for j in range(n):
                y[j] = x[j] + inc[0, j]
                s += y[j]
            shift = (total - s) / n
            for j in range(n):
                x[j] = y[j] + shift
                new_inc = y[j] - x[j]
                dinc += (new_inc - inc[0, j]) ** 2
                inc[0, j] = new_inc
            for r in range(R):
                if not active[p, r]:
                    continue
                s = 0.0
                for j in range(n):
                    y[j] = x[j] + inc[r + 1, j]
                    s += A[r, j] * y[j]
                gap = b[r] - s
                coef = gap / norms[r] if gap > 0.0 else 0.0
                for j in range(n):
                    x[j] = y[j] + coef * A[r, j]
                    new_inc = -coef * A[r, j]
                    dinc += (new_inc - inc[r + 1, j]) ** 2
                    inc[r + 1, j] = new_inc
            d = 0.0
            for j in range(n):
                d += (x[j] - prev[j]) ** 2
            settled = d <= tol2 and dinc <= tol2
            if settled or it % FINISH_EVERY == 0:
                x0 = X[p].copy()
                if _active_set_finish(x0, x, A, b, active[p], total, 1e-6 + 10.0 * tol, y):
                    x[:] = y
                    ok[p] = True
                    break
            if settled:
                ok[p] = True
                break
        for j in range(n):
            P[p, j] = x[j]
        iters[p] = it
    return P, iters, ok


def project_many(target: PolyhedralSet, X, active=None, tol: float = PROJ_TOL,
                 max_iter: int = PROJ_MAX_ITER) -> np.ndarray:
    """Project each row of ``X`` onto ``target``.

    ``active`` optionally selects, per point, the subset of inequality
    rows to honour (shape ``(len(X), target.n_rows)``); the efficiency row
    is always included.

    Raises
    ------
    ProjectionError
        For the first point that does not settle or settles outside the
        set; ``agent`` holds its row index and the message says whether an
        LP finds the set empty.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != target.dim:
        raise ValueError(f"points have shape {X.shape}, expected (*, {target.dim})")
    if active is None:
        active = np.ones((X.shape[0], target.n_rows), dtype=np.bool_)
    else:
        active = np.ascontiguousarray(active, dtype=np.bool_)
    A = target.A if target.n_rows else np.zeros((0, target.dim))
    P, iters, ok = _dykstra_kernel(X, A, target.b, active, target.total, tol, max_iter)
    if target.n_rows:
        viol = np.where(active, target.b[None, :] - P @ target.A.T, 0.0).max(axis=1, initial=0.0)
    else:
        viol = np.zeros(len(P))
    viol = np.maximum(viol, np.abs(P.sum(axis=1) - target.total))
    bad = ~ok | (viol > PROJ_RESIDUAL_TOL)
    if bad.any():
        p = int(np.flatnonzero(bad)[0])
        rows = active[p]
        empty = not lp.feasible_point(np.ones((1, target.dim)), [target.total],
                                      target.A[rows], target.b[rows]).optimal
        reason = "the set is empty" if empty else f"no convergence in {int(iters[p])} sweeps"
        raise ProjectionError(f"projection failed: {reason} (residual {viol[p]:.3e})",
                              residual=float(viol[p]), iterations=int(iters[p]), agent=p)
    return P


def project(target: PolyhedralSet, x, tol: float = PROJ_TOL, max_iter: int = PROJ_MAX_ITER) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``target``."""
    x = np.asarray(x, dtype=float)
    return project_many(target, x[None, :], tol=tol, max_iter=max_iter)[0]


def normalize_kind(kind: str) -> str:
    try:
        return _ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown operator kind {kind!r}; expected one of {sorted(_ALIASES)}") from None


@dataclass(frozen=True)
class OperatorSpec:
    """An operator whose fixed-point set is ``target``.

    ``mixed`` with weight ``beta`` is ``(1 - beta) proj + beta overproj``,
    so ``beta = 0`` is the projection and ``beta = 1`` the reflection.
    """

    kind: str
    target: PolyhedralSet
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def weight(self) -> float:
        return operator_weight(self.kind, self.beta)

    @property
    def is_paracontraction(self) -> bool:
        return self.weight < 1.0

    def __call__(self, x):
        return apply_operator(self, x)


def operator_weight(kind: str, beta: float = 0.0) -> float:
    """Reflection weight: the operator is ``p + w (p - x)`` with ``p = proj(x)``."""
    kind = normalize_kind(kind)
    if kind == PROJECTION:
        return 0.0
    if kind == OVER_PROJECTION:
        return 1.0
    return float(beta)


def apply_operator(op: OperatorSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p = project(op.target, x)
    return p + op.weight * (p - x)


def apply_operator_many(kind: str, beta: float, target: PolyhedralSet, X, active=None) -> np.ndarray:
    """Apply the operator to every row of ``X`` (see :func:`project_many`)."""
    w = operator_weight(kind, beta)
    P = project_many(target, X, active)
    if w == 0.0:
        return P
    return P + w * (P - X)
