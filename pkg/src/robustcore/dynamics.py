"""
Distributed payoff allocation and bargaining iterations.

A stacked profile is an ``(N, N)`` array whose row ``i`` is agent ``i``'s
current proposal. Both iterations mix proposals over the current graph
and then move each mixed proposal with an operator targeted at the
current instantaneous game:

* allocation: ``x_i <- (1 - alpha) x_i + alpha T_i(sum_j w_ij x_j)``
  with ``T_i`` fixing the core;
* bargaining: ``x_i <- M_i(sum_j w_ij x_j)`` with ``M_i`` fixing agent
  ``i``'s bounding set.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import geometry
from .game import (RobustGame, ValueFunction, core_nonempty, decode_family_index,
                   in_core, sample_levels)
from .geometry import ProjectionError, apply_operator_many, bounding_row_mask, core_polyhedron
from .network import BLOCK_CYCLIC, IID, NetworkSchedule, WeightedGraph, mix

STOP_TOL = 1e-6
MAX_ITER = 10_000
TERMINAL_TOL = 1e-6
DEFAULT_EPSILON = 0.05
THIN_EVERY = 10
BLOCK_CYCLIC_MAX_FAMILY = 100_000

CONVERGED = "converged"
MAX_ITER_REACHED = "max_iter"


class EmptyRobustCoreError(ValueError):
    """The upper-bound game has an empty core, so no run can succeed."""


def initial_profile(v_grand: float, n: int) -> np.ndarray:
    """Every agent proposes the whole grand-coalition value for itself."""
    return v_grand * np.eye(n)


def consensus_residual(x: np.ndarray) -> float:
    """Largest distance of a proposal from the mean proposal."""
    return float(np.linalg.norm(x - x.mean(axis=0), axis=1).max())


def _as_profile(x, n: int) -> np.ndarray:
    x = np.array(x, dtype=float)
    if x.size != n * n:
        raise ValueError(f"profile of shape {x.shape} does not match {n} agents")
    x = x.reshape(n, n)
    if not np.all(np.isfinite(x)):
        raise ValueError("profile has non-finite entries")
    return x


def distance_to_target(x, v_bar: ValueFunction, core: Optional[geometry.PolyhedralSet] = None) -> float:
    """Distance of a stacked profile to consensual profiles in the core of ``v_bar``.

    The nearest such profile replicates the projection of the mean
    proposal onto the core.
    """
    X = _as_profile(x, v_bar.n_agents)
    core = core_polyhedron(v_bar) if core is None else core
    p = geometry.project(core, X.mean(axis=0))
    return float(np.linalg.norm(X - p))


def allocation_step(x, W: WeightedGraph, v: ValueFunction, kind: str = geometry.OVER_PROJECTION,
                    alpha: float = 0.5, beta: float = 0.0) -> np.ndarray:
    """One synchronous allocation update for every agent."""
    X = _as_profile(x, v.n_agents)
    X_hat = mix(W, X)
    T = apply_operator_many(kind, beta, core_polyhedron(v), X_hat)
    return (1.0 - alpha) * X + alpha * T


def bargaining_step(x, W: WeightedGraph, v: ValueFunction, kind: str = geometry.PROJECTION,
                    beta: float = 0.0) -> np.ndarray:
    """One synchronous bargaining update: mix, then move into own bounding set."""
    X = _as_profile(x, v.n_agents)
    if geometry.operator_weight(kind, beta) >= 1.0:
        raise ValueError("bargaining needs a paracontraction (projection or mixed with beta < 1)")
    core = core_polyhedron(v)
    active = np.stack([bounding_row_mask(core, i) for i in range(v.n_agents)])
    return apply_operator_many(kind, beta, core, mix(W, X), active)


class ValueSchedule:
    """The order in which value functions of a robust game are used.

    Families of at most ``BLOCK_CYCLIC_MAX_FAMILY`` members are visited
    block-cyclically (one seeded permutation, repeated), so every member
    recurs within every window of ``family_size`` steps. Larger families
    fall back to independent uniform draws.
    """

    def __init__(self, game: RobustGame, seed: int = 0, mode: Optional[str] = None):
        self.game = game
        self.seed = seed
        size = game.family_size()
        if mode is None:
            mode = BLOCK_CYCLIC if size <= BLOCK_CYCLIC_MAX_FAMILY else IID
        if mode == BLOCK_CYCLIC and size > BLOCK_CYCLIC_MAX_FAMILY:
            raise ValueError(f"value family of size {size} is too large for block-cyclic order")
        self.mode = mode
        self.family_size = size

    @property
    def window(self) -> Optional[int]:
        return self.family_size if self.mode == BLOCK_CYCLIC else None

    def __iter__(self):
        rng = np.random.default_rng(self.seed)
        if self.mode == BLOCK_CYCLIC:
            perm = rng.permutation(self.family_size)
            cache = {}
            k = 0
            while True:
                idx = int(perm[k % self.family_size])
                if idx not in cache:
                    cache[idx] = self.game.value_function_at(decode_family_index(self.game, idx))
                yield cache[idx]
                k += 1
        else:
            while True:
                yield self.game.value_function_at(sample_levels(self.game, rng))


def _check_kind(kind: str, beta: float) -> str:
    kind = geometry.normalize_kind(kind)
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return kind


@dataclass(frozen=True)
class AllocationConfig:
    game: RobustGame
    schedule: NetworkSchedule
    operator_kind: str = geometry.OVER_PROJECTION
    beta: float = 0.0
    alpha: float = 0.5
    epsilon: float = DEFAULT_EPSILON
    value_seed: int = 0
    stop_tol: float = STOP_TOL
    max_iter: int = MAX_ITER
    terminal_tol: float = TERMINAL_TOL
    thin_every: int = THIN_EVERY

    def __post_init__(self):
        object.__setattr__(self, "operator_kind", _check_kind(self.operator_kind, self.beta))
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError("epsilon must lie in (0, 1/2]")
        if not self.epsilon <= self.alpha <= 1.0 - self.epsilon:
            raise ValueError(f"alpha={self.alpha} must lie in [{self.epsilon}, {1 - self.epsilon}]")
        _check_common(self)


@dataclass(frozen=True)
class BargainConfig:
    game: RobustGame
    schedule: NetworkSchedule
    operator_kind: str = geometry.PROJECTION
    beta: float = 0.0
    value_seed: int = 0
    stop_tol: float = STOP_TOL
    max_iter: int = MAX_ITER
    terminal_tol: float = TERMINAL_TOL
    thin_every: int = THIN_EVERY

    def __post_init__(self):
        kind = _check_kind(self.operator_kind, self.beta)
        if geometry.operator_weight(kind, self.beta) >= 1.0:
            raise ValueError("bargaining needs a paracontraction: projection or mixed with beta < 1")
        object.__setattr__(self, "operator_kind", kind)
        _check_common(self)


def _check_common(cfg):
    if cfg.schedule.n_agents != cfg.game.n_agents:
        raise ValueError("schedule and game disagree on the number of agents")
    if cfg.max_iter < 0 or cfg.stop_tol < 0 or cfg.thin_every < 1:
        raise ValueError("max_iter, stop_tol must be nonnegative and thin_every positive")


@dataclass
class Trajectory:
    """Per-iteration convergence record of one run.

    ``normalized_distance[k]`` is the distance to the target set relative to
    the initial distance (0 throughout when the start is already optimal).
    """

    k: List[int] = field(default_factory=list)
    distance: List[float] = field(default_factory=list)
    normalized_distance: List[float] = field(default_factory=list)
    consensus_residual: List[float] = field(default_factory=list)
    profiles: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    payoff: Optional[np.ndarray] = None
    final_profile: Optional[np.ndarray] = None
    status: str = ""
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_csv(self, header_comments: Tuple[str, ...] = ()) -> str:
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "normalized_distance", "consensus_residual"])
        for k, nd, cr in zip(self.k, self.normalized_distance, self.consensus_residual):
            writer.writerow([k, f"{nd:.17g}", f"{cr:.17g}"])
        return buf.getvalue()


class _Runner:
    def __init__(self, cfg, x0, step):
        game = cfg.game
        self.cfg = cfg
        self.v_bar = game.upper
        cert = core_nonempty(self.v_bar)
        if not cert.feasible:
            raise EmptyRobustCoreError("the robust core is empty; refusing to start")
        self.core_bar = core_polyhedron(self.v_bar)
        n = game.n_agents
        self.x = initial_profile(game.grand_value, n) if x0 is None else _as_profile(x0, n)
        self.step = step

    def _done(self, x, nd) -> bool:
        cfg = self.cfg
        if nd > cfg.stop_tol:
            return False
        if consensus_residual(x) > cfg.terminal_tol:
            return False
        return in_core(x.mean(axis=0), self.v_bar, cfg.terminal_tol)

    def run(self) -> Trajectory:
        cfg = self.cfg
        traj = Trajectory()
        x = self.x
        d0 = distance_to_target(x, self.v_bar, self.core_bar)
        scale = d0 if d0 > 0 else 1.0

        def record(k, x, d):
            traj.k.append(k)
            traj.distance.append(d)
            traj.normalized_distance.append(d / scale)
            traj.consensus_residual.append(consensus_residual(x))
            if k % cfg.thin_every == 0:
                traj.profiles.append((k, x.copy()))

        record(0, x, d0)
        status = CONVERGED if self._done(x, d0 / scale) else MAX_ITER_REACHED
        k = 0
        if status != CONVERGED:
            graphs = iter(cfg.schedule)
            values = iter(ValueSchedule(cfg.game, cfg.value_seed))
            for k in range(1, cfg.max_iter + 1):
                W, v = next(graphs), next(values)
                try:
                    x = self.step(x, W, v)
                except ProjectionError as exc:
                    raise ProjectionError(f"iteration {k}, agent {exc.agent}: {exc}",
                                          exc.residual, exc.iterations, exc.agent) from exc
                d = distance_to_target(x, self.v_bar, self.core_bar)
                record(k, x, d)
                if self._done(x, d / scale):
                    status = CONVERGED
                    break
        traj.status = status
        traj.iterations = k
        traj.final_profile = x
        traj.payoff = x.mean(axis=0)
        return traj


def run_allocation(config: AllocationConfig, x0=None) -> Trajectory:
    """Iterate allocation steps until the target is reached or ``max_iter``.

    The run stops once the normalized distance is at most ``stop_tol``
    and the mean proposal is a consensual core point of the upper-bound
    game within ``terminal_tol``.

    Raises
    ------
    EmptyRobustCoreError
        If the upper-bound game has an empty core.
    """
    c = config

    def step(x, W, v):
        return allocation_step(x, W, v, c.operator_kind, c.alpha, c.beta)

    return _Runner(config, x0, step).run()


def run_bargaining(config: BargainConfig, x0=None) -> Trajectory:
    """Iterate bargaining steps; stopping rule as for :func:`run_allocation`."""
    c = config

    def step(x, W, v):
        return bargaining_step(x, W, v, c.operator_kind, c.beta)

    return _Runner(config, x0, step).run()
