"""
Batch experiment harness and command-line entry point.

An experiment config is a JSON object::

    {
      "scenario": {...},          # RobustGame JSON or energy scenario JSON
      "network": {...},           # NetworkSchedule JSON (default: cycle graph)
      "algorithm": "allocate",    # or "bargain"
      "operator": "overproj",     # proj | overproj | mixed
      "beta": 0.0,
      "alpha": 0.5,               # allocate only
      "runs": 100,
      "base_seed": 0,
      "max_iter": 10000,
      "stop_tol": 1e-6,
      "output_dir": "out",
      "x0": [[...], ...]          # optional stacked start profile
    }

Run ``r`` uses seed ``base_seed + r``. Its value-schedule, graph-schedule
and demand sub-seeds are the first word of
``SeedSequence([seed, offset])`` with offsets 0, 1 and 2.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import energy, geometry
from .dynamics import (CONVERGED, MAX_ITER, STOP_TOL, TERMINAL_TOL, AllocationConfig, BargainConfig,
                       EmptyRobustCoreError, Trajectory, consensus_residual, run_allocation,
                       run_bargaining)
from .game import RobustGame, core_nonempty, grand_value_fixed_upper, in_core
from .network import NetworkSchedule, cycle_graph, q_connected, validate

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3

ALLOCATE = "allocate"
BARGAIN = "bargain"

VALUE_OFFSET, GRAPH_OFFSET, DEMAND_OFFSET = 0, 1, 2


class ConfigError(ValueError):
    """A config file could not be parsed or is inconsistent."""


def sub_seed(seed: int, offset: int) -> int:
    """Deterministic child seed for one random stream of a run."""
    return int(np.random.SeedSequence([int(seed), int(offset)]).generate_state(1)[0])


def load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def game_from_scenario(doc: dict) -> RobustGame:
    """Read either a robust game or an energy scenario (built on the fly)."""
    if "prosumers" in doc:
        try:
            params, scenario, step = energy.scenario_from_json(doc)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"scenario: {exc}") from None
        return energy.build_robust_game(params, scenario, step)
    try:
        return RobustGame.from_json(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario: {exc}") from None


def schedule_from_doc(doc: Optional[dict], n_agents: int) -> NetworkSchedule:
    if doc is None:
        return NetworkSchedule([cycle_graph(n_agents)])
    try:
        schedule = NetworkSchedule.from_json(doc, n_agents=n_agents)
    except (ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"network: {exc}") from None
    if schedule.n_agents != n_agents:
        raise ConfigError(f"network: {schedule.n_agents} agents but the game has {n_agents}")
    return schedule


@dataclass(frozen=True)
class ExperimentSpec:
    game: RobustGame
    schedule: NetworkSchedule
    algorithm: str = ALLOCATE
    operator: str = geometry.OVER_PROJECTION
    beta: float = 0.0
    alpha: float = 0.5
    runs: int = 1
    base_seed: int = 0
    max_iter: int = MAX_ITER
    stop_tol: float = STOP_TOL
    output_dir: Optional[str] = None
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.algorithm not in (ALLOCATE, BARGAIN):
            raise ConfigError(f"algorithm: expected 'allocate' or 'bargain', got {self.algorithm!r}")
        try:
            kind = geometry.normalize_kind(self.operator)
        except ValueError as exc:
            raise ConfigError(f"operator: {exc}") from None
        object.__setattr__(self, "operator", kind)
        if self.runs < 1:
            raise ConfigError("runs: must be at least 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta: must lie in [0, 1]")
        if self.algorithm == BARGAIN and geometry.operator_weight(kind, self.beta) >= 1.0:
            raise ConfigError("operator: bargaining needs a paracontraction; "
                              "over-projection (or mixed with beta = 1) is rejected")
        if self.max_iter < 0 or self.stop_tol < 0:
            raise ConfigError("max_iter and stop_tol must be nonnegative")
        # surface alpha and schedule problems before any run starts
        self.run_config(self.base_seed)

    def run_config(self, seed: int):
        schedule = self.schedule.reseeded(sub_seed(seed, GRAPH_OFFSET))
        common = dict(game=self.game, schedule=schedule, operator_kind=self.operator, beta=self.beta,
                      value_seed=sub_seed(seed, VALUE_OFFSET), stop_tol=self.stop_tol,
                      max_iter=self.max_iter)
        try:
            if self.algorithm == ALLOCATE:
                return AllocationConfig(alpha=self.alpha, **common)
            return BargainConfig(**common)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def seeds(self) -> List[int]:
        return [self.base_seed + r for r in range(self.runs)]

    @classmethod
    def from_json(cls, doc: dict, **overrides) -> "ExperimentSpec":
        if "scenario" not in doc:
            raise ConfigError("missing field 'scenario'")
        game = game_from_scenario(doc["scenario"])
        schedule = schedule_from_doc(doc.get("network"), game.n_agents)
        fields = {
            "algorithm": (str, ALLOCATE),
            "operator": (str, None),
            "beta": (float, 0.0),
            "alpha": (float, 0.5),
            "runs": (int, 1),
            "base_seed": (int, 0),
            "max_iter": (int, MAX_ITER),
            "stop_tol": (float, STOP_TOL),
            "output_dir": (str, None),
        }
        kwargs = {}
        for name, (conv, default) in fields.items():
            raw = overrides.get(name)
            if raw is None:
                raw = doc.get(name, default)
            if raw is None:
                continue
            try:
                kwargs[name] = conv(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"{name}: cannot read {raw!r} as {conv.__name__}") from None
        if "operator" not in kwargs:
            kwargs["operator"] = (geometry.OVER_PROJECTION if kwargs.get("algorithm", ALLOCATE) == ALLOCATE
                                  else geometry.PROJECTION)
        x0 = doc.get("x0")
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float)
            if x0.shape != (game.n_agents, game.n_agents):
                raise ConfigError(f"x0: expected shape {(game.n_agents, game.n_agents)}, got {x0.shape}")
        return cls(game=game, schedule=schedule, x0=x0, **kwargs)


@dataclass
class RunResult:
    seed: int
    trajectory: Trajectory
    in_robust_core: bool


@dataclass
class EnsembleSummary:
    """Pointwise statistics of the normalized distance over all runs.

    Runs that stopped early are carried forward at their last value.
    """

    k: np.ndarray
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray
    seeds: List[int] = field(default_factory=list)
    status: List[str] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    payoffs: List[np.ndarray] = field(default_factory=list)
    in_robust_core: List[bool] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(s == CONVERGED for s in self.status)


def _run_one(spec: ExperimentSpec, seed: int) -> RunResult:
    cfg = spec.run_config(seed)
    runner = run_allocation if spec.algorithm == ALLOCATE else run_bargaining
    traj = runner(cfg, spec.x0)
    v_bar = grand_value_fixed_upper(spec.game)
    ok = in_core(traj.payoff, v_bar, TERMINAL_TOL) and consensus_residual(traj.final_profile) <= TERMINAL_TOL
    return RunResult(seed, traj, bool(ok))


def _run_guarded(spec: ExperimentSpec, seed: int) -> RunResult:
    try:
        return _run_one(spec, seed)
    except EmptyRobustCoreError:
        raise
    except Exception as exc:
        raise RuntimeError(f"run with seed {seed} failed: {exc}") from exc


def summarize(results: List[RunResult]) -> EnsembleSummary:
    length = max(len(r.trajectory.normalized_distance) for r in results)
    curves = np.empty((len(results), length))
    for i, r in enumerate(results):
        nd = np.asarray(r.trajectory.normalized_distance)
        curves[i, :nd.size] = nd
        curves[i, nd.size:] = nd[-1]
    return EnsembleSummary(
        k=np.arange(length),
        mean=curves.mean(axis=0),
        min=curves.min(axis=0),
        max=curves.max(axis=0),
        seeds=[r.seed for r in results],
        status=[r.trajectory.status for r in results],
        iterations=[r.trajectory.iterations for r in results],
        payoffs=[r.trajectory.payoff for r in results],
        in_robust_core=[r.in_robust_core for r in results],
    )


def _header(spec: ExperimentSpec, seed: Optional[int] = None) -> List[str]:
    lines = [
        f"algorithm={spec.algorithm} operator={spec.operator} beta={spec.beta!r} alpha={spec.alpha!r}",
        f"runs={spec.runs} base_seed={spec.base_seed} max_iter={spec.max_iter} stop_tol={spec.stop_tol!r}",
        "sub-seeds: SeedSequence([seed, offset]).generate_state(1)[0] with offsets "
        "value=0 graph=1 demand=2",
    ]
    if seed is not None:
        lines.append(f"seed={seed} value_seed={sub_seed(seed, VALUE_OFFSET)} "
                     f"graph_seed={sub_seed(seed, GRAPH_OFFSET)} demand_seed={sub_seed(seed, DEMAND_OFFSET)}")
    return lines


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_outputs(spec: ExperimentSpec, results: List[RunResult], summary: EnsembleSummary, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    for r in results:
        path = os.path.join(out_dir, f"run_{r.seed}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(r.trajectory.to_csv(tuple(_header(spec, r.seed))))
    with open(os.path.join(out_dir, "aggregate.csv"), "w", encoding="utf-8", newline="\n") as fh:
        for line in _header(spec):
            fh.write(f"# {line}\n")
        fh.write("k,mean,min,max\n")
        for k, a, b, c in zip(summary.k, summary.mean, summary.min, summary.max):
            fh.write(f"{k},{_fmt(a)},{_fmt(b)},{_fmt(c)}\n")
    n = spec.game.n_agents
    with open(os.path.join(out_dir, "terminal.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("seed,status,iterations,in_robust_core," + ",".join(f"x{i}" for i in range(n)) + "\n")
        for seed, st, it, ok, x in zip(summary.seeds, summary.status, summary.iterations,
                                       summary.in_robust_core, summary.payoffs):
            fh.write(f"{seed},{st},{it},{int(ok)}," + ",".join(_fmt(v) for v in x) + "\n")


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> EnsembleSummary:
    """Run every seed of ``spec`` and aggregate the normalized distances.

    Raises
    ------
    EmptyRobustCoreError
        If the robust core is empty (checked once, before any run).
    RuntimeError
        If a run fails; the message names the seed.
    """
    if not core_nonempty(grand_value_fixed_upper(spec.game)).feasible:
        raise EmptyRobustCoreError("the robust core is empty; refusing to start")
    seeds = spec.seeds()
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_guarded, [spec] * len(seeds), seeds))
    else:
        results = [_run_guarded(spec, s) for s in seeds]
    summary = summarize(results)
    if spec.output_dir:
        write_outputs(spec, results, summary, spec.output_dir)
    return summary


@dataclass
class CertifyReport:
    lines: List[str]
    ok: bool

    def __str__(self):
        return "\n".join(self.lines)


def certify(game: RobustGame, schedule: NetworkSchedule) -> CertifyReport:
    """Check that the robust core is nonempty and the network is admissible."""
    lines, ok = [], True
    cert = core_nonempty(grand_value_fixed_upper(game))
    if cert.feasible:
        lines.append("robust core: nonempty, witness [" + ", ".join(f"{v:.12g}" for v in cert.witness) + "]")
    else:
        lines.append(f"robust core: EMPTY (LP status {cert.lp_status})")
        ok = False
    size = game.family_size()
    size_text = str(size) if size < 10**12 else f"{float(size):.3e}"
    lines.append(f"value family: {size_text} members, grid step {game.grid_step:g}")
    for idx, g in enumerate(schedule.graphs):
        verdict = validate(g.weights, schedule.gamma)
        lines.append(f"graph {idx}: {verdict}")
        ok &= verdict.ok
    connected = q_connected(schedule)
    lines.append(f"Q-connectivity (Q={schedule.Q}, mode={schedule.mode}): "
                 + ("pass" if connected else "FAIL: some window of Q graphs has a union "
                    "that is not strongly connected"))
    ok &= connected
    return CertifyReport(lines, bool(ok))


def energy_values(scenario_doc: dict) -> RobustGame:
    """Robust game of coalition savings for an energy scenario document."""
    try:
        params, scenario, step = energy.scenario_from_json(scenario_doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario: {exc}") from None
    return energy.build_robust_game(params, scenario, step)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustcore", description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("certify", "allocate", "bargain", "energy-values"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (file for energy-values)")
        if name in ("allocate", "bargain"):
            p.add_argument("--seed", type=int, help="base seed")
            p.add_argument("--runs", type=int)
            p.add_argument("--operator", choices=["proj", "overproj", "mixed"])
            p.add_argument("--beta", type=float)
            p.add_argument("--max-iter", type=int)
            p.add_argument("--tol", type=float, help="stopping tolerance on normalized distance")
            p.add_argument("--jobs", type=int, default=1)
            p.add_argument("--strict", action="store_true", help="exit 3 if any run does not converge")
        if name == "allocate":
            p.add_argument("--alpha", type=float)
    return parser


def _cmd_experiment(args, algorithm: str) -> int:
    doc = load_json(args.config)
    overrides = dict(algorithm=algorithm, base_seed=args.seed, runs=args.runs, operator=args.operator,
                     beta=args.beta, alpha=getattr(args, "alpha", None), max_iter=args.max_iter,
                     stop_tol=args.tol, output_dir=args.out)
    spec = ExperimentSpec.from_json(doc, **overrides)
    summary = run_experiment(spec, jobs=args.jobs)
    n_conv = sum(s == CONVERGED for s in summary.status)
    print(f"{algorithm}: {n_conv}/{len(summary.status)} runs converged; "
          f"{sum(summary.in_robust_core)} terminal payoffs in the robust core")
    print(f"final mean normalized distance {_fmt(summary.mean[-1])}")
    if spec.output_dir:
        print(f"wrote {spec.output_dir}/aggregate.csv")
    if args.strict and not summary.all_converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_certify(args) -> int:
    doc = load_json(args.config)
    scenario = doc.get("scenario", doc)
    game = game_from_scenario(scenario)
    schedule = schedule_from_doc(doc.get("network"), game.n_agents)
    report = certify(game, schedule)
    print(report)
    return EXIT_OK if report.ok else EXIT_INVALID


def _cmd_energy_values(args) -> int:
    doc = load_json(args.config)
    game = energy_values(doc.get("scenario", doc))
    text = json.dumps(game.to_json(), indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "energy-values":
            return _cmd_energy_values(args)
        return _cmd_experiment(args, ALLOCATE if args.command == "allocate" else BARGAIN)
    except (ConfigError, EmptyRobustCoreError, energy.EnergyModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
