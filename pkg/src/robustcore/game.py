"""
Transferable-utility games with interval-uncertain coalition values.

Coalitions are stored as bitmasks (bit ``i`` set when agent ``i`` is a
member). A value function is a float array of length ``2**n`` indexed
by mask; entry 0 (the empty coalition) is always zero.
"""

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from . import lp

MAX_AGENTS = 16
MEMBERSHIP_TOL = 1e-8
DEFAULT_GRID_STEP = 0.01


@dataclass(frozen=True, order=True)
class Coalition:
    """A nonempty set of agent indices with canonical sorted members."""

    members: tuple

    def __init__(self, members: Iterable[int]):
        canon = tuple(sorted({int(i) for i in members}))
        if not canon:
            raise ValueError("a coalition must be nonempty")
        if canon[0] < 0:
            raise ValueError("agent indices must be nonnegative")
        object.__setattr__(self, "members", canon)

    @classmethod
    def from_mask(cls, mask: int) -> "Coalition":
        return cls(i for i in range(mask.bit_length()) if mask >> i & 1)

    @property
    def mask(self) -> int:
        m = 0
        for i in self.members:
            m |= 1 << i
        return m

    def __contains__(self, agent) -> bool:
        return agent in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def key(self) -> str:
        """The JSON key for this coalition, e.g. ``"0,2"``."""
        return ",".join(str(i) for i in self.members)

    @classmethod
    def parse(cls, key: str) -> "Coalition":
        return cls(int(tok) for tok in key.split(",") if tok.strip())


CoalitionLike = Union[Coalition, int, Iterable[int]]


def as_mask(S: CoalitionLike) -> int:
    """Bitmask of a coalition given as Coalition, mask or index iterable."""
    if isinstance(S, Coalition):
        return S.mask
    if isinstance(S, (int, np.integer)):
        return int(S)
    return Coalition(S).mask


def grand_mask(n: int) -> int:
    return (1 << n) - 1


def strict_masks(n: int) -> range:
    """Masks of all nonempty strict coalitions, in increasing order."""
    return range(1, grand_mask(n))


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def indicator(mask: int, n: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n)], dtype=float)


def indicator_matrix(masks, n: int) -> np.ndarray:
    masks = np.asarray(list(masks), dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(float)


def _check_n(n: int):
    if not 1 <= n <= MAX_AGENTS:
        raise ValueError(f"n_agents must be in 1..{MAX_AGENTS}, got {n}")


class ValueFunction:
    """A value for every nonempty coalition of ``n_agents`` agents.

    Immutable: the backing array is flagged read-only.
    """

    __slots__ = ("n_agents", "values")

    def __init__(self, n_agents: int, values):
        _check_n(n_agents)
        arr = np.array(values, dtype=float)
        if arr.shape != (1 << n_agents,):
            raise ValueError(f"expected {1 << n_agents} values indexed by mask, got shape {arr.shape}")
        if not np.all(np.isfinite(arr[1:])):
            raise ValueError("coalition values must be finite")
        arr[0] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "n_agents", int(n_agents))
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ValueFunction is immutable")

    def __reduce__(self):
        return (ValueFunction, (self.n_agents, np.array(self.values)))

    @classmethod
    def from_dict(cls, n_agents: int, mapping: dict) -> "ValueFunction":
        """Build from ``{coalition: value}``; keys may be Coalition, mask,
        index tuples or ``"0,2"`` strings. Every nonempty coalition must
        be present.
        """
        _check_n(n_agents)
        arr = np.full(1 << n_agents, np.nan)
        arr[0] = 0.0
        for key, val in mapping.items():
            S = Coalition.parse(key) if isinstance(key, str) else key
            m = as_mask(S)
            if not 0 < m < (1 << n_agents):
                raise ValueError(f"coalition {key!r} is out of range for {n_agents} agents")
            arr[m] = float(val)
        missing = np.flatnonzero(np.isnan(arr))
        if missing.size:
            names = [Coalition.from_mask(int(m)).key() for m in missing[:5]]
            raise ValueError(f"value function is missing coalitions {names}")
        return cls(n_agents, arr)

    def __call__(self, S: CoalitionLike) -> float:
        return float(self.values[as_mask(S)])

    @property
    def grand_value(self) -> float:
        return float(self.values[-1])

    def to_dict(self) -> dict:
        return {Coalition.from_mask(m).key(): float(self.values[m])
                for m in range(1, 1 << self.n_agents)}

    def __eq__(self, other):
        return (isinstance(other, ValueFunction) and other.n_agents == self.n_agents
                and np.array_equal(other.values, self.values))

    def __hash__(self):
        return hash((self.n_agents, self.values.tobytes()))

    def __repr__(self):
        body = ", ".join(f"{{{k}}}: {v:g}" for k, v in self.to_dict().items())
        return f"ValueFunction({body})"


@dataclass(frozen=True)
class RobustGame:
    """A family of value functions bounded per coalition.

    Each strict coalition ``S`` takes values on the grid
    ``lower(S) + k * grid_step`` not exceeding ``upper(S)``; the grand
    coalition value is fixed.
    """

    lower: ValueFunction
    upper: ValueFunction
    grid_step: float = DEFAULT_GRID_STEP

    def __post_init__(self):
        if self.lower.n_agents != self.upper.n_agents:
            raise ValueError("lower and upper bounds disagree on n_agents")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        lo, hi = self.lower.values, self.upper.values
        bad = np.flatnonzero(lo > hi)
        if bad.size:
            raise ValueError(f"lower > upper for coalition {Coalition.from_mask(int(bad[0])).key()}")
        if lo[-1] != hi[-1]:
            raise ValueError("the grand coalition value must be fixed (lower == upper)")

    @property
    def n_agents(self) -> int:
        return self.lower.n_agents

    @property
    def grand_value(self) -> float:
        return self.upper.grand_value

    def grid_sizes(self) -> np.ndarray:
        """Number of admissible values per mask (1 for the grand coalition)."""
        width = self.upper.values - self.lower.values
        sizes = np.floor(width / self.grid_step + 1e-9).astype(np.int64) + 1
        sizes[0] = 1
        sizes[-1] = 1
        return sizes

    def family_size(self) -> int:
        """``|V|`` as an exact Python integer."""
        total = 1
        for s in self.grid_sizes().tolist():
            total *= int(s)
        return total

    def grid_values(self, S: CoalitionLike) -> np.ndarray:
        m = as_mask(S)
        k = np.arange(self.grid_sizes()[m])
        return self.lower.values[m] + k * self.grid_step

    def value_function_at(self, levels) -> ValueFunction:
        """The family member with grid level ``levels[m]`` for each mask."""
        levels = np.asarray(levels, dtype=np.int64)
        vals = self.lower.values + levels * self.grid_step
        vals[-1] = self.grand_value
        return ValueFunction(self.n_agents, vals)

    def to_json(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
            "grid_step": self.grid_step,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RobustGame":
        try:
            n = int(doc["n_agents"])
            lower = ValueFunction.from_dict(n, doc["lower"])
            upper = ValueFunction.from_dict(n, doc["upper"])
            step = float(doc.get("grid_step", DEFAULT_GRID_STEP))
        except KeyError as exc:
            raise ValueError(f"robust game is missing field {exc.args[0]!r}") from None
        return cls(lower, upper, step)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "RobustGame":
        return cls.from_json(json.loads(text))


def grand_value_fixed_upper(game: RobustGame) -> ValueFunction:
    """The upper-bound value function, whose core is the robust core."""
    return game.upper


def _check_payoff(x, v: ValueFunction) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (v.n_agents,):
        raise ValueError(f"payoff has shape {x.shape}, expected ({v.n_agents},)")
    return x


def coalition_sums(x: np.ndarray) -> np.ndarray:
    """``sums[m] = sum(x[i] for i in mask m)`` for every mask."""
    n = x.size
    sums = np.zeros(1 << n)
    for i in range(n):
        step = 1 << i
        sums[step:2 * step] = sums[:step] + x[i]
    return sums


def in_core(x, v: ValueFunction, tol: float = MEMBERSHIP_TOL) -> bool:
    """Whether ``x`` is efficient and coalitionally rational for ``v``."""
    x = _check_payoff(x, v)
    sums = coalition_sums(x)
    if abs(sums[-1] - v.grand_value) > tol:
        return False
    return bool(np.all(sums[1:-1] >= v.values[1:-1] - tol))


def in_bounding_set(x, v: ValueFunction, agent: int, tol: float = MEMBERSHIP_TOL) -> bool:
    """Whether ``x`` lies in the set of payoffs ``agent`` accepts.

    Only efficiency and the strict coalitions containing ``agent`` are
    checked.
    """
    x = _check_payoff(x, v)
    if not 0 <= agent < v.n_agents:
        raise IndexError(f"agent {agent} out of range")
    sums = coalition_sums(x)
    if abs(sums[-1] - v.grand_value) > tol:
        return False
    masks = np.arange(1, (1 << v.n_agents) - 1)
    own = masks[(masks >> agent) & 1 == 1]
    return bool(np.all(sums[own] >= v.values[own] - tol))


@dataclass(frozen=True)
class CoreCertificate:
    feasible: bool
    witness: Optional[np.ndarray]
    lp_status: str

    def __bool__(self):
        return self.feasible


def core_nonempty(v: ValueFunction, tol: float = MEMBERSHIP_TOL) -> CoreCertificate:
    """Decide whether the core of ``v`` is nonempty with an LP.

    Raises
    ------
    lp.LpError
        If the LP solver stops at its pivot limit.
    """
    n = v.n_agents
    masks = list(strict_masks(n))
    A_ge = indicator_matrix(masks, n) if masks else np.zeros((0, n))
    b_ge = v.values[masks] if masks else np.zeros(0)
    out = lp.feasible_point(np.ones((1, n)), [v.grand_value], A_ge, b_ge)
    if out.status == lp.ITERATION_CAP:
        raise lp.LpError("core feasibility LP hit the pivot limit")
    if out.status == lp.INFEASIBLE:
        return CoreCertificate(False, None, out.status)
    witness = out.z_star
    if not in_core(witness, v, tol):
        raise lp.LpError("LP witness fails the core membership check")
    return CoreCertificate(True, witness, out.status)


def sample_value_function(game: RobustGame, rng_seed) -> ValueFunction:
    """Draw each strict coalition's value uniformly from its grid."""
    rng = np.random.default_rng(rng_seed)
    return game.value_function_at(sample_levels(game, rng))


def sample_levels(game: RobustGame, rng: np.random.Generator) -> np.ndarray:
    sizes = game.grid_sizes()
    return rng.integers(0, sizes)


def iter_family(game: RobustGame) -> Iterator[ValueFunction]:
    """Every member of the value family, in mixed-radix order."""
    for idx in range(game.family_size()):
        yield game.value_function_at(decode_family_index(game, idx))


def decode_family_index(game: RobustGame, index: int) -> np.ndarray:
    """Grid levels of family member ``index`` (mask 1 is the fastest digit)."""
    sizes = game.grid_sizes()
    levels = np.zeros(sizes.size, dtype=np.int64)
    for m in range(1, sizes.size - 1):
        index, levels[m] = divmod(index, int(sizes[m]))
    return levels


def three_firm_game() -> RobustGame:
    """Three firms: singletons worth 1, pairs in {2,3,4}, {2,3,4}, {3,4,5},
    grand coalition worth 8, integer grid."""
    lower = {"0": 1, "1": 1, "2": 1, "0,1": 2, "0,2": 2, "1,2": 3, "0,1,2": 8}
    upper = {"0": 1, "1": 1, "2": 1, "0,1": 4, "0,2": 4, "1,2": 5, "0,1,2": 8}
    return RobustGame(ValueFunction.from_dict(3, lower), ValueFunction.from_dict(3, upper), 1.0)
