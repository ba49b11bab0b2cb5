"""Social networks that decide who plays with whom.

Node indices ``0..n-1`` double as the canonical ring order, which is what
"global" edges are measured against for every network kind.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .rng import Stream

MAX_REJECTIONS = 10_000


class DegenerateGeneratorError(RuntimeError):
    """Raised when a generator cannot produce a valid network."""


class Kind(str, enum.Enum):
    RING = "ring"
    CLIQUE = "clique"
    RANDOM = "random"
    SMALL_WORLD = "small_world"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"smallworld": "small_world", "er": "random", "complete": "clique"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown topology kind {value!r}") from None


@dataclass(frozen=True)
class TopologySpec:
    kind: Kind
    n_agents: int = 10
    param: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if int(self.n_agents) != self.n_agents or self.n_agents < 3:
            raise ValueError(f"n_agents must be an integer >= 3, got {self.n_agents!r}")
        object.__setattr__(self, "n_agents", int(self.n_agents))
        if self.kind in (Kind.RING, Kind.CLIQUE):
            # the parameter carries no meaning for deterministic kinds
            object.__setattr__(self, "param", None)
        else:
            if self.param is None:
                raise ValueError(f"{self.kind.value} topology requires a probability param")
            p = float(self.param)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"param must lie in [0, 1], got {p}")
            object.__setattr__(self, "param", p)

    @property
    def param_value(self) -> float:
        """``param`` or 0.0 for kinds that do not use it (CSV friendly)."""
        return 0.0 if self.param is None else self.param


@dataclass(frozen=True)
class SocialNetwork:
    n: int
    edges: frozenset[tuple[int, int]]
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in adj))
        self.validate()

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "SocialNetwork":
        edges = set()
        for i, j in pairs:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            edges.add((min(i, j), max(i, j)))
        return cls(n, frozenset(edges))

    def validate(self) -> None:
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"edge ({i}, {j}) is not a canonical pair of nodes 0..{self.n - 1}")
        isolated = [v for v, nb in enumerate(self.neighbors) if not nb]
        if isolated:
            raise ValueError(f"isolated nodes {isolated}: every agent needs a partner")

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_edgelist(self) -> str:
        lines = [f"n={self.n}"]
        lines += [f"{i} {j}" for i, j in self.sorted_edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> "SocialNetwork":
        rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not rows or not rows[0].startswith("n="):
            raise ValueError("edge list must start with a 'n=<int>' header")
        n = int(rows[0][2:])
        pairs = []
        for ln in rows[1:]:
            a, b = ln.split()
            i, j = int(a), int(b)
            if i >= j:
                raise ValueError(f"edge line {ln!r} must satisfy i < j")
            pairs.append((i, j))
        return cls.from_pairs(n, pairs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path: str | Path) -> "SocialNetwork":
        return cls.from_edgelist(Path(path).read_text())


@dataclass(frozen=True)
class GraphStats:
    avg_degree: float
    degree_variance: float
    n_global_edges: int
    connected: bool


def ring_distance(i: int, j: int, n: int) -> int:
    d = abs(i - j)
    return min(d, n - d)


def _ring_edges(n: int) -> set[tuple[int, int]]:
    return {(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)}


def generate(spec: TopologySpec, rng: Stream) -> SocialNetwork:
    n = spec.n_agents
    if spec.kind is Kind.RING:
        return SocialNetwork(n, frozenset(_ring_edges(n)))
    if spec.kind is Kind.CLIQUE:
        return SocialNetwork(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))
    if spec.kind is Kind.RANDOM:
        return _erdos_renyi(n, spec.param_value, rng)
    return _small_world(n, spec.param_value, rng)


def _erdos_renyi(n: int, p: float, rng: Stream) -> SocialNetwork:
    for _ in range(MAX_REJECTIONS):
        edges = {(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p}
        degree = [0] * n
        for i, j in edges:
            degree[i] += 1
            degree[j] += 1
        if min(degree) > 0:
            return SocialNetwork(n, frozenset(edges))
    raise DegenerateGeneratorError(
        f"degenerate generator parameters: random(n={n}, p={p}) produced isolated nodes "
        f"in {MAX_REJECTIONS} consecutive samples"
    )


def _small_world(n: int, p: float, rng: Stream) -> SocialNetwork:
    edges = _ring_edges(n)
    for i in range(n):
        if rng.uniform() < p:
            targets = [j for j in range(n) if j != i and (min(i, j), max(i, j)) not in edges]
            if not targets:
                continue
            j = targets[rng.randbelow(len(targets))]
            edges.add((min(i, j), max(i, j)))
    return SocialNetwork(n, frozenset(edges))


def graph_stats(net: SocialNetwork) -> GraphStats:
    n = net.n
    degrees = [net.degree(v) for v in range(n)]
    mean = 2 * len(net.edges) / n
    var = sum((d - mean) ** 2 for d in degrees) / n
    n_global = sum(1 for i, j in net.edges if ring_distance(i, j, n) > 1)
    return GraphStats(mean, var, n_global, _is_connected(net))


def _is_connected(net: SocialNetwork) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in net.neighbors[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == net.n


def sample_pair(net: SocialNetwork, rng: Stream) -> tuple[int, int]:
    """First agent uniform over nodes, partner uniform over its neighbors."""
    a = rng.randbelow(net.n)
    nbrs = net.neighbors[a]
    return a, nbrs[rng.randbelow(len(nbrs))]
