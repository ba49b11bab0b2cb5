"""Simulation runs, experiment sweeps and their on-disk formats."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import metrics
from .agent import AgentConfig
from .engine import (
    EPISODE_DTYPE,
    LoopSettings,
    build_population,
    columns_to_records,
    empty_log_columns,
    get_engine,
)
from .game import GameConfig
from .rng import GRAPH, derive_seed, derive_stream
from .topology import GraphStats, Kind, SocialNetwork, TopologySpec, generate, graph_stats

log = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "experiment_id",
    "topology_kind",
    "topology_param",
    "realized_avg_degree",
    "realized_degree_variance",
    "n_global_edges",
    "supervision_rate",
    "repetition",
    "seed",
    "avg_reward",
    "speaking_consistency",
    "listening_consistency",
    "between_agent_divergence",
    "within_agent_divergence",
    "signaling_divergence",
    "action_predictability",
    "message_predictability",
]
METRIC_COLUMNS = RESULT_COLUMNS[9:]
SERIES_STEP = 2000


class ConfigError(ValueError):
    """A configuration value is malformed; ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SimulationConfig:
    topology: TopologySpec = field(default_factory=lambda: TopologySpec(Kind.CLIQUE))
    supervision_rate: float = 0.0
    rounds: int = 120_000
    metric_window: int = 10_000
    seed: int = 0
    game: GameConfig = field(default_factory=GameConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    ablate_channel: bool = False
    series_every: int = 0
    pooled_between: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.supervision_rate <= 1.0:
            raise ConfigError("supervision_rate", f"must lie in [0, 1], got {self.supervision_rate}")
        if self.rounds < 1:
            raise ConfigError("rounds", "metric window is empty: at least one round is required")
        if not 1 <= self.metric_window <= self.rounds:
            raise ConfigError("metric_window", f"must lie in [1, rounds={self.rounds}], got {self.metric_window}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        a = self.agent
        if a.batch_size < 1 or a.replay_capacity < a.batch_size:
            raise ConfigError("agent.batch_size", "must be >= 1 and not exceed replay_capacity")
        if not a.learning_rate > 0:
            raise ConfigError("agent.learning_rate", "must be positive")
        if not (0 <= a.epsilon_end <= 1 and 0 <= a.epsilon_start <= 1):
            raise ConfigError("agent.epsilon_start", "exploration rates must lie in [0, 1]")
        if not 0 < a.epsilon_decay_fraction <= 1:
            raise ConfigError("agent.epsilon_decay_fraction", "must lie in (0, 1]")
        if self.series_every < 0:
            raise ConfigError("series_every", "must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "topology": {
                "kind": self.topology.kind.value,
                "n_agents": self.topology.n_agents,
                "param": self.topology.param,
            },
            "supervision_rate": self.supervision_rate,
            "rounds": self.rounds,
            "metric_window": self.metric_window,
            "seed": self.seed,
            "game": dataclasses.asdict(self.game),
            "agent": dataclasses.asdict(self.agent),
            "ablate_channel": self.ablate_channel,
            "series_every": self.series_every,
            "pooled_between": self.pooled_between,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimulationConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        kwargs: dict[str, Any] = {}
        if "topology" in data:
            topo = data.pop("topology")
            if not isinstance(topo, dict):
                raise ConfigError("topology", "must be a mapping with kind/n_agents/param")
            extra = set(topo) - {"kind", "n_agents", "param"}
            if extra:
                raise ConfigError(f"topology.{sorted(extra)[0]}", "unknown configuration field")
            try:
                kwargs["topology"] = TopologySpec(topo.get("kind", "clique"), topo.get("n_agents", 10), topo.get("param"))
            except (TypeError, ValueError) as exc:
                raise ConfigError("topology", str(exc)) from None
        for name, kind in (("game", GameConfig), ("agent", AgentConfig)):
            if name in data:
                sub = data.pop(name)
                sub_fields = {f.name: f for f in dataclasses.fields(kind)}
                for key in sub:
                    if key not in sub_fields:
                        raise ConfigError(f"{name}.{key}", "unknown configuration field")
                try:
                    kwargs[name] = kind(**{k: _coerce(f"{name}.{k}", v, sub_fields[k].type) for k, v in sub.items()})
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(name, str(exc)) from None
        types = {"supervision_rate": float, "rounds": int, "metric_window": int, "seed": int,
                 "ablate_channel": bool, "series_every": int, "pooled_between": bool}
        for key, value in data.items():
            kwargs[key] = _coerce(key, value, types[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "SimulationConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("<file>", f"{path}: top level must be an object")
        return cls.from_dict(data)


def _coerce(name: str, value: Any, kind: Any) -> Any:
    kind = {"int": int, "float": float, "str": str, "bool": bool}.get(kind, kind)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if kind is str and not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return value


@dataclass
class RunResult:
    config: SimulationConfig
    stats: GraphStats
    report: metrics.MetricsReport
    network: SocialNetwork
    engine: str
    wall_time: float
    episodes: np.ndarray | None = None
    series: list[dict[str, float]] = field(default_factory=list)
    experiment_id: str = "custom"
    repetition: int = 0

    def row(self) -> dict[str, Any]:
        rep = self.report
        topo = self.config.topology
        return {
            "experiment_id": self.experiment_id,
            "topology_kind": topo.kind.value,
            "topology_param": topo.param_value,
            "realized_avg_degree": self.stats.avg_degree,
            "realized_degree_variance": self.stats.degree_variance,
            "n_global_edges": self.stats.n_global_edges,
            "supervision_rate": self.config.supervision_rate,
            "repetition": self.repetition,
            "seed": self.config.seed,
            **{name: getattr(rep, name) for name in METRIC_COLUMNS},
        }


def run_simulation(cfg: SimulationConfig, engine: str | None = None, keep_log: bool = True) -> RunResult:
    """Generate the network once, play ``cfg.rounds`` episodes, score the final window."""
    cfg.validate()
    t0 = time.perf_counter()
    network = generate(cfg.topology, derive_stream(cfg.seed, GRAPH))
    pop = build_population(network, cfg.seed, cfg.agent, cfg.game)
    settings = LoopSettings(cfg.rounds, cfg.supervision_rate, cfg.game, cfg.agent, cfg.ablate_channel)
    eng = get_engine(engine)
    cols = empty_log_columns(cfg.rounds)
    eng.run(pop, settings, 0, cfg.rounds, cols)
    episodes = columns_to_records(cols)
    n = network.n
    window = (cfg.rounds - cfg.metric_window, cfg.rounds)
    report = metrics.report(metrics.accumulate(episodes, n, window), pooled_between=cfg.pooled_between)
    series = []
    if cfg.series_every:
        for end in range(cfg.series_every, cfg.rounds + 1, cfg.series_every):
            win = (max(0, end - cfg.series_every), end)
            rep = metrics.report(metrics.accumulate(episodes, n, win), pooled_between=cfg.pooled_between)
            series.append({"round": end, **{k: getattr(rep, k) for k in METRIC_COLUMNS}})
    return RunResult(
        cfg,
        graph_stats(network),
        report,
        network,
        eng.name,
        time.perf_counter() - t0,
        episodes if keep_log else None,
        series,
    )


# --------------------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class Cell:
    topology: TopologySpec
    supervision_rate: float


@dataclass
class SweepSpec:
    experiment_id: str
    cells: list[Cell]
    repetitions: int
    rounds: int = 120_000
    metric_window: int = 10_000
    n_agents: int = 10

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.cells:
            raise ValueError("a sweep needs at least one cell")

    @property
    def n_runs(self) -> int:
        return len(self.cells) * self.repetitions

    def configs(self, master_seed: int) -> list[tuple[int, int, SimulationConfig]]:
        out = []
        for ci, cell in enumerate(self.cells):
            for rep in range(self.repetitions):
                cfg = SimulationConfig(
                    topology=cell.topology,
                    supervision_rate=cell.supervision_rate,
                    rounds=self.rounds,
                    metric_window=self.metric_window,
                    seed=derive_seed(master_seed, ci, rep),
                )
                out.append((ci, rep, cfg))
        return out


def _tenths(lo: int, hi: int) -> list[float]:
    return [round(k / 10, 1) for k in range(lo, hi + 1)]


def grid(topologies: Iterable[TopologySpec], rates: Iterable[float]) -> list[Cell]:
    rates = list(rates)
    return [Cell(t, s) for t in topologies for s in rates]


def preset(experiment: int | str, scale: str = "full", n_agents: int = 10) -> SweepSpec:
    """Condition grids for the three experiments.

    ``full`` reproduces the published grids; ``desk`` is the reduced grid used
    by the acceptance suite.
    """
    exp = str(experiment)
    if scale not in ("full", "desk"):
        raise ValueError(f"unknown scale {scale!r}")
    full = scale == "full"
    if exp == "1":
        topologies = [
            TopologySpec(Kind.RING, n_agents),
            TopologySpec(Kind.RANDOM, n_agents, 0.2),
            TopologySpec(Kind.SMALL_WORLD, n_agents, 0.2),
            TopologySpec(Kind.CLIQUE, n_agents),
        ]
        rates, reps = (_tenths(0, 9), 10) if full else ([0.0, 0.5], 5)
    elif exp == "2":
        ps = _tenths(2, 9) if full else [0.2, 0.5, 0.9]
        topologies = [TopologySpec(Kind.RANDOM, n_agents, p) for p in ps]
        rates, reps = (_tenths(0, 9), 5) if full else ([0.0, 0.5], 3)
    elif exp == "3":
        ps = _tenths(0, 9) if full else [0.0, 0.4, 0.9]
        topologies = [TopologySpec(Kind.SMALL_WORLD, n_agents, p) for p in ps]
        rates, reps = (_tenths(0, 9), 5) if full else ([0.0, 0.5], 3)
    else:
        raise ValueError(f"unknown experiment {experiment!r}; presets exist for 1, 2 and 3")
    return SweepSpec(exp, grid(topologies, rates), reps, n_agents=n_agents)


@dataclass
class SweepFailure:
    cell: int
    repetition: int
    seed: int
    error: str


@dataclass
class SweepOutcome:
    spec: SweepSpec
    results: list[RunResult]
    failures: list[SweepFailure]

    @property
    def partial(self) -> bool:
        return bool(self.failures) and bool(self.results)


def _run_one(args: tuple[int, int, SimulationConfig, str, str | None]):
    ci, rep, cfg, exp_id, engine = args
    try:
        res = run_simulation(cfg, engine=engine, keep_log=False)
    except Exception as exc:  # recorded, the sweep carries on
        return ci, rep, SweepFailure(ci, rep, cfg.seed, f"{type(exc).__name__}: {exc}")
    res.experiment_id = exp_id
    res.repetition = rep
    return ci, rep, res


def run_sweep(
    spec: SweepSpec,
    master_seed: int = 0,
    parallelism: int = 1,
    engine: str | None = None,
    progress=None,
) -> SweepOutcome:
    """Run every (cell, repetition) of ``spec``; results come back in grid order."""
    tasks = [(ci, rep, cfg, spec.experiment_id, engine) for ci, rep, cfg in spec.configs(master_seed)]
    done = []
    if parallelism <= 1:
        for t in tasks:
            done.append(_run_one(t))
            if progress:
                progress(len(done), len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for item in pool.map(_run_one, tasks):
                done.append(item)
                if progress:
                    progress(len(done), len(tasks))
    done.sort(key=lambda item: (item[0], item[1]))
    results = [r for _, _, r in done if isinstance(r, RunResult)]
    failures = [r for _, _, r in done if isinstance(r, SweepFailure)]
    for f in failures:
        log.error("run cell=%d rep=%d seed=%d failed: %s", f.cell, f.repetition, f.seed, f.error)
    return SweepOutcome(spec, results, failures)


# --------------------------------------------------------------------------- I/O

def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_csv(results: Iterable[RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for res in results:
        row = res.row()
        writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(results: Iterable[RunResult], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(results_csv(results))
    return path


def read_results(path: str | Path) -> list[dict[str, Any]]:
    ints = {"n_global_edges", "repetition", "seed"}
    strs = {"experiment_id", "topology_kind"}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing result columns {sorted(missing)}")
        for raw in reader:
            row: dict[str, Any] = {}
            for key in RESULT_COLUMNS:
                v = raw[key]
                row[key] = v if key in strs else int(v) if key in ints else float(v)
            rows.append(row)
    return rows


def episodes_jsonl(episodes: np.ndarray) -> Iterable[str]:
    for ep in episodes:
        yield json.dumps(
            {
                "round": int(ep["round"]),
                "speaker": int(ep["speaker"]),
                "listener": int(ep["listener"]),
                "message": int(ep["message"]),
                "received": int(ep["received"]),
                "speaker_action": int(ep["speaker_action"]),
                "listener_action": int(ep["listener_action"]),
                "coordinated": bool(ep["speaker_action"] == ep["listener_action"]),
                "speaker_reward": float(ep["speaker_reward"]),
                "listener_reward": float(ep["listener_reward"]),
                "speaker_supervised": bool(ep["speaker_supervised"]),
                "listener_supervised": bool(ep["listener_supervised"]),
            },
            separators=(",", ":"),
        )


def write_episodes(episodes: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for line in episodes_jsonl(episodes):
            fh.write(line + "\n")
    return path


def read_episodes(path: str | Path) -> np.ndarray:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
    out = np.zeros(len(rows), dtype=EPISODE_DTYPE)
    for i, row in enumerate(rows):
        for name in EPISODE_DTYPE.names:
            out[i][name] = row[name]
    return out
