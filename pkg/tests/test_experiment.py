import json
from collections import Counter

import numpy as np
import pytest

from netcomm import experiment
from netcomm.agent import REINFORCEMENT, SUPERVISING
from netcomm.experiment import (
    ConfigError,
    SimulationConfig,
    SweepSpec,
    preset,
    read_episodes,
    read_results,
    run_simulation,
    run_sweep,
    write_episodes,
    write_results,
)
from netcomm.rng import derive_seed
from netcomm.topology import Kind, TopologySpec


@pytest.fixture(scope="module")
def clique_run():
    cfg = SimulationConfig(TopologySpec(Kind.CLIQUE), 0.9, seed=2024)
    return run_simulation(cfg)


@pytest.fixture(scope="module")
def ablated_clique_run():
    cfg = SimulationConfig(TopologySpec(Kind.CLIQUE), 0.9, seed=2024, ablate_channel=True)
    return run_simulation(cfg)


# ---------------------------------------------------------------- configuration

def test_defaults():
    cfg = SimulationConfig()
    assert cfg.rounds == 120_000 and cfg.metric_window == 10_000 and cfg.topology.n_agents == 10


def test_zero_rounds_rejected():
    with pytest.raises(ConfigError, match="window is empty"):
        SimulationConfig(rounds=0)


def test_window_longer_than_run_rejected():
    with pytest.raises(ConfigError) as err:
        SimulationConfig(rounds=100, metric_window=500)
    assert err.value.field == "metric_window"


@pytest.mark.parametrize(
    "data, field",
    [
        ({"rounds": "many"}, "rounds"),
        ({"supervision_rate": 1.5}, "supervision_rate"),
        ({"agent": {"batch_size": 0}}, "agent.batch_size"),
        ({"agent": {"learning_rate": "fast"}}, "agent.learning_rate"),
        ({"agent": {"momentum": 0.9}}, "agent.momentum"),
        ({"topology": {"kind": "ring", "degree": 3}}, "topology.degree"),
        ({"topology": {"kind": "hypercube"}}, "topology"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_malformed_field_named(data, field):
    with pytest.raises(ConfigError) as err:
        SimulationConfig.from_dict(data)
    assert err.value.field == field
    assert field in str(err.value)


def test_config_json_roundtrip(tmp_path):
    cfg = SimulationConfig(TopologySpec(Kind.SMALL_WORLD, 12, 0.4), 0.3, rounds=5000, metric_window=1000, seed=9)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert SimulationConfig.load(path) == cfg


# ---------------------------------------------------------------- presets and seeds

def test_experiment1_full_grid():
    spec = preset(1, "full")
    assert spec.n_runs == 4 * 10 * 10 == 400
    kinds = Counter(c.topology.kind for c in spec.cells)
    assert kinds == {Kind.RING: 10, Kind.RANDOM: 10, Kind.SMALL_WORLD: 10, Kind.CLIQUE: 10}


def test_experiment2_full_grid():
    spec = preset(2, "full")
    cells = {(c.topology.param, c.supervision_rate) for c in spec.cells}
    assert len(cells) == len(spec.cells) == 80
    assert spec.n_runs == 400
    assert sorted({p for p, _ in cells}) == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def test_experiment3_full_grid():
    spec = preset(3, "full")
    assert len(spec.cells) == 100 and spec.n_runs == 500
    assert all(c.topology.kind is Kind.SMALL_WORLD for c in spec.cells)


def test_desk_grids():
    assert preset(1, "desk").n_runs == 4 * 2 * 5
    assert preset(2, "desk").n_runs == 3 * 2 * 3
    assert preset(3, "desk").n_runs == 3 * 2 * 3
    with pytest.raises(ValueError):
        preset(4)


def test_sweep_seeds_derived_from_grid_position():
    spec = preset(3, "desk")
    configs = spec.configs(77)
    assert [cfg.seed for _, _, cfg in configs] == [derive_seed(77, ci, rep) for ci, rep, _ in configs]
    assert len({cfg.seed for _, _, cfg in configs}) == len(configs)


def small_spec():
    return SweepSpec("custom", preset(1, "desk").cells[::2], repetitions=2, rounds=400, metric_window=200)


def test_sweep_invariant_to_parallelism():
    serial = run_sweep(small_spec(), master_seed=11, parallelism=1)
    pooled = run_sweep(small_spec(), master_seed=11, parallelism=3)
    assert not serial.failures and not pooled.failures
    assert experiment.results_csv(serial.results) == experiment.results_csv(pooled.results)


def test_sweep_records_failures(monkeypatch):
    real = experiment.run_simulation
    bad_seed = small_spec().configs(5)[1][2].seed

    def flaky(cfg, **kw):
        if cfg.seed == bad_seed:
            raise FloatingPointError("non-finite gradient")
        return real(cfg, **kw)

    monkeypatch.setattr(experiment, "run_simulation", flaky)
    out = run_sweep(small_spec(), master_seed=5)
    assert len(out.failures) == 1 and out.partial
    assert out.failures[0].seed == bad_seed and "non-finite" in out.failures[0].error
    assert len(out.results) == small_spec().n_runs - 1


# ---------------------------------------------------------------- run-level properties

def test_pairs_are_adjacent(clique_run):
    for kind, param in ((Kind.RING, None), (Kind.SMALL_WORLD, 0.3), (Kind.RANDOM, 0.3)):
        res = run_simulation(SimulationConfig(TopologySpec(kind, 10, param), 0.5, rounds=3000, metric_window=1000, seed=4))
        edges = res.network.edges
        pairs = zip(res.episodes["speaker"], res.episodes["listener"])
        assert all((min(a, b), max(a, b)) in edges for a, b in pairs)


def test_role_split_is_fair(clique_run):
    ep = clique_run.episodes
    for agent in range(10):
        spoke = np.sum(ep["speaker"] == agent)
        listened = np.sum(ep["listener"] == agent)
        assert abs(spoke / (spoke + listened) - 0.5) <= 0.01


def test_supervision_only_on_miscoordination(clique_run):
    ep = clique_run.episodes
    miss = ep["speaker_action"] != ep["listener_action"]
    sup = np.concatenate([ep["speaker_supervised"], ep["listener_supervised"]])
    assert set(np.unique(sup)) <= {REINFORCEMENT, SUPERVISING}
    assert not ep["speaker_supervised"][~miss].any() and not ep["listener_supervised"][~miss].any()
    frac = np.concatenate([ep["speaker_supervised"][miss], ep["listener_supervised"][miss]]).mean()
    assert abs(frac - 0.9) < 0.01


def test_reward_above_ablated_channel(clique_run, ablated_clique_run):
    reward, ablated = clique_run.report.avg_reward, ablated_clique_run.report.avg_reward
    assert reward > ablated and reward > 0.25, f"avg_reward {reward:.4f}, ablated channel {ablated:.4f}"


def test_same_seed_identical_output(tmp_path):
    cfg = SimulationConfig(TopologySpec(Kind.SMALL_WORLD, 10, 0.2), 0.2, rounds=2000, metric_window=500, seed=31)
    for name in ("a", "b"):
        res = run_simulation(cfg)
        write_results([res], tmp_path / name / "results.csv")
        write_episodes(res.episodes, tmp_path / name / "episodes.jsonl")
    for f in ("results.csv", "episodes.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_results_and_episodes_roundtrip(tmp_path):
    cfg = SimulationConfig(TopologySpec(Kind.RING), 0.4, rounds=800, metric_window=300, seed=3, series_every=200)
    res = run_simulation(cfg)
    assert [row["round"] for row in res.series] == [200, 400, 600, 800]
    rows = read_results(write_results([res], tmp_path / "r.csv"))
    assert rows == [res.row()]
    back = read_episodes(write_episodes(res.episodes, tmp_path / "e.jsonl"))
    np.testing.assert_array_equal(back, res.episodes)
    first = json.loads((tmp_path / "e.jsonl").read_text().splitlines()[0])
    assert first["coordinated"] == (first["speaker_action"] == first["listener_action"])


def test_read_results_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("experiment_id,seed\n1,2\n")
    with pytest.raises(ValueError, match="missing result columns"):
        read_results(path)
