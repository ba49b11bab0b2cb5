import numpy as np
import pytest

from netcomm import neuralnet as nn
from netcomm.agent import AgentConfig, AgentState
from netcomm.game import ActionHistory, GameConfig, diversity_penalty, episode_reward, play_round
from netcomm.rng import Stream


@pytest.mark.parametrize("p, expected", [(0.25, 0.0), (0.5, -0.25), (0.1, 0.0), (1.0, -0.75), (0.0, 0.0)])
def test_diversity_penalty(p, expected):
    assert diversity_penalty(p) == pytest.approx(expected, abs=1e-12)


def test_penalty_rejects_bad_proportions():
    with pytest.raises(ValueError):
        diversity_penalty(1.5)


def test_game_config_invariants():
    cfg = GameConfig()
    assert (cfg.n_actions, cfg.n_messages, cfg.history_length, cfg.coordination_reward) == (4, 4, 100, 1.0)
    with pytest.raises(ValueError):
        GameConfig(n_actions=5)
    with pytest.raises(ValueError):
        GameConfig(coordination_reward=0.0)


def test_history_window_and_proportions():
    h = ActionHistory(100)
    assert h.proportions().tolist() == [0.25] * 4
    rng = np.random.default_rng(0)
    for a in rng.integers(0, 4, size=350):
        h.push(int(a))
        assert len(h) <= 100
        assert abs(h.proportions().sum() - 1) < 1e-12
    window = h.window()
    assert len(window) == 100
    assert np.array_equal(np.bincount(window, minlength=4), h.counts)


def scripted_agent(agent_id, action, message=0, rc=1.0):
    """Agent whose greedy action and message are fixed by output biases."""
    net = nn.zeros(9)
    net.ba[action] = 1.0
    net.bm[message] = 1.0
    agent = AgentState.create(agent_id, Stream(agent_id), Stream(100 + agent_id), Stream(200 + agent_id),
                              AgentConfig(), GameConfig(coordination_reward=rc))
    agent.net = net
    agent.epsilon = 0.0
    return agent


def test_equal_actions_fresh_history():
    s, l = scripted_agent(0, 2), scripted_agent(1, 2)
    out = play_round(s, l, GameConfig(), round=0)
    assert out.coordinated
    assert out.speaker_reward == 1.0 and out.listener_reward == 1.0


def test_unequal_actions_fresh_history():
    out = play_round(scripted_agent(0, 1), scripted_agent(1, 3), GameConfig(), round=0)
    assert not out.coordinated
    assert out.speaker_reward == 0.0 and out.listener_reward == 0.0


def test_repeated_action_penalised():
    speaker, listener = scripted_agent(0, 2), scripted_agent(1, 2)
    for _ in range(100):
        speaker.history.push(2)
    # oracle: scripted history gives p_hat(2) = 100/100
    p_hat = speaker.history.window().count(2) / len(speaker.history.window())
    out = play_round(speaker, listener, GameConfig(), round=5)
    assert out.speaker_reward == pytest.approx(1.0 + (0.25 - p_hat)) == pytest.approx(0.25)
    assert out.listener_reward == 1.0


def test_penalty_uses_pre_update_history():
    speaker, listener = scripted_agent(0, 0), scripted_agent(1, 0)
    for a in (1, 2, 3):
        speaker.history.push(a)
    out = play_round(speaker, listener, GameConfig(), round=0)
    # p_hat(0) before the round is 0, so no penalty
    assert out.speaker_reward == 1.0
    assert speaker.history.window() == [1, 2, 3, 0]


def test_inputs_and_message_flow():
    speaker, listener = scripted_agent(0, 1, message=3), scripted_agent(1, 1)
    out = play_round(speaker, listener, GameConfig(), round=0)
    assert out.message == out.received == 3
    assert out.speaker_input[0] == 1.0 and np.all((0 <= out.speaker_input[1:5]) & (out.speaker_input[1:5] < 1))
    assert out.listener_input.tolist() == [0, 0, 0, 0, 1, 0.25, 0.25, 0.25, 0.25]


def test_self_play_rejected():
    a = scripted_agent(0, 1)
    with pytest.raises(ValueError):
        play_round(a, a, GameConfig(), round=0)


def test_reward_bounds():
    cfg = GameConfig()
    for coordinated in (True, False):
        for p in np.linspace(0, 1, 21):
            assert -0.75 <= episode_reward(coordinated, p, cfg) <= cfg.coordination_reward


def test_ablated_channel_draws_received_message():
    speaker, listener = scripted_agent(0, 1, message=3), scripted_agent(1, 1)
    channel = Stream(4)
    got = [play_round(speaker, listener, GameConfig(), round=i, channel=channel).received for i in range(400)]
    assert set(got) == {0, 1, 2, 3}
