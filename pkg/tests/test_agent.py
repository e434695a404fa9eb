import numpy as np
import pytest

from roep import nn
from roep.agent import (
    AgentModel,
    ModelConfig,
    predict_from_history,
    rollout,
    total_loss,
    train_step,
)
from roep.env import TabletopEnv
from roep.geometry import Action
from roep.scenegen import DataLevel
from roep.seeding import stream

SMALL = ModelConfig(vocab=21, d_v=10, d_w=4, d_m=12, action_hidden=8)


@pytest.fixture()
def model():
    return AgentModel(SMALL, stream(42, "init"))


@pytest.fixture()
def env(catalog):
    return TabletopEnv(catalog)


def sample_for(generator, level, seed):
    return generator.sample(level, np.random.default_rng(seed))


def test_model_config_round_trip():
    cfg = ModelConfig(vocab=21, d_v=64, d_w=10, d_m=64, action_hidden=128)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    assert cfg.obs_dim == 47
    assert ModelConfig.paper_scale().d_m == 256


def test_parameter_partition_names(model):
    prefixes = {name.split(".")[0] for name in model.params.names()}
    assert prefixes == {"vision", "embed", "memory", "action", "predict", "baseline"}


def test_forced_stop_rollout(model, env, generator):
    model.params.value("action.b2")[...] = [0.0, 0.0, 50.0]  # stop wins
    traj = rollout(model, env, sample_for(generator, DataLevel.L1_1VIS, 1), np.random.default_rng(0))
    assert traj.outcome.steps == 0
    assert len(traj.steps) == 1
    assert traj.steps[0].action is Action.STOP


def test_forced_cap_rollout(model, env, generator):
    model.params.value("action.b2")[...] = [50.0, 0.0, 0.0]  # always circle left
    traj = rollout(model, env, sample_for(generator, DataLevel.L1_1VIS, 1), np.random.default_rng(0))
    assert traj.outcome.steps == 6
    assert len(traj.steps) == 7
    last = traj.steps[-1]
    assert last.action is Action.STOP and last.log_prob == 0.0 and last.probs is None
    assert all(s.action is Action.CIRCLE_LEFT for s in traj.steps[:-1])


def test_rollout_determinism(model, env, generator):
    s = sample_for(generator, DataLevel.L3_2OCC, 5)
    t1 = rollout(model, env, s, np.random.default_rng(7), mode="sample")
    t2 = rollout(model, env, s, np.random.default_rng(7), mode="sample")
    assert [a.name for a in t1.actions] == [a.name for a in t2.actions]
    assert t1.log_probs == t2.log_probs
    assert t1.outcome == t2.outcome


def test_greedy_rollout_is_deterministic_function_of_params(model, env, generator):
    s = sample_for(generator, DataLevel.L2_2VIS, 9)
    t1 = rollout(model, env, s, mode="greedy")
    t2 = rollout(model, env, s, mode="greedy")
    assert [a.name for a in t1.actions] == [a.name for a in t2.actions]
    assert t1.outcome == t2.outcome


def test_returns_are_constant_full_episode_return(model, env, generator):
    s = sample_for(generator, DataLevel.L2_2VIS, 11)
    traj = rollout(model, env, s, np.random.default_rng(3))
    assert traj.returns == [traj.outcome.total_reward] * len(traj.steps)


def test_total_loss_matches_independent_recomputation(model, env, generator):
    s = sample_for(generator, DataLevel.L3_2OCC, 13)
    traj = rollout(model, env, s, np.random.default_rng(5))
    losses = total_loss(model, traj, alpha=0.3, beta=1.7)
    l_p = nn.prediction_loss(traj.pred_logits, int(traj.label))[0]
    l_a = nn.reinforce_loss(traj.log_probs, traj.returns, traj.baselines)
    l_b = nn.baseline_loss(traj.returns, traj.baselines)[0]
    assert losses.prediction == l_p
    assert losses.policy == l_a
    assert losses.baseline == l_b
    assert losses.total == l_p + 0.3 * l_a + 1.7 * l_b


def test_gradient_routing_blocks_memory_from_policy_and_baseline(model, env, generator):
    s = sample_for(generator, DataLevel.L3_2OCC, 13)
    traj = rollout(model, env, s, np.random.default_rng(5))

    def grads(alpha, beta):
        model.params.zero_grads()
        total_loss(model, traj, alpha, beta)
        g = model.params.grads.copy()
        model.params.zero_grads()
        return g

    g_sup = grads(0.0, 0.0)
    g_joint = grads(0.7, 1.3)
    for name in model.params.names():
        lo, hi, _ = model.params._layout[name]
        module = name.split(".")[0]
        if module in ("vision", "embed", "memory", "predict"):
            assert np.array_equal(g_sup[lo:hi], g_joint[lo:hi]), name
        else:
            assert not np.array_equal(g_sup[lo:hi], g_joint[lo:hi]), name
    # supervised-only: policy and value heads receive exactly zero
    for name in ("action.W1", "action.b1", "action.W2", "action.b2", "baseline.W", "baseline.b"):
        lo, hi, _ = model.params._layout[name]
        assert np.all(g_sup[lo:hi] == 0.0), name


def test_perfect_baseline_zeroes_action_gradients(model, env, generator):
    s = sample_for(generator, DataLevel.L3_2OCC, 17)
    traj = rollout(model, env, s, np.random.default_rng(5))
    for rec, ret in zip(traj.steps, traj.returns):
        rec.baseline = ret
    model.params.zero_grads()
    total_loss(model, traj, alpha=1.0, beta=0.0)
    for name in ("action.W1", "action.b1", "action.W2", "action.b2"):
        assert np.all(model.params.grad(name) == 0.0), name
    model.params.zero_grads()


def test_embedding_gradient_hits_only_query_row(model, env, generator):
    s = sample_for(generator, DataLevel.L2_2VIS, 19)
    traj = rollout(model, env, s, np.random.default_rng(5))
    model.params.zero_grads()
    total_loss(model, traj, alpha=1.0, beta=1.0)
    table_grad = model.params.grad("embed.table")
    nonzero_rows = {int(i) for i in np.nonzero(np.abs(table_grad).sum(axis=1))[0]}
    assert nonzero_rows == {traj.query_index}
    model.params.zero_grads()


def test_train_step_applies_update(model, env, generator):
    s = sample_for(generator, DataLevel.L1_1VIS, 23)
    before = model.params.copy_values()
    traj, losses = train_step(model, env, s, np.random.default_rng(1), 1e-2, 1.0, 1e-3)
    assert np.isfinite(losses.total)
    assert not np.array_equal(before, model.params.values)
    assert np.all(model.params.grads == 0.0)


def test_alpha_beta_zero_matches_supervised_only_update(env, generator):
    s = sample_for(generator, DataLevel.L2_2VIS, 29)
    m1 = AgentModel(SMALL, stream(42, "init"))
    m2 = AgentModel(SMALL, stream(42, "init"))
    # same episode, same policy randomness
    t1 = rollout(m1, env, s, np.random.default_rng(5))
    total_loss(m1, t1, alpha=1e-9, beta=1e-9)
    g_tiny = m1.params.grads.copy()
    t2 = rollout(m2, env, s, np.random.default_rng(5))
    total_loss(m2, t2, alpha=0.0, beta=0.0)
    g_zero = m2.params.grads.copy()
    for name in m2.params.names():
        lo, hi, _ = m2.params._layout[name]
        if name.split(".")[0] in ("vision", "embed", "memory", "predict"):
            assert np.array_equal(g_tiny[lo:hi], g_zero[lo:hi]), name


def test_save_load_round_trip_preserves_behavior(model, env, generator, tmp_path):
    s = sample_for(generator, DataLevel.L3_2OCC, 31)
    before = rollout(model, env, s, mode="greedy")
    path = tmp_path / "agent.ckpt"
    model.save(path)
    clone = AgentModel.load(path)
    assert np.array_equal(model.params.values, clone.params.values)
    after = rollout(clone, env, s, mode="greedy")
    assert [a.name for a in before.actions] == [a.name for a in after.actions]
    assert before.outcome == after.outcome


def test_predict_from_history_matches_stopped_rollout(model, env, generator):
    s = sample_for(generator, DataLevel.L1_1VIS, 37)
    model.params.value("action.b2")[...] = [0.0, 0.0, 50.0]
    traj = rollout(model, env, s, np.random.default_rng(0))
    assert traj.outcome.steps == 0
    obs0 = traj.steps[0].obs
    assert predict_from_history(model, [obs0], traj.query_index) == traj.outcome.prediction


def test_scripted_action_source_rollout(model, env, generator):
    s = sample_for(generator, DataLevel.L2_2VIS, 41)
    script = [Action.CIRCLE_RIGHT, Action.CIRCLE_RIGHT, Action.STOP]
    traj = rollout(model, env, s, action_source=lambda t: script[t] if t < len(script) else Action.STOP)
    # scripted steps contribute no policy-gradient terms
    assert traj.outcome.steps == 2
    assert all(s.probs is None for s in traj.steps)
    assert all(lp == 0.0 for lp in traj.log_probs)
