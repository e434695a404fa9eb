"""Recurrent agent: perception, word embedding, memory, action, prediction.

One episode is a rollout of the recurrent core over observations, ending
in a Stop action (or the forced cap) and an existence prediction.  The
prediction head trains all upstream modules supervised; the action head
trains by policy gradient against a learned per-step baseline, and
neither policy nor baseline gradients flow back into the shared memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import MAX_STEPS, Outcome, TabletopEnv, observation_dim
from .geometry import Action
from .scenegen import Sample
from . import nn

ACTIONS = list(Action)


@dataclass(frozen=True)
class ModelConfig:
    """Submodule widths; desk defaults are a quarter of paper scale."""

    vocab: int = 21
    d_v: int = 64
    d_w: int = 10
    d_m: int = 64
    action_hidden: int = 128

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.vocab)

    @classmethod
    def desk(cls, vocab: int = 21) -> "ModelConfig":
        return cls(vocab=vocab)

    @classmethod
    def paper_scale(cls, vocab: int = 21) -> "ModelConfig":
        return cls(vocab=vocab, d_v=256, d_m=256)

    def to_text(self) -> str:
        return "".join(
            f"{k} = {getattr(self, k)}\n"
            for k in ("vocab", "d_v", "d_w", "d_m", "action_hidden")
        )

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        fields = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = int(value.strip())
        return cls(**fields)


# parameter-name prefixes of the five modules plus the baseline head
MODULES = ("vision", "embed", "memory", "action", "predict", "baseline")
SUPERVISED_MODULES = ("vision", "embed", "memory", "predict")


@dataclass
class StepRecord:
    obs: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    pre2: np.ndarray
    v: np.ndarray
    c: np.ndarray
    m_prev: np.ndarray
    pre_m: np.ndarray
    m: np.ndarray
    baseline: float
    action: Action
    log_prob: float
    # action-head caches; None when the action was forced or scripted
    a_pre1: np.ndarray | None = None
    a_h1: np.ndarray | None = None
    probs: np.ndarray | None = None


@dataclass
class Trajectory:
    query_index: int
    label: bool
    steps: list[StepRecord] = field(default_factory=list)
    pred_logits: np.ndarray | None = None
    y_hat: float = 0.0
    outcome: Outcome | None = None
    returns: list[float] = field(default_factory=list)

    @property
    def log_probs(self) -> list[float]:
        return [s.log_prob for s in self.steps]

    @property
    def baselines(self) -> list[float]:
        return [s.baseline for s in self.steps]

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]


@dataclass
class LossBreakdown:
    total: float
    prediction: float
    policy: float
    baseline: float


class AgentModel:
    """Parameter container plus forward/backward passes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        p = nn.Parameters()
        p.add("vision.W1", nn.affine_init(rng, config.d_v, config.obs_dim))
        p.add("vision.b1", np.zeros(config.d_v))
        p.add("vision.W2", nn.affine_init(rng, config.d_v, config.d_v))
        p.add("vision.b2", np.zeros(config.d_v))
        p.add("embed.table", rng.uniform(-0.1, 0.1, size=(config.vocab, config.d_w)))
        d_c = config.d_v + config.d_w
        p.add("memory.Wm", nn.affine_init(rng, config.d_m, config.d_m))
        p.add("memory.Wc", nn.affine_init(rng, config.d_m, d_c))
        p.add("memory.b", np.zeros(config.d_m))
        p.add("action.W1", nn.affine_init(rng, config.action_hidden, config.d_m))
        p.add("action.b1", np.zeros(config.action_hidden))
        p.add("action.W2", nn.affine_init(rng, 3, config.action_hidden))
        p.add("action.b2", np.zeros(3))
        p.add("predict.W", nn.affine_init(rng, 2, config.d_m))
        p.add("predict.b", np.zeros(2))
        p.add("baseline.W", nn.affine_init(rng, 1, config.d_m))
        p.add("baseline.b", np.zeros(1))
        self.params = p.build()

    # -- forward pieces ------------------------------------------------------

    def perceive(self, obs: np.ndarray):
        p = self.params
        pre1 = nn.affine_forward(p.value("vision.W1"), p.value("vision.b1"), obs)
        h1 = nn.relu_forward(pre1)
        pre2 = nn.affine_forward(p.value("vision.W2"), p.value("vision.b2"), h1)
        return nn.relu_forward(pre2), pre1, h1, pre2

    def word_vector(self, query_index: int) -> np.ndarray:
        return self.params.value("embed.table")[query_index]

    def memory_step(self, m_prev: np.ndarray, c: np.ndarray):
        p = self.params
        return nn.recurrent_cell_forward(
            p.value("memory.Wm"), p.value("memory.Wc"), p.value("memory.b"), m_prev, c
        )

    def action_logits(self, m: np.ndarray):
        p = self.params
        a_pre1 = nn.affine_forward(p.value("action.W1"), p.value("action.b1"), m)
        a_h1 = nn.relu_forward(a_pre1)
        logits = nn.affine_forward(p.value("action.W2"), p.value("action.b2"), a_h1)
        return logits, a_pre1, a_h1

    def prediction_logits(self, m: np.ndarray) -> np.ndarray:
        p = self.params
        return nn.affine_forward(p.value("predict.W"), p.value("predict.b"), m)

    def baseline_value(self, m: np.ndarray) -> float:
        p = self.params
        return float(p.value("baseline.W")[0] @ m + p.value("baseline.b")[0])

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        nn.save_checkpoint(self.params, path)
        Path(str(path) + ".cfg").write_text(self.config.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AgentModel":
        config = ModelConfig.from_text(Path(str(path) + ".cfg").read_text(encoding="utf-8"))
        model = cls(config)
        nn.load_checkpoint(model.params, path)
        return model


def rollout(
    model: AgentModel,
    env: TabletopEnv,
    sample: Sample,
    rng: np.random.Generator | None = None,
    mode: str = "sample",
    action_source=None,
) -> Trajectory:
    """Run one episode; records everything the losses need.

    mode "sample" draws actions from the policy, "greedy" takes the
    argmax.  `action_source(t) -> Action` overrides the policy entirely
    (scripted baselines); the prediction head still runs at the end.
    A stop forced by the step cap is not a decision: it carries log-prob
    0 and contributes no policy-gradient term.
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown rollout mode: {mode!r}")
    query_index = env.catalog.index(sample.query)
    traj = Trajectory(query_index=query_index, label=sample.label)
    w = model.word_vector(query_index)
    m_prev = np.zeros(model.config.d_m)
    obs = env.reset(sample)

    while True:
        v, pre1, h1, pre2 = model.perceive(obs)
        c = np.concatenate([v, w])
        m, pre_m = model.memory_step(m_prev, c)
        b_t = model.baseline_value(m)
        record = StepRecord(
            obs=obs, pre1=pre1, h1=h1, pre2=pre2, v=v, c=c,
            m_prev=m_prev, pre_m=pre_m, m=m, baseline=b_t,
            action=Action.STOP, log_prob=0.0,
        )

        forced = env.t >= env.max_steps
        if forced:
            action = Action.STOP
        elif action_source is not None:
            action = action_source(env.t)
            record.action = action
        else:
            logits, a_pre1, a_h1 = model.action_logits(m)
            if mode == "sample":
                idx, log_prob, probs = nn.softmax_categorical(logits, rng)
            else:
                probs = nn.softmax(logits)
                idx = int(probs.argmax())
                log_prob = float(np.log(probs[idx]))
            action = ACTIONS[idx]
            record.action = action
            record.log_prob = log_prob
            record.a_pre1 = a_pre1
            record.a_h1 = a_h1
            record.probs = probs

        traj.steps.append(record)
        if action is Action.STOP:
            logits2 = model.prediction_logits(m)
            traj.pred_logits = logits2
            traj.y_hat = float(nn.softmax(logits2)[1])
            prediction = bool(logits2[1] > logits2[0])
            if not env.done:
                env.step(Action.STOP)
            traj.outcome = env.finish(prediction)
            traj.returns = [traj.outcome.total_reward] * len(traj.steps)
            return traj

        obs, _ = env.step(action)
        m_prev = m


def total_loss(model: AgentModel, traj: Trajectory, alpha: float, beta: float) -> LossBreakdown:
    """Joint loss; accumulates d(L_p + a L_a + b L_b)/dtheta into grads.

    Supervised gradients flow from the prediction head through memory,
    perception and the queried embedding row; policy and baseline
    gradients stop at their own heads.
    """
    p = model.params
    d_v = model.config.d_v
    y = int(traj.label)
    returns = traj.returns

    l_p, dlogits2, _ = nn.prediction_loss(traj.pred_logits, y)
    last = traj.steps[-1]
    p.grad("predict.W")[...] += np.outer(dlogits2, last.m)
    p.grad("predict.b")[...] += dlogits2
    dm = p.value("predict.W").T @ dlogits2

    l_a = nn.reinforce_loss(traj.log_probs, returns, traj.baselines)
    if alpha != 0.0:
        for rec, ret in zip(traj.steps, returns):
            if rec.probs is None:
                continue  # forced or scripted step: no policy decision
            adv = ret - rec.baseline
            dlogits3 = alpha * nn.reinforce_dlogits(rec.probs, ACTIONS.index(rec.action), adv)
            dW2, db2, dh = nn.affine_backward(dlogits3, p.value("action.W2"), rec.a_h1)
            p.grad("action.W2")[...] += dW2
            p.grad("action.b2")[...] += db2
            dpre = nn.relu_backward(dh, rec.a_pre1)
            dW1, db1, _ = nn.affine_backward(dpre, p.value("action.W1"), rec.m)
            p.grad("action.W1")[...] += dW1
            p.grad("action.b1")[...] += db1

    l_b, dbase = nn.baseline_loss(returns, traj.baselines)
    if beta != 0.0:
        bW = p.grad("baseline.W")
        bb = p.grad("baseline.b")
        for rec, db in zip(traj.steps, dbase):
            bW[...] += beta * db * rec.m[None, :]
            bb[...] += beta * db

    # supervised path: backpropagate through time from the terminal memory
    W_m = p.value("memory.Wm")
    W_c = p.value("memory.Wc")
    W2 = p.value("vision.W2")
    W1 = p.value("vision.W1")
    dw_total = np.zeros(model.config.d_w)
    for rec in reversed(traj.steps):
        dWm, dWc, db_m, dm_prev, dc = nn.recurrent_cell_backward(
            dm, rec.pre_m, W_m, W_c, rec.m_prev, rec.c
        )
        p.grad("memory.Wm")[...] += dWm
        p.grad("memory.Wc")[...] += dWc
        p.grad("memory.b")[...] += db_m
        dw_total += dc[d_v:]
        dpre2 = nn.relu_backward(dc[:d_v], rec.pre2)
        dW2, db2, dh1 = nn.affine_backward(dpre2, W2, rec.h1)
        p.grad("vision.W2")[...] += dW2
        p.grad("vision.b2")[...] += db2
        dpre1 = nn.relu_backward(dh1, rec.pre1)
        dW1, db1, _ = nn.affine_backward(dpre1, W1, rec.obs)
        p.grad("vision.W1")[...] += dW1
        p.grad("vision.b1")[...] += db1
        dm = dm_prev
    p.grad("embed.table")[traj.query_index] += dw_total

    return LossBreakdown(l_p + alpha * l_a + beta * l_b, l_p, l_a, l_b)


def train_step(
    model: AgentModel,
    env: TabletopEnv,
    sample: Sample,
    rng: np.random.Generator,
    alpha: float,
    beta: float,
    lr: float,
) -> tuple[Trajectory, LossBreakdown]:
    traj = rollout(model, env, sample, rng, mode="sample")
    losses = total_loss(model, traj, alpha, beta)
    nn.adam_step(model.params, lr)
    return traj, losses


def predict_from_history(model: AgentModel, history: list[np.ndarray], query_index: int) -> bool:
    """Prediction-head output after replaying observations through memory.

    Used by scripted baselines, which share the trained architecture but
    not its action selection.
    """
    w = model.word_vector(query_index)
    m = np.zeros(model.config.d_m)
    for obs in history:
        v, *_ = model.perceive(obs)
        m, _ = model.memory_step(m, np.concatenate([v, w]))
    logits = model.prediction_logits(m)
    return bool(logits[1] > logits[0])
