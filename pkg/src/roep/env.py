"""Episodic POMDP wrapper around a generated scene.

The agent starts at viewpoint 0 and may circle the table up to 6 steps
(30 degrees each) before predicting whether the queried object exists.
Observations are symbolic: up to two visible-object slots (identity
one-hot, apparent height, bearing) plus a visible-count element.  The
only nonzero reward arrives at termination: +-1 for the prediction plus
a 1/(T+2) latency bonus.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .catalog import Catalog
from .geometry import (
    DEFAULT_RING,
    DEFAULT_TABLE,
    Action,
    RingParams,
    SizeCategory,
    TableParams,
    Viewpoint,
    visible_set,
)
from .scenegen import Sample

MAX_STEPS = 6
SLOT_COUNT = 2


def observation_dim(vocab: int) -> int:
    return SLOT_COUNT * (vocab + 2) + 1


def encode_observation(visible, catalog: Catalog) -> np.ndarray:
    """Fixed-length encoding of a visible_set result (slots by bearing)."""
    vocab = len(catalog)
    slot = vocab + 2
    obs = np.zeros(observation_dim(vocab))
    for i, v in enumerate(visible[:SLOT_COUNT]):
        base = i * slot
        obs[base + catalog.index(v.obj.spec.name)] = 1.0
        obs[base + vocab] = v.apparent_height
        obs[base + vocab + 1] = v.bearing
    obs[-1] = min(len(visible), SLOT_COUNT) / 2.0
    return obs


def decode_observation(obs: np.ndarray, catalog: Catalog) -> list[str]:
    """Names of the objects present in the observation's slots."""
    vocab = len(catalog)
    slot = vocab + 2
    names = []
    for i in range(SLOT_COUNT):
        onehot = obs[i * slot : i * slot + vocab]
        if onehot.sum() > 0.5:
            names.append(catalog.names()[int(onehot.argmax())])
    return names


def reward(correct: bool, steps: int) -> float:
    """Terminal reward: accuracy part +-1 plus latency bonus 1/(T+2)."""
    if not 0 <= steps <= MAX_STEPS:
        raise ValueError(f"step count {steps} outside [0, {MAX_STEPS}]")
    return (1.0 if correct else -1.0) + 1.0 / (steps + 2)


@dataclass(frozen=True)
class Outcome:
    prediction: bool
    correct: bool
    steps: int
    total_reward: float


class TabletopEnv:
    """Single-episode state machine; one instance per worker."""

    def __init__(
        self,
        catalog: Catalog,
        table: TableParams = DEFAULT_TABLE,
        ring: RingParams = DEFAULT_RING,
        max_steps: int = MAX_STEPS,
    ):
        self.catalog = catalog
        self.table = table
        self.ring = ring
        self.max_steps = max_steps
        self.sample: Sample | None = None
        self.viewpoint = Viewpoint(0)
        self.t = 0
        self.done = False
        self._obs_cache: dict[int, np.ndarray] = {}

    def _observe(self) -> np.ndarray:
        idx = self.viewpoint.index
        cached = self._obs_cache.get(idx)
        if cached is None:
            vis = visible_set(self.viewpoint, list(self.sample.scene), self.ring, self.table)
            cached = encode_observation(vis, self.catalog)
            self._obs_cache[idx] = cached
        return cached

    def reset(self, sample: Sample) -> np.ndarray:
        self.sample = sample
        self.viewpoint = Viewpoint(0)
        self.t = 0
        self.done = False
        self._obs_cache = {}
        return self._observe()

    def step(self, action: Action) -> tuple[np.ndarray, bool]:
        """Apply an action; returns (observation, done).

        Stop terminates immediately without moving; a sixth movement
        terminates after moving (the forced-prediction cap).  Non-terminal
        rewards are zero by construction.
        """
        if self.sample is None:
            raise RuntimeError("reset() must be called first")
        if self.done:
            raise RuntimeError("episode is finished; reset() to start another")
        if action is Action.STOP:
            self.done = True
            return self._observe(), True
        self.viewpoint = self.viewpoint.moved(action)
        self.t += 1
        if self.t >= self.max_steps:
            self.done = True
        return self._observe(), self.done

    def finish(self, prediction: bool) -> Outcome:
        if not self.done:
            raise RuntimeError("episode is still running")
        correct = prediction == self.sample.label
        return Outcome(prediction, correct, self.t, reward(correct, self.t))


# ---------------------------------------------------------------------------
# Reference policies

class OraclePolicy:
    """Rule policy over noiseless observations.

    Seeing the target: predict yes.  Seeing both objects: predict by
    membership.  Seeing one non-target object of a strictly larger
    category than the query's: move (the target could be hidden behind
    it); otherwise nothing can hide the target, so predict no.
    """

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._category = {s.name: s.category for s in catalog}

    def decide(self, query: str, obs: np.ndarray, t: int):
        """Returns ("predict", bool) or ("move", Action)."""
        names = decode_observation(obs, self.catalog)
        if query in names:
            return ("predict", True)
        if len(names) == SLOT_COUNT:
            return ("predict", False)
        if len(names) == 1 and t < MAX_STEPS:
            if self._category[names[0]] > self._category[query]:
                return ("move", Action.CIRCLE_LEFT)
        return ("predict", False)


def run_oracle_episode(env: TabletopEnv, sample: Sample) -> Outcome:
    policy = OraclePolicy(env.catalog)
    obs = env.reset(sample)
    while True:
        kind, value = policy.decide(sample.query, obs, env.t)
        if kind == "predict":
            if not env.done:
                env.step(Action.STOP)
            return env.finish(value)
        obs, done = env.step(value)
        if done:
            kind, value = policy.decide(sample.query, obs, env.t)
            return env.finish(value if kind == "predict" else False)


class BaselineKind(Enum):
    PASSIVE = "passive"
    RANDOM = "random"
    EXHAUSTIVE = "exhaustive"


def scripted_baseline(kind: BaselineKind, rng: np.random.Generator):
    """Action source for the scripted comparison baselines.

    Passive stops immediately; Random draws uniformly over the three
    actions each step; Exhaustive circles left until the step cap.
    """
    if kind is BaselineKind.PASSIVE:
        return lambda t: Action.STOP
    if kind is BaselineKind.RANDOM:
        actions = list(Action)
        return lambda t: actions[rng.integers(3)]
    return lambda t: Action.CIRCLE_LEFT


def run_scripted_episode(env: TabletopEnv, sample: Sample, action_source, predict_fn) -> Outcome:
    """Roll a scripted policy; `predict_fn(obs_history, query)` -> bool."""
    obs = env.reset(sample)
    history = [obs]
    while not env.done:
        action = action_source(env.t)
        obs, _ = env.step(action)
        if action is not Action.STOP:
            history.append(obs)
    return env.finish(predict_fn(history, sample.query))


def trace_record(
    seed: int, sample: Sample, actions: list[Action], viewpoints: list[int], outcome: Outcome
) -> dict:
    """JSONL-friendly episode trace."""
    return {
        "seed": seed,
        "scene_type": sample.scene_type.value,
        "query": sample.query,
        "label": sample.label,
        "actions": [a.name.lower() for a in actions],
        "viewpoints": viewpoints,
        "prediction": outcome.prediction,
        "T": outcome.steps,
        "reward": outcome.total_reward,
    }
