"""Curriculum training loop and the evaluation protocols.

Training runs the four data levels in sequence, one Adam step per
episode, carrying parameters (and optimizer moments) across stage
boundaries.  Evaluation rolls greedy episodes on freshly generated
samples; scripted baselines reuse the trained prediction head with fixed
action strategies.  All randomness derives from the run seed through
named per-episode streams, so any episode can be replayed in isolation.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import AgentModel, ModelConfig, predict_from_history, rollout, train_step
from .catalog import Catalog, default_catalog
from .env import (
    BaselineKind,
    TabletopEnv,
    run_oracle_episode,
    run_scripted_episode,
    scripted_baseline,
    trace_record,
)
from .geometry import Viewpoint
from .scenegen import DataLevel, SceneGenerator, make_holdout, pair_key
from .seeding import episode_stream, stream

METRICS_HEADER = "episode,stage,level,acc,avg_steps,loss_p,loss_a,loss_b"

DESK_EPISODES = 50_000
DESK_LR = 1e-3


@dataclass(frozen=True)
class CurriculumStage:
    level: DataLevel
    episodes: int
    alpha: float
    beta: float
    lr: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.lr <= 0:
            raise ValueError("alpha, beta and lr must be positive")


def default_stages(episodes: int = DESK_EPISODES, lr: float = DESK_LR) -> list[CurriculumStage]:
    """The four-level curriculum with the standard loss-weight schedule:
    alpha 1e-2 for the first three stages, 1e-4 for the mixed stage."""
    levels = [DataLevel.L1_1VIS, DataLevel.L2_2VIS, DataLevel.L3_2OCC, DataLevel.L4_OVERALL]
    alphas = [1e-2, 1e-2, 1e-2, 1e-4]
    return [
        CurriculumStage(level, episodes, alpha, 1.0, lr)
        for level, alpha in zip(levels, alphas)
    ]


def paper_scale_stages() -> list[CurriculumStage]:
    budgets = [900_000, 900_000, 400_000, 400_000]
    alphas = [1e-2, 1e-2, 1e-2, 1e-4]
    levels = [DataLevel.L1_1VIS, DataLevel.L2_2VIS, DataLevel.L3_2OCC, DataLevel.L4_OVERALL]
    return [
        CurriculumStage(level, n, alpha, 1.0, 1e-4)
        for level, n, alpha in zip(levels, budgets, alphas)
    ]


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    stages: tuple[CurriculumStage, ...] = ()
    holdout_per_pair: int = 0
    eval_every: int = 2000
    out_dir: str = "runs/default"

    def __post_init__(self):
        if not self.stages:
            object.__setattr__(self, "stages", tuple(default_stages()))


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the offending episode's seed."""

    def __init__(self, seed: int, stage_index: int, episode_index: int):
        self.seed = seed
        self.stage_index = stage_index
        self.episode_index = episode_index
        super().__init__(
            f"non-finite loss at stage {stage_index} episode {episode_index} "
            f"(replay with seed={seed}, streams scenegen/policy, "
            f"indices ({stage_index}, {episode_index}))"
        )


def stage_labels(n_stages: int) -> list[str]:
    return [f"L{i + 1}" for i in range(n_stages - 1)] + ["final"]


@dataclass
class TrainResult:
    config: RunConfig
    checkpoints: dict[str, str]
    metrics_path: str
    holdout: frozenset
    manifest_path: str


def train(config: RunConfig, catalog: Catalog | None = None, log=None) -> TrainResult:
    """Run the full curriculum; writes checkpoints, metrics and manifest."""
    catalog = catalog if catalog is not None else default_catalog()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    holdout = frozenset()
    if config.holdout_per_pair:
        holdout = make_holdout(stream(config.seed, "holdout"), config.holdout_per_pair, catalog)
    gen = SceneGenerator(catalog, holdout, "exclude")
    model = AgentModel(config.model, stream(config.seed, "init"))
    env = TabletopEnv(catalog)

    labels = stage_labels(len(config.stages))
    checkpoints: dict[str, str] = {}
    metrics_path = out / "metrics.csv"
    window = deque(maxlen=config.eval_every)
    global_episode = 0

    with open(metrics_path, "w", encoding="utf-8") as metrics:
        metrics.write(METRICS_HEADER + "\n")
        for stage_index, stage in enumerate(config.stages):
            for episode in range(stage.episodes):
                scene_rng = episode_stream(config.seed, "scenegen", stage_index, episode)
                policy_rng = episode_stream(config.seed, "policy", stage_index, episode)
                sample = gen.sample(stage.level, scene_rng)
                try:
                    traj, losses = train_step(
                        model, env, sample, policy_rng, stage.alpha, stage.beta, stage.lr
                    )
                except ValueError as exc:  # non-finite activations surface here
                    raise TrainingDiverged(config.seed, stage_index, episode) from exc
                if not np.isfinite(losses.total):
                    raise TrainingDiverged(config.seed, stage_index, episode)
                window.append(
                    (
                        traj.outcome.correct,
                        traj.outcome.steps,
                        losses.prediction,
                        losses.policy,
                        losses.baseline,
                    )
                )
                global_episode += 1
                if global_episode % config.eval_every == 0:
                    cols = list(zip(*window))
                    acc = float(np.mean(cols[0]))
                    steps = float(np.mean(cols[1]))
                    metrics.write(
                        f"{global_episode},{stage_index + 1},{stage.level.value},"
                        f"{acc:.4f},{steps:.4f},{np.mean(cols[2]):.6f},"
                        f"{np.mean(cols[3]):.6f},{np.mean(cols[4]):.6f}\n"
                    )
                    if log is not None:
                        log(
                            f"[stage {stage_index + 1}/{len(config.stages)} "
                            f"{stage.level.value}] episode {global_episode}: "
                            f"acc {acc:.3f}, steps {steps:.2f}"
                        )
            ckpt = out / f"model_{labels[stage_index]}.ckpt"
            model.save(ckpt)
            checkpoints[labels[stage_index]] = str(ckpt)

    manifest = {
        "seed": config.seed,
        "holdout": sorted(list(p) for p in holdout),
        "stages": [
            {
                "label": labels[i],
                "level": s.level.value,
                "episodes": s.episodes,
                "alpha": s.alpha,
                "beta": s.beta,
                "lr": s.lr,
                "checkpoint": checkpoints[labels[i]],
            }
            for i, s in enumerate(config.stages)
        ],
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return TrainResult(config, checkpoints, str(metrics_path), holdout, str(manifest_path))


# ---------------------------------------------------------------------------
# Evaluation

HOLDOUT_FILTERS = {"all": "all", "training_only": "exclude", "holdout_only": "only"}


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    avg_steps: float
    episodes: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "avg_steps": self.avg_steps, "episodes": self.episodes}


def _make_generator(catalog, holdout, holdout_filter) -> SceneGenerator:
    try:
        mode = HOLDOUT_FILTERS[holdout_filter]
    except KeyError:
        raise ValueError(f"unknown holdout filter: {holdout_filter!r}") from None
    if mode == "only" and not holdout:
        raise ValueError("holdout_only evaluation requires a non-empty holdout set")
    return SceneGenerator(catalog, holdout, mode)


def run_evaluation(
    episode_fn,
    level: DataLevel,
    n_episodes: int,
    seed: int,
    catalog: Catalog,
    holdout: frozenset = frozenset(),
    holdout_filter: str = "all",
    trace_path=None,
) -> EvalReport:
    """Shared evaluation loop; `episode_fn(env, sample, rng)` -> Trajectory-like.

    episode_fn returns an object with `.outcome`; traces are exported as
    JSONL when trace_path is given.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    gen = _make_generator(catalog, holdout, holdout_filter)
    env = TabletopEnv(catalog)
    correct = 0
    steps = 0
    trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
    try:
        for i in range(n_episodes):
            rng = episode_stream(seed, "eval", i)
            sample = gen.sample(level, rng)
            result = episode_fn(env, sample, rng)
            outcome = result.outcome
            correct += outcome.correct
            steps += outcome.steps
            if trace_fh is not None:
                actions = getattr(result, "actions", [])
                viewpoints = [0]
                for a in actions:
                    viewpoints.append(Viewpoint(viewpoints[-1]).moved(a).index)
                trace_fh.write(
                    json.dumps(trace_record(seed, sample, actions, viewpoints[: len(actions) + 1], outcome))
                    + "\n"
                )
    finally:
        if trace_fh is not None:
            trace_fh.close()
    return EvalReport(correct / n_episodes, steps / n_episodes, n_episodes)


@dataclass
class _ScriptedResult:
    outcome: object
    actions: list = field(default_factory=list)


def model_episode_fn(model: AgentModel, mode: str = "greedy"):
    def run(env, sample, rng):
        return rollout(model, env, sample, rng, mode=mode)

    return run


def oracle_episode_fn():
    def run(env, sample, rng):
        return _ScriptedResult(run_oracle_episode(env, sample))

    return run


def scripted_episode_fn(model: AgentModel, kind: BaselineKind):
    def run(env, sample, rng):
        source = scripted_baseline(kind, rng)
        taken = []

        def recording_source(t):
            a = source(t)
            taken.append(a)
            return a

        outcome = run_scripted_episode(
            env,
            sample,
            recording_source,
            lambda history, q: predict_from_history(model, history, env.catalog.index(q)),
        )
        return _ScriptedResult(outcome, taken)

    return run


def evaluate_checkpoint(
    ckpt_path: str,
    level: DataLevel,
    n_episodes: int,
    seed: int,
    catalog: Catalog | None = None,
    holdout: frozenset = frozenset(),
    holdout_filter: str = "all",
    workers: int = 1,
    trace_path=None,
) -> EvalReport:
    """Greedy evaluation of a stored checkpoint, optionally in parallel."""
    catalog = catalog if catalog is not None else default_catalog()
    if workers <= 1:
        model = AgentModel.load(ckpt_path)
        return run_evaluation(
            model_episode_fn(model), level, n_episodes, seed, catalog,
            holdout, holdout_filter, trace_path,
        )
    from concurrent.futures import ProcessPoolExecutor

    chunks = [n_episodes // workers] * workers
    for i in range(n_episodes % workers):
        chunks[i] += 1
    futures = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for w, chunk in enumerate(chunks):
            if chunk == 0:
                continue
            futures.append(
                pool.submit(
                    _eval_worker, ckpt_path, level.value, chunk, seed + 1_000_003 * (w + 1),
                    sorted(list(p) for p in holdout), holdout_filter,
                )
            )
        parts = [f.result() for f in futures]
    total = sum(p[2] for p in parts)
    return EvalReport(
        sum(p[0] for p in parts) / total, sum(p[1] for p in parts) / total, total
    )


def _eval_worker(ckpt_path, level_value, n, seed, holdout_pairs, holdout_filter):
    catalog = default_catalog()
    holdout = frozenset(pair_key(a, b) for a, b in holdout_pairs)
    model = AgentModel.load(ckpt_path)
    report = run_evaluation(
        model_episode_fn(model), DataLevel(level_value), n, seed, catalog,
        holdout, holdout_filter,
    )
    return (report.accuracy * n, report.avg_steps * n, n)


def cross_stage_matrix(
    run_dir: str, n_episodes: int = 10_000, seed: int = 0, catalog: Catalog | None = None
) -> dict[str, dict[str, EvalReport]]:
    """Evaluate every stage checkpoint on every data level."""
    catalog = catalog if catalog is not None else default_catalog()
    manifest_path = Path(run_dir) / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    matrix: dict[str, dict[str, EvalReport]] = {}
    for entry in manifest["stages"]:
        ckpt = entry["checkpoint"]
        if not Path(ckpt).exists():
            raise FileNotFoundError(f"missing checkpoint: {ckpt}")
        model = AgentModel.load(ckpt)
        row: dict[str, EvalReport] = {}
        for level in DataLevel:
            row[level.value] = run_evaluation(
                model_episode_fn(model), level, n_episodes, seed, catalog
            )
        matrix[entry["label"]] = row
    return matrix


def baselines_table(
    ckpt_path: str, n_episodes: int = 10_000, seed: int = 0, catalog: Catalog | None = None
) -> dict[str, dict[str, EvalReport]]:
    """Passive/Random/Exhaustive (trained head, scripted actions) vs the model."""
    catalog = catalog if catalog is not None else default_catalog()
    model = AgentModel.load(ckpt_path)
    table: dict[str, dict[str, EvalReport]] = {}
    rows = [
        ("passive", scripted_episode_fn(model, BaselineKind.PASSIVE)),
        ("random", scripted_episode_fn(model, BaselineKind.RANDOM)),
        ("exhaustive", scripted_episode_fn(model, BaselineKind.EXHAUSTIVE)),
        ("model", model_episode_fn(model)),
    ]
    for name, fn in rows:
        table[name] = {
            level.value: run_evaluation(fn, level, n_episodes, seed, catalog)
            for level in DataLevel
        }
    return table


HOLDOUT_EVAL_ROWS = (
    (DataLevel.L1_1VIS, "all", "L1-1-vis"),
    (DataLevel.L2_2VIS, "training_only", "L2-2-vis (training)"),
    (DataLevel.L3_2OCC, "training_only", "L3-2-occ (training)"),
    (DataLevel.L2_2VIS, "holdout_only", "L2-2-vis (holdout)"),
    (DataLevel.L3_2OCC, "holdout_only", "L3-2-occ (holdout)"),
)


def holdout_experiment(
    base: RunConfig,
    per_pair_count: int,
    seeds: tuple[int, ...] = (1, 2, 3),
    n_episodes: int = 10_000,
    catalog: Catalog | None = None,
    log=None,
) -> dict:
    """Train with held-out pairs excluded, then test on both splits.

    Repeats over the given seeds; reports per-seed rows and their mean.
    """
    catalog = catalog if catalog is not None else default_catalog()
    per_seed = []
    for seed in seeds:
        config = replace(
            base,
            seed=seed,
            holdout_per_pair=per_pair_count,
            out_dir=str(Path(base.out_dir) / f"holdout{per_pair_count}_seed{seed}"),
        )
        result = train(config, catalog, log=log)
        final = result.checkpoints["final"]
        model = AgentModel.load(final)
        rows = {}
        for level, flt, label in HOLDOUT_EVAL_ROWS:
            rows[label] = run_evaluation(
                model_episode_fn(model), level, n_episodes, seed, catalog,
                result.holdout, flt,
            )
        per_seed.append({"seed": seed, "rows": {k: v.to_dict() for k, v in rows.items()}})
    mean_rows = {}
    for _, _, label in HOLDOUT_EVAL_ROWS:
        accs = [s["rows"][label]["accuracy"] for s in per_seed]
        steps = [s["rows"][label]["avg_steps"] for s in per_seed]
        mean_rows[label] = {
            "accuracy": float(np.mean(accs)),
            "avg_steps": float(np.mean(steps)),
            "episodes": n_episodes * len(seeds),
        }
    return {"per_pair_count": per_pair_count, "seeds": list(seeds), "per_seed": per_seed, "mean": mean_rows}
