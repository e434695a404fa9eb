"""Command-line interface: data generation, training, evaluation, checks.

Exit codes: 0 success, 1 usage/configuration error, 2 verification-suite
failure, 3 training divergence.  The environment variable ROEP_SEED
overrides the seed from a run-configuration file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .agent import ModelConfig
from .catalog import default_catalog
from .scenegen import DataLevel, SceneGenerator, make_holdout, pair_key, write_jsonl
from .seeding import episode_stream, stream
from .training import (
    CurriculumStage,
    EvalReport,
    RunConfig,
    TrainingDiverged,
    baselines_table,
    cross_stage_matrix,
    default_stages,
    evaluate_checkpoint,
    holdout_experiment,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3

GRAD_TOLERANCE = 1e-6


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# Run-configuration files: flat `key = value` lines plus [stage] sections.

_RUN_KEYS = {"seed": int, "holdout_per_pair": int, "eval_every": int, "out_dir": str}
_MODEL_KEYS = {"vocab": int, "d_v": int, "d_w": int, "d_m": int, "action_hidden": int}
_STAGE_KEYS = {"level": str, "episodes": int, "alpha": float, "beta": float, "lr": float}


def parse_run_config(text: str) -> RunConfig:
    run: dict = {}
    model: dict = {}
    stages: list[dict] = []
    section: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[stage]":
            section = {}
            stages.append(section)
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key = key.strip()
        value = value.strip()
        if section is not None:
            if key not in _STAGE_KEYS:
                raise ValueError(f"config line {lineno}: unknown stage key {key!r}")
            section[key] = _STAGE_KEYS[key](value)
        elif key in _RUN_KEYS:
            run[key] = _RUN_KEYS[key](value)
        elif key in _MODEL_KEYS:
            model[key] = _MODEL_KEYS[key](value)
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")

    stage_objs = []
    for s in stages:
        missing = set(_STAGE_KEYS) - set(s)
        if missing:
            raise ValueError(f"stage section missing keys: {sorted(missing)}")
        stage_objs.append(
            CurriculumStage(
                DataLevel.parse(s["level"]), s["episodes"], s["alpha"], s["beta"], s["lr"]
            )
        )
    env_seed = os.environ.get("ROEP_SEED")
    if env_seed is not None:
        run["seed"] = int(env_seed)
    return RunConfig(
        seed=run.get("seed", 1),
        model=ModelConfig(**model),
        stages=tuple(stage_objs) if stage_objs else tuple(default_stages()),
        holdout_per_pair=run.get("holdout_per_pair", 0),
        eval_every=run.get("eval_every", 2000),
        out_dir=run.get("out_dir", "runs/default"),
    )


def load_run_config(path: str) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Pretty-printing

def _fmt_report(r: EvalReport) -> str:
    return f"{100 * r.accuracy:5.1f}%  {r.avg_steps:5.2f} steps"


def _print_grid(grid: dict[str, dict[str, EvalReport]], row_title: str) -> None:
    levels = [lv.value for lv in DataLevel]
    print(f"{row_title:<12}" + "".join(f"{lv:>24}" for lv in levels))
    for row, cells in grid.items():
        line = f"{row:<12}"
        for lv in levels:
            line += f"{_fmt_report(cells[lv]):>24}"
        print(line)


def _manifest_holdout(run_dir: str) -> frozenset:
    manifest = json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8"))
    return frozenset(pair_key(a, b) for a, b in manifest.get("holdout", []))


# ---------------------------------------------------------------------------
# Command handlers

def _cmd_gen(args) -> int:
    catalog = default_catalog()
    holdout = frozenset()
    if args.holdout_per_pair:
        holdout = make_holdout(
            stream(args.seed, "holdout"), args.holdout_per_pair, catalog
        )
    gen = SceneGenerator(catalog, holdout, args.holdout_mode)
    level = DataLevel.parse(args.level)
    samples = []
    for i in range(args.n):
        rng = episode_stream(args.seed, "gen", i)
        samples.append((gen.sample(level, rng), args.seed, i))
    write_jsonl(samples, args.out)
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = load_run_config(args.config)
    if args.out_dir:
        config = dataclasses.replace(config, out_dir=args.out_dir)
    result = train(config, log=None if args.quiet else print)
    print(f"metrics:  {result.metrics_path}")
    for label, path in result.checkpoints.items():
        print(f"model_{label}: {path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    holdout = frozenset()
    if args.run_dir:
        holdout = _manifest_holdout(args.run_dir)
    report = evaluate_checkpoint(
        args.ckpt,
        DataLevel.parse(args.level),
        args.n,
        args.seed,
        holdout=holdout,
        holdout_filter=args.holdout_filter,
        workers=args.workers,
        trace_path=args.traces,
    )
    print(f"{args.level}: accuracy {100 * report.accuracy:.1f}%, "
          f"avg steps {report.avg_steps:.2f} ({report.episodes} episodes)")
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return EXIT_OK


def _cmd_baselines(args) -> int:
    table = baselines_table(args.ckpt, args.n, args.seed)
    _print_grid(table, "policy")
    if args.json:
        payload = {k: {lv: r.to_dict() for lv, r in row.items()} for k, row in table.items()}
        Path(args.json).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return EXIT_OK


def _cmd_matrix(args) -> int:
    matrix = cross_stage_matrix(args.dir, args.n, args.seed)
    _print_grid(matrix, "model")
    if args.json:
        payload = {k: {lv: r.to_dict() for lv, r in row.items()} for k, row in matrix.items()}
        Path(args.json).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return EXIT_OK


def _cmd_holdout(args) -> int:
    base = load_run_config(args.config) if args.config else RunConfig(out_dir=args.out_dir)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    result = holdout_experiment(base, args.per_pair, seeds, args.n, log=None if args.quiet else print)
    print(f"holdout {args.per_pair} pairs/family, seeds {seeds}, mean over seeds:")
    for label, row in result["mean"].items():
        print(f"  {label:<22} {100 * row['accuracy']:5.1f}%  {row['avg_steps']:5.2f} steps")
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=2), encoding="utf-8")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .verify import gradcheck_all

    report = gradcheck_all(args.seed)
    failed = False
    for name, err in report.items():
        status = "ok" if err < GRAD_TOLERANCE else "FAIL"
        failed = failed or err >= GRAD_TOLERANCE
        print(f"{name:<26} max rel err {err:.3e}  {status}")
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_oracle_check(args) -> int:
    from .verify import occlusion_agreement_check, oracle_policy_check

    failed = False
    results = oracle_policy_check(args.n, args.seed)
    for level, report in results.items():
        ok = report.accuracy == 1.0 and report.avg_steps <= 6.0
        failed = failed or not ok
        print(f"oracle @ {level:<12} accuracy {100 * report.accuracy:.2f}%  "
              f"steps {report.avg_steps:.2f}  {'ok' if ok else 'FAIL'}")
    agreement = occlusion_agreement_check(args.agreement_n, args.seed)
    rate = agreement.agreement_rate
    ok = rate >= 0.99 and not agreement.failures
    failed = failed or not ok
    print(f"occlusion vs ray oracle: {agreement.agreed}/{agreement.configs} agree, "
          f"{agreement.excused} boundary-excused, {len(agreement.failures)} failures  "
          f"{'ok' if ok else 'FAIL'}")
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="roep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="export generated samples as JSONL")
    p.add_argument("--level", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-per-pair", type=int, default=0, dest="holdout_per_pair")
    p.add_argument("--holdout-mode", default="exclude",
                   choices=["exclude", "only", "all"], dest="holdout_mode")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train", help="run the curriculum from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None, dest="out_dir")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one data level")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--level", required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--run-dir", default=None, dest="run_dir",
                   help="run directory providing the holdout set")
    p.add_argument("--holdout-filter", default="all",
                   choices=["all", "training_only", "holdout_only"], dest="holdout_filter")
    p.add_argument("--json", default=None)
    p.add_argument("--traces", default=None, help="episode trace JSONL path")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("baselines", help="compare scripted baselines with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None)
    p.set_defaults(fn=_cmd_baselines)

    p = sub.add_parser("matrix", help="cross-stage evaluation grid")
    p.add_argument("--dir", required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None)
    p.set_defaults(fn=_cmd_matrix)

    p = sub.add_parser("holdout", help="generalization experiment over held-out pairs")
    p.add_argument("--per-pair", type=int, required=True, dest="per_pair")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default="runs/holdout", dest="out_dir")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--json", default=None)
    p.set_defaults(fn=_cmd_holdout)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=20240)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="rule-policy and occlusion verification")
    p.add_argument("--n", type=int, default=2000, help="episodes per data level")
    p.add_argument("--agreement-n", type=int, default=1000, dest="agreement_n")
    p.add_argument("--seed", type=int, default=11)
    p.set_defaults(fn=_cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
