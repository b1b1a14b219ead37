"""Command-line entry points: evolve, evaluate, baselines, stats, replay.

Exit codes: 0 success, 1 candidate failure or replay mismatch,
2 configuration or input error, 3 every initial candidate failed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import baselines as bl
from .archive import read_events
from .config import ConfigError, RunConfig, from_mapping, load_config
from .datasets import SplitSpec, UnknownDataset, dumps_windows, load_dataset, load_split, loads_windows
from .errors import TrajforgeError
from .evolution import AllCandidatesFailed, Evolution
from .llm import MockProvider, OpenAIChatProvider
from .metrics import ScoreReport, render_sfl_text, score_windows
from .report import (
    average_row,
    best_j_curve,
    curve_csv,
    final_best,
    final_sfl,
    lineage_dot,
    table_csv,
    table_text,
    write_curve_svg,
)
from .runtime import Candidate, Status, evaluate_candidate, execute

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3

REPLAY_TOLERANCE = 1e-9


class Mismatch(TrajforgeError):
    def __init__(self, candidate_id: str, logged: float, replayed):
        super().__init__(f"Mismatch({candidate_id}): logged J {logged!r}, replayed {replayed!r}")
        self.candidate_id = candidate_id


def make_gateway(cfg: RunConfig):
    g = cfg.gateway
    if g.provider == "mock":
        return MockProvider(script=g.script) if g.script is not None else MockProvider(seed=g.mock_seed)
    if g.provider == "openai":
        if not g.model:
            raise ConfigError("gateway.model is required for the openai provider")
        return OpenAIChatProvider(
            g.base_url, g.model, os.environ.get(g.api_key_env), g.timeout, g.max_attempts, g.backoff,
            g.max_in_flight, g.send_seed,
        )
    raise ConfigError(f"gateway.provider must be 'mock' or 'openai', got {g.provider!r}")


def _split(cfg: RunConfig) -> SplitSpec:
    d = cfg.data
    if d.held_out not in d.datasets:
        raise ConfigError(f"data.held_out {d.held_out!r} is not among data.datasets")
    return SplitSpec(d.held_out, tuple(n for n in d.datasets if n != d.held_out))


def _load_split(cfg: RunConfig):
    root = cfg.data.resolved_root()
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} does not exist")
    try:
        return load_split(root, _split(cfg), cfg.data.train_stride, cfg.data.test_stride, cfg.data.column_order)
    except UnknownDataset as exc:
        raise ConfigError(f"dataset {exc.args[0]!r} not found under {root}") from None


# -- subcommands ---------------------------------------------------------------------

def cmd_evolve(args, cfg: RunConfig) -> int:
    train, test = _load_split(cfg)
    if not train:
        raise ConfigError("the training split yields no windows")
    run_id = cfg.output.run_id or f"{cfg.data.held_out}-seed{cfg.evolution.rng_seed}"
    run_dir = Path(args.out) if args.out else Path(cfg.output.runs_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.to_dict()
    (run_dir / "config.yaml").write_text(yaml.safe_dump(snapshot, sort_keys=True), encoding="utf-8")
    (run_dir / "windows.txt").write_text(dumps_windows(train), encoding="utf-8")

    def report(state):
        print(f"generation {state.generation}: best J {state.best_history[-1]:.6f} ({state.evaluations} evaluations)")

    engine = Evolution(
        cfg.evolution, make_gateway(cfg), train, cfg.limits, cfg.interpreter_profiles(), run_dir, snapshot, report
    )
    try:
        result = engine.run(resume=args.resume, test_windows=test or None, test_seed=cfg.evolution.eval_seed)
    except AllCandidatesFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    print(f"best candidate {result.best.id}: J {result.best.objective_j:.6f}")
    if result.held_out is not None and result.held_out.get("status") == "ok":
        h = result.held_out
        print(f"held-out {cfg.data.held_out}: minADE20 {h['min_ade']:.4f}  minFDE20 {h['min_fde']:.4f}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    root = cfg.data.resolved_root()
    name = args.dataset or cfg.data.held_out
    try:
        if args.split == "test":
            windows = load_dataset(root, name, cfg.data.test_stride, cfg.data.column_order)
        else:
            spec = SplitSpec(name, tuple(n for n in cfg.data.datasets if n != name))
            windows, _ = load_split(root, spec, cfg.data.train_stride, cfg.data.test_stride, cfg.data.column_order)
    except UnknownDataset as exc:
        raise ConfigError(f"dataset {exc.args[0]!r} not found under {root}") from None
    if not windows:
        raise ConfigError(f"no windows for {name} ({args.split})")
    try:
        source = Path(args.candidate).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read candidate: {exc}") from None
    cand = Candidate("cli", source, runtime_label=args.runtime)
    result = execute(cand, windows, cfg.limits, cfg.interpreter_profiles(), cfg.evolution.eval_seed)
    if result.status is not Status.OK:
        print(f"candidate status: {result.status.value} ({result.reason})", file=sys.stderr)
        if result.stderr_tail:
            print(result.stderr_tail, file=sys.stderr)
        return EXIT_FAILED
    rep = score_windows(result.predictions, [w.future for w in windows])
    print(f"dataset {name} ({args.split}), {len(windows)} windows, {len(rep.per_agent_best_k)} instances")
    print(f"minADE20 {rep.min_ade:.4f}")
    print(f"minFDE20 {rep.min_fde:.4f}")
    print(f"J {rep.objective_j:.6f}")
    print(f"time {result.elapsed:.3f} s ({1000 * result.elapsed / len(windows):.3f} ms per window, process start included)")
    return EXIT_OK


def run_baselines(cfg: RunConfig, methods=None, cvm_s_seeds: int = 5) -> dict:
    """Score every baseline on every dataset's benchmark windows; missing sets map to None."""
    root = cfg.data.resolved_root()
    windows = {}
    for name in cfg.data.datasets:
        try:
            windows[name] = load_dataset(root, name, cfg.data.test_stride, cfg.data.column_order)
        except UnknownDataset:
            windows[name] = None
    rows = {}
    for method in methods or bl.BASELINES:
        row = {}
        for name, ws in windows.items():
            if not ws:
                row[name] = None
                continue
            if method in bl.STOCHASTIC:
                reps = [bl.evaluate_baseline(method, ws, cfg.baselines, cfg.baselines.rng_seed + s) for s in range(cvm_s_seeds)]
                row[name] = ScoreReport(
                    float(np.mean([r.min_ade for r in reps])),
                    float(np.mean([r.min_fde for r in reps])),
                    float(np.mean([r.objective_j for r in reps])),
                )
            else:
                row[name] = bl.evaluate_baseline(method, ws, cfg.baselines)
        row["avg"] = average_row(row)
        rows[method] = row
    return rows


def cmd_baselines(args, cfg: RunConfig) -> int:
    start = time.monotonic()
    rows = run_baselines(cfg, args.methods, args.cvm_s_seeds)
    text = table_text(rows, cfg.data.datasets)
    print(text, end="")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "baselines.txt").write_text(text, encoding="utf-8")
    (out / "baselines.csv").write_text(table_csv(rows, cfg.data.datasets), encoding="utf-8")
    print(f"wrote {out / 'baselines.txt'} and {out / 'baselines.csv'} in {time.monotonic() - start:.1f} s")
    return EXIT_OK


def cmd_stats(args, cfg: RunConfig) -> int:
    run_dir = Path(args.run_dir)
    log_path = run_dir / "events.jsonl"
    if not log_path.is_file():
        raise ConfigError(f"{run_dir} has no events.jsonl")
    events = read_events(log_path)
    out = Path(args.out) if args.out else run_dir / "stats"
    out.mkdir(parents=True, exist_ok=True)
    curve = best_j_curve(events)
    (out / "best_j.csv").write_text(curve_csv(curve), encoding="utf-8")
    if curve:
        write_curve_svg(curve, out / "best_j.svg")
    hist = final_sfl(events)
    if hist is not None:
        (out / "sfl.txt").write_text(render_sfl_text(hist) + "\n", encoding="utf-8")
    (out / "lineage.dot").write_text(lineage_dot(events), encoding="utf-8")
    for g, n, j in curve:
        print(f"generation {g}: {n} evaluations, best J {j:.6f}")
    best = final_best(events)
    if best is not None:
        print(f"final best {best['id']} (J {best['objective_j']:.6f})")
    if hist is not None:
        print(render_sfl_text(hist))
    print(f"wrote statistics to {out}")
    return EXIT_OK


def replay_run(run_dir) -> tuple[int, list[str]]:
    """Re-execute every logged ok candidate; returns (count checked, messages).

    Raises Mismatch on the first candidate whose J differs from the log.
    """
    run_dir = Path(run_dir)
    events = read_events(run_dir / "events.jsonl")
    init = next((e for e in events if e["kind"] == "init"), None)
    records = [e["payload"] for e in events if e["kind"] == "candidate_evaluated" and e["payload"]["status"] == "ok"]
    if init is None or not records:
        return 0, ["nothing to replay"]
    cfg = from_mapping(init["payload"]["config"]) if "data" in init["payload"]["config"] else RunConfig()
    windows = loads_windows((run_dir / "windows.txt").read_text(encoding="utf-8"))
    seed = init["payload"]["config"].get("evolution", {}).get("eval_seed", 0)
    profiles = cfg.interpreter_profiles()
    cache: dict[tuple[str, str], float | None] = {}
    messages = []
    for rec in records:
        key = (rec["source_sha256"], rec["runtime_label"])
        if key not in cache:
            source = (run_dir / "candidates" / f"{rec['source_sha256']}.py").read_text(encoding="utf-8")
            cand = evaluate_candidate(Candidate(rec["id"], source, rec["runtime_label"]), windows, cfg.limits, profiles, seed)
            cache[key] = cand.objective_j if cand.ok else None
        replayed, logged = cache[key], rec["objective_j"]
        if replayed is None or abs(replayed - logged) > REPLAY_TOLERANCE * max(1.0, abs(logged)):
            raise Mismatch(rec["id"], logged, replayed)
        messages.append(f"ok {rec['id']} J {logged:.9f}")
    return len(records), messages


def cmd_replay(args, cfg: RunConfig) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "events.jsonl").is_file():
        raise ConfigError(f"{run_dir} has no events.jsonl")
    try:
        count, messages = replay_run(run_dir)
    except Mismatch as exc:
        print(str(exc))
        return EXIT_FAILED
    for m in messages:
        print(m)
    if count:
        print(f"replayed {count} candidate evaluations: all match")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="overrides evolution.rng_seed and baselines.rng_seed")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. evolution.max_generations=1 (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trajforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", parents=[common], help="run the evolutionary search")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in the run directory")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("evaluate", parents=[common], help="score one candidate source file")
    p.add_argument("candidate")
    p.add_argument("--dataset", help="dataset name (default: data.held_out)")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--runtime", default="python", help="interpreter profile")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baselines", parents=[common], help="benchmark the classical heuristics")
    p.add_argument("--methods", nargs="+", choices=list(bl.BASELINES))
    p.add_argument("--cvm-s-seeds", type=int, default=5, help="seeds averaged for stochastic baselines")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("stats", parents=[common], help="curves, SFL histogram and lineage of a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("replay", parents=[common], help="re-execute logged candidates and check J")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
