"""Command-line entry point.

Subcommands:

  search    run one strategy at one seed, write its trace log
  compare   run several strategies across seeds, write runs.csv + summary.json
  oracle    build a fitness table file, or export one to CSV
  replay    recompute a logged run from its trace file

Options resolve as command line > config file > built-in defaults. The
config file is flat ``key = value`` lines (``#`` comments allowed) using the
long option names with underscores. Configuration errors exit with status 2;
anything else that goes wrong is a bug and raises.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Dict, List, Optional

from .arch_space import SpaceConfig, cell_from_rank, cell_to_text
from .evaluators import MaturityModel, build_tabular, load_oracle, save_oracle
from .harness import (
    STRATEGIES,
    ConfigError,
    StrategyConfig,
    compare,
    make_oracle,
    replay,
    resolve_target,
    run_strategy,
    validate_config,
    write_jsonl,
)

DEFAULTS: Dict[str, object] = {
    "strategy": "reinforced",
    "strategies": "reinforced,ea_random,random",
    "blocks": 3,
    "ops": 4,
    "pop": 20,
    "sample": 5,
    "budget": 300,
    "seed": 0,
    "seeds": "0:10",
    "oracle": "tabular:7",
    "noise": None,
    "baseline": "ema",
    "entropy_weight": 0.1,
    "hidden": 100,
    "embed": 100,
    "lr": 0.001,
    "out": "runs",
}

_CONVERTERS = {
    "strategy": str,
    "strategies": str,
    "blocks": int,
    "ops": int,
    "pop": int,
    "sample": int,
    "budget": int,
    "seed": int,
    "seeds": str,
    "oracle": str,
    "noise": float,
    "baseline": str,
    "entropy_weight": float,
    "hidden": int,
    "embed": int,
    "lr": float,
    "out": str,
}


def load_config_file(path: str) -> Dict[str, object]:
    """Flat key = value file; unknown keys are configuration errors."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values: Dict[str, object] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key not in _CONVERTERS:
                raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
            try:
                values[key] = _CONVERTERS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return values


def resolve(args: argparse.Namespace, key: str):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    file_values = getattr(args, "_file_values", {})
    if key in file_values:
        return file_values[key]
    return DEFAULTS.get(key)


def parse_oracle_spec(spec: str):
    """'tabular:SEED' | 'landscape:SEED' | 'file:PATH'; seed defaults to 7."""
    kind, _, rest = spec.partition(":")
    if kind == "file":
        if not rest:
            raise ConfigError("oracle spec 'file:' requires a path")
        return "file", 7, rest
    if kind in ("tabular", "landscape"):
        if not rest:
            return kind, 7, None
        try:
            return kind, int(rest), None
        except ValueError:
            raise ConfigError(f"oracle seed must be an integer, got {rest!r}")
    raise ConfigError(f"unknown oracle spec {spec!r}")


def parse_seeds(spec: str) -> List[int]:
    """'A:B' means range(A, B); otherwise a comma-separated list."""
    spec = str(spec).strip()
    try:
        if ":" in spec:
            lo, _, hi = spec.partition(":")
            lo_i, hi_i = int(lo), int(hi)
            if hi_i <= lo_i:
                raise ConfigError(f"empty seed range {spec!r}")
            return list(range(lo_i, hi_i))
        return [int(part) for part in spec.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"bad seeds spec {spec!r}")


def build_strategy_config(args: argparse.Namespace, strategy: str) -> StrategyConfig:
    blocks = int(resolve(args, "blocks"))
    ops = int(resolve(args, "ops"))
    try:
        space = SpaceConfig(num_blocks=blocks, num_ops=ops)
    except ValueError as exc:
        raise ConfigError(str(exc))
    kind, oracle_seed, path = parse_oracle_spec(str(resolve(args, "oracle")))
    baseline = resolve(args, "baseline")
    if isinstance(baseline, str) and baseline.lower() in ("none", "off", ""):
        baseline = None
    noise = resolve(args, "noise")
    cfg = StrategyConfig(
        strategy=strategy,
        space=space,
        oracle_kind=kind,
        oracle_seed=oracle_seed,
        oracle_path=path,
        pop_size=int(resolve(args, "pop")),
        sample_size=int(resolve(args, "sample")),
        budget=int(resolve(args, "budget")),
        noise=None if noise is None else float(noise),
        embed_size=int(resolve(args, "embed")),
        hidden_size=int(resolve(args, "hidden")),
        learning_rate=float(resolve(args, "lr")),
        entropy_weight=float(resolve(args, "entropy_weight")),
        baseline=baseline,
    )
    validate_config(cfg)
    return cfg


def cmd_search(args: argparse.Namespace) -> int:
    strategy = str(resolve(args, "strategy"))
    cfg = build_strategy_config(args, strategy)
    seed = int(resolve(args, "seed"))
    out_dir = str(resolve(args, "out"))
    os.makedirs(out_dir, exist_ok=True)
    oracle = make_oracle(cfg)
    target, target_source = resolve_target(oracle)
    summary, log = run_strategy(cfg, seed, oracle, target)
    trace_path = os.path.join(out_dir, f"trace_{strategy}_{seed}.jsonl")
    write_jsonl(trace_path, log)
    payload = {
        "strategy": strategy,
        "seed": seed,
        "target": target,
        "target_source": target_source,
        "final_best_true": summary.final_best_true,
        "evals_to_target": summary.evals_to_target,
        "wall_time_s": round(summary.wall_time, 3),
        "trace": trace_path,
    }
    with open(os.path.join(out_dir, f"search_{strategy}_{seed}.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    reached = (
        str(summary.evals_to_target)
        if summary.evals_to_target is not None
        else "never"
    )
    print(
        f"{strategy} seed={seed}: best_true={summary.final_best_true:.4f} "
        f"target={target:.4f} evals_to_target={reached} "
        f"({summary.wall_time:.1f}s) -> {trace_path}"
    )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    names = [
        s.strip() for s in str(resolve(args, "strategies")).split(",") if s.strip()
    ]
    if not names:
        raise ConfigError("no strategies given")
    seeds = parse_seeds(str(resolve(args, "seeds")))
    if not seeds:
        raise ConfigError("no seeds given")
    cfg = build_strategy_config(args, names[0])
    for name in names:
        validate_config(StrategyConfig(**{**_cfg_dict(cfg), "strategy": name}))
    out_dir = str(resolve(args, "out"))
    report = compare(cfg, names, seeds, out_dir)
    print(f"wrote {os.path.join(out_dir, 'runs.csv')}")
    print(f"wrote {os.path.join(out_dir, 'summary.json')}")
    for name, block in report["strategies"].items():
        print(
            f"{name}: median_evals_to_target={block['median_evals_to_target']:.1f} "
            f"unreached={block['unreached']}/{len(seeds)}"
        )
    for label, block in report["comparisons"].items():
        if "rank_sum_p" in block:
            print(
                f"{label}: speedup_median={block['speedup_median']:.3f} "
                f"ci95=[{block['speedup_ci95'][0]:.3f}, {block['speedup_ci95'][1]:.3f}] "
                f"p={block['rank_sum_p']:.5f}"
            )
        else:
            print(
                f"{label}: median_diff={block['median_diff']:.1f} "
                f"ci95=[{block['diff_ci95'][0]:.1f}, {block['diff_ci95'][1]:.1f}]"
            )
    return 0


def _cfg_dict(cfg: StrategyConfig) -> dict:
    from .harness import asdict_config

    return asdict_config(cfg)


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.oracle_cmd == "build":
        blocks = int(resolve(args, "blocks"))
        ops = int(resolve(args, "ops"))
        try:
            space = SpaceConfig(num_blocks=blocks, num_ops=ops)
        except ValueError as exc:
            raise ConfigError(str(exc))
        noise = resolve(args, "noise")
        sigma = 0.01 if noise is None else float(noise)
        seed = int(args.oracle_seed if args.oracle_seed is not None else 7)
        oracle = build_tabular(space, seed, MaturityModel(sigma=sigma))
        out = str(resolve(args, "out"))
        if os.path.isdir(out):
            out = os.path.join(out, f"oracle_b{blocks}_k{ops}_s{seed}.json")
        save_oracle(out, oracle)
        print(
            f"built table of {oracle.table.size} cells, "
            f"optimum {oracle.optimum_fitness:.4f} at rank {oracle.optimum_rank} "
            f"-> {out}"
        )
        return 0
    if args.oracle_cmd == "export":
        oracle = load_oracle(args.oracle_file)
        out = str(resolve(args, "out"))
        if os.path.isdir(out):
            out = os.path.join(out, "oracle_export.csv")
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "cell", "true_fitness"])
            for rank in range(oracle.table.size):
                writer.writerow(
                    [
                        rank,
                        cell_to_text(cell_from_rank(rank, oracle.cfg)),
                        repr(float(oracle.table[rank])),
                    ]
                )
        print(f"exported {oracle.table.size} rows -> {out}")
        return 0
    raise ConfigError(f"unknown oracle subcommand {args.oracle_cmd!r}")


def cmd_replay(args: argparse.Namespace) -> int:
    final = replay(args.log)
    if args.out_file:
        with open(args.out_file, "w") as fh:
            json.dump(final, fh, indent=2, sort_keys=True)
    print(
        f"replayed {args.log}: best_cell={final['best_cell']} "
        f"best_true={final['best_true']:.6f}"
    )
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--blocks", type=int, default=None)
    parser.add_argument("--ops", type=int, default=None)
    parser.add_argument("--pop", type=int, default=None)
    parser.add_argument("--sample", type=int, default=None)
    parser.add_argument("--budget", type=int, default=None)
    parser.add_argument(
        "--oracle", default=None, help="tabular:SEED | landscape:SEED | file:PATH"
    )
    parser.add_argument("--noise", type=float, default=None)
    parser.add_argument("--baseline", default=None, help="ema | none")
    parser.add_argument("--entropy-weight", dest="entropy_weight", type=float, default=None)
    parser.add_argument("--hidden", type=int, default=None)
    parser.add_argument("--embed", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evocell",
        description="Evolutionary cell search with a learned mutation policy.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_search = sub.add_parser("search", help="run one strategy at one seed")
    _add_common(p_search)
    p_search.add_argument("--strategy", default=None, choices=STRATEGIES)
    p_search.add_argument("--seed", type=int, default=None)
    p_search.set_defaults(func=cmd_search)

    p_compare = sub.add_parser("compare", help="run strategies across seeds")
    _add_common(p_compare)
    p_compare.add_argument(
        "--strategies", default=None, help="comma-separated strategy names"
    )
    p_compare.add_argument("--seeds", default=None, help="A:B range or comma list")
    p_compare.set_defaults(func=cmd_compare)

    p_oracle = sub.add_parser("oracle", help="build or export fitness tables")
    oracle_sub = p_oracle.add_subparsers(dest="oracle_cmd", required=True)
    p_build = oracle_sub.add_parser("build", help="tabulate a seeded landscape")
    _add_common(p_build)
    p_build.add_argument("--oracle-seed", dest="oracle_seed", type=int, default=None)
    p_build.set_defaults(func=cmd_oracle)
    p_export = oracle_sub.add_parser("export", help="dump a table file to CSV")
    _add_common(p_export)
    p_export.add_argument("oracle_file", help="path to a saved oracle file")
    p_export.set_defaults(func=cmd_oracle)

    p_replay = sub.add_parser("replay", help="recompute a logged run")
    p_replay.add_argument("log", help="trace_<strategy>_<seed>.jsonl path")
    p_replay.add_argument("--out", dest="out_file", default=None)
    p_replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            args._file_values = load_config_file(args.config)
        else:
            args._file_values = {}
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
