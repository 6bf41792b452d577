"""Command-line entry point.

Subcommands: ``gen`` (write a dataset), ``train`` (fit a model), ``eval``
(score a checkpoint), ``decode`` (expected counts -> exact counts),
``assign`` (probabilities + counts -> instance labels), and ``bench``
(run a scenario grid). Config files are TOML (JSON also accepted); every
command echoes its fully-resolved config as JSON on stdout so a run can be
reproduced from its own output. Exit codes: 2 config error, 3 I/O error,
4 training divergence, 5 shape/validation mismatch.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import multiprocessing
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .core import ExpectedCounts, ProbMatrix, CountVector, ValidationError
from .count_decoder import greedy_decode
from .assignment import assign_labels
from .datagen import DatasetConfig, generate_dataset, load_dataset, write_dataset
from .evaluation import evaluate_bags
from .harness import Scenario, ScenarioResult, aggregate_seed_results, run_seed
from .ioutil import atomic_write_text, stable_json
from .model import (
    DivergenceError,
    TrainConfig,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
    train,
    write_metrics_log,
)

log = logging.getLogger(__name__)

LOG_ENV = "SEMIWEAK_LOG"
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
RESULTS_VERSION = 1

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_SHAPE = 5


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config plumbing.

def _bundled_config_path(name: str):
    path = Path(__file__).parent / "configs" / f"{name}.toml"
    return path if path.exists() else None


def _load_config_file(spec: str) -> dict:
    path = Path(spec)
    if not path.exists() and "/" not in spec and not spec.endswith((".toml", ".json")):
        bundled = _bundled_config_path(spec)
        if bundled is not None:
            path = bundled
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {spec!r}: {exc}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(raw.decode())
        return tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _build_dataclass(cls, table, context: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{context} must be a table of keys")
    field_types = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(field_types))
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {', '.join(unknown)}")
    coerced = {
        key: tuple(value) if isinstance(value, list) else value for key, value in table.items()
    }
    try:
        return cls(**coerced)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def _section(doc: dict, name: str, context: str) -> dict:
    if name not in doc:
        raise ConfigError(f"{context} is missing the [{name}] table")
    return doc[name]


def _echo(payload: dict) -> None:
    print(stable_json(payload))


def _read_record(spec: str) -> dict:
    try:
        text = sys.stdin.read() if spec == "-" else Path(spec).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read input {spec!r}: {exc}") from exc
    try:
        return json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"input {spec!r} is not valid JSON: {exc}") from exc


def _emit(doc: dict, out) -> None:
    text = stable_json(doc)
    if out:
        atomic_write_text(Path(out), text + "\n")
    print(text)


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_gen(args) -> int:
    doc = _load_config_file(args.config)
    config = _build_dataclass(DatasetConfig, _section(doc, "dataset", "gen config"), "[dataset]")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    dataset, stats, report = generate_dataset(config)
    write_dataset(dataset, stats, config, args.out, report)
    log.info("wrote %d train / %d test bags to %s", len(dataset.train), len(dataset.test), args.out)
    _echo(
        {
            "command": "gen",
            "config": {"dataset": asdict(config)},
            "out": str(args.out),
            "stats": asdict(stats),
            "generator": report,
        }
    )
    return 0


def _train_config_from_args(doc: dict, args) -> TrainConfig:
    config = _build_dataclass(TrainConfig, _section(doc, "train", "train config"), "[train]")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.reg_kind is not None:
        config = replace(config, reg_kind={"l1": "l1_distance"}.get(args.reg_kind, args.reg_kind))
    if args.beta is not None:
        config = replace(config, beta=args.beta)
    if args.no_cls:
        config = replace(config, use_cls=False)
    if args.no_reg:
        config = replace(config, use_reg=False)
    return config


def cmd_train(args) -> int:
    doc = _load_config_file(args.config)
    config = _train_config_from_args(doc, args)
    dataset, _ = load_dataset(args.dataset)
    result = train(dataset, config)
    out = Path(args.out)
    save_checkpoint(result.params, out / "checkpoint.json")
    write_metrics_log(result, out / "metrics.jsonl")
    atomic_write_text(out / "train_config.json", stable_json({"train": asdict(config)}) + "\n")
    best = result.history[result.best_epoch]
    _echo(
        {
            "command": "train",
            "config": {"train": asdict(config)},
            "dataset": str(args.dataset),
            "out": str(args.out),
            "best_epoch": result.best_epoch,
            "best_val": best.val,
        }
    )
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset, _ = load_dataset(args.dataset)
    bags = dataset.split(args.split)
    if params.n_classes != dataset.n_classes:
        raise ValidationError(
            f"checkpoint has {params.n_classes} classes, dataset has {dataset.n_classes}"
        )
    probs = predict_probs(params, bags)
    metrics = evaluate_bags(
        probs, bags, dataset.n_classes, use_decoder=not args.no_decoder, literal=args.alg1_literal
    )
    _emit(
        {
            "command": "eval",
            "checkpoint": str(args.checkpoint),
            "dataset": str(args.dataset),
            "split": args.split,
            "decoder": not args.no_decoder,
            "alg1_literal": args.alg1_literal,
            "metrics": metrics.to_dict(),
        },
        args.out,
    )
    return 0


def cmd_decode(args) -> int:
    record = _read_record(args.infile)
    for key in ("lambdas", "bag_size"):
        if key not in record:
            raise ConfigError(f"decode input needs key {key!r}")
    result = greedy_decode(
        ExpectedCounts(np.asarray(record["lambdas"], dtype=np.float64)),
        int(record["bag_size"]),
        literal=args.alg1_literal,
    )
    _emit(
        {
            "command": "decode",
            "alg1_literal": args.alg1_literal,
            "counts": result.counts.counts.tolist(),
            "log_posterior": result.log_posterior,
            "iterations": result.iterations,
        },
        args.out,
    )
    return 0


def cmd_assign(args) -> int:
    record = _read_record(args.infile)
    for key in ("probs", "counts"):
        if key not in record:
            raise ConfigError(f"assign input needs key {key!r}")
    labeling = assign_labels(
        ProbMatrix(np.asarray(record["probs"], dtype=np.float64)),
        CountVector(np.asarray(record["counts"])),
    )
    _emit(
        {
            "command": "assign",
            "labels": labeling.labels.tolist(),
            "objective": labeling.objective,
        },
        args.out,
    )
    return 0


# ---------------------------------------------------------------------------
# Benchmark grid.

def _parse_scenarios(doc: dict) -> tuple:
    entries = doc.get("scenario")
    if not entries:
        raise ConfigError("bench config has no [[scenario]] entries")
    scenarios = []
    for i, entry in enumerate(entries):
        context = f"scenario #{i}"
        known = {"id", "use_decoder", "literal", "dataset", "train"}
        unknown = sorted(set(entry) - known)
        if unknown:
            raise ConfigError(f"unknown keys in {context}: {', '.join(unknown)}")
        if "id" not in entry:
            raise ConfigError(f"{context} is missing an id")
        scenarios.append(
            Scenario(
                scenario_id=str(entry["id"]),
                dataset=_build_dataclass(
                    DatasetConfig, _section(entry, "dataset", context), f"{context} [dataset]"
                ),
                train=_build_dataclass(
                    TrainConfig, _section(entry, "train", context), f"{context} [train]"
                ),
                use_decoder=bool(entry.get("use_decoder", True)),
                literal_decode=bool(entry.get("literal", False)),
            )
        )
    ids = [s.scenario_id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ConfigError("scenario ids must be unique")
    return tuple(scenarios)


def _bench_task(task):
    scenario, seed = task
    try:
        return run_seed(scenario, seed)
    except Exception as exc:
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def cmd_bench(args) -> int:
    doc = _load_config_file(args.config)
    bench_table = doc.get("bench", {})
    unknown = sorted(set(bench_table) - {"n_seeds"})
    if unknown:
        raise ConfigError(f"unknown keys in [bench]: {', '.join(unknown)}")
    n_seeds = int(bench_table.get("n_seeds", 5))
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    scenarios = _parse_scenarios(doc)

    tasks = []
    seeds_by_scenario = []
    for scenario in scenarios:
        base = scenario.dataset.seed if args.seed is None else args.seed
        seeds = tuple(base + i for i in range(n_seeds))
        seeds_by_scenario.append(seeds)
        tasks.extend((scenario, seed) for seed in seeds)

    jobs = args.jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(processes=min(jobs, len(tasks))) as pool:
            outcomes = pool.map(_bench_task, tasks)
    else:
        outcomes = [_bench_task(t) for t in tasks]

    results = []
    cursor = 0
    for scenario, seeds in zip(scenarios, seeds_by_scenario):
        per_seed = tuple(outcomes[cursor : cursor + len(seeds)])
        cursor += len(seeds)
        result = ScenarioResult(
            scenario_id=scenario.scenario_id,
            seeds=seeds,
            per_seed=per_seed,
            aggregate=aggregate_seed_results(per_seed),
            failed=all("error" in rec for rec in per_seed),
        )
        results.append((scenario, result))

    out = Path(args.out)
    doc_out = {
        "format_version": RESULTS_VERSION,
        "bench": {"n_seeds": n_seeds, "seed_override": args.seed},
        "scenarios": [
            {
                "config": {
                    "id": scenario.scenario_id,
                    "use_decoder": scenario.use_decoder,
                    "literal": scenario.literal_decode,
                    "dataset": asdict(scenario.dataset),
                    "train": asdict(scenario.train),
                },
                "result": result.to_dict(),
            }
            for scenario, result in results
        ],
    }
    atomic_write_text(out / "results.json", stable_json(doc_out) + "\n")

    csv_rows = []
    for scenario, result in results:
        agg = result.aggregate
        bag = agg.get("bag_precision_macro", {})
        inst = agg.get("instance_precision_macro", {})
        csv_rows.append(
            ",".join(
                [
                    result.scenario_id,
                    scenario.dataset.dataset_id,
                    str(len(result.seeds)),
                    repr(bag.get("mean", float("nan"))),
                    repr(bag.get("std", float("nan"))),
                    repr(inst.get("mean", float("nan"))),
                    repr(inst.get("std", float("nan"))),
                ]
            )
        )
    header = "scenario_id,dataset_id,n_seeds,bag_prec_mean,bag_prec_std,inst_prec_mean,inst_prec_std"
    atomic_write_text(out / "results.csv", header + "\n" + "\n".join(csv_rows) + "\n")

    for scenario, result in results:
        status = "FAILED" if result.failed else "ok"
        inst = result.aggregate.get("instance_precision_macro", {})
        log.info(
            "scenario %-12s %-6s inst_prec %.4f +/- %.4f",
            result.scenario_id,
            status,
            inst.get("mean", float("nan")),
            inst.get("std", float("nan")),
        )
    _echo(
        {
            "command": "bench",
            "config": str(args.config),
            "out": str(args.out),
            "n_seeds": n_seeds,
            "jobs": jobs,
            "failed_scenarios": [r.scenario_id for _, r in results if r.failed],
        }
    )
    return 1 if any(result.failed for _, result in results) else 0


# ---------------------------------------------------------------------------
# Parser / entry point.

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semiweak",
        description="Count-supervised bag learning: generation, training, decoding, benchmarks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic bag dataset")
    gen.add_argument("--config", required=True, help="TOML/JSON file with a [dataset] table")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a model on a generated dataset")
    tr.add_argument("--dataset", required=True, help="dataset directory from gen")
    tr.add_argument("--config", required=True, help="TOML/JSON file with a [train] table")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--reg-kind", choices=["poisson", "kl", "l1"], default=None)
    tr.add_argument("--beta", type=float, default=None)
    tr.add_argument("--no-cls", action="store_true", help="drop the presence classification loss")
    tr.add_argument("--no-reg", action="store_true", help="drop the count regression loss")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--split", choices=["train", "test"], default="test")
    ev.add_argument("--no-decoder", action="store_true", help="use per-row argmax instead of the decoder")
    ev.add_argument("--alg1-literal", action="store_true", help="use raw pmf-difference gains in the count decoder")
    ev.add_argument("--out", default=None, help="also write metrics JSON here")
    ev.set_defaults(func=cmd_eval)

    de = sub.add_parser("decode", help="decode expected counts into exact counts")
    de.add_argument("--in", dest="infile", required=True, help="JSON with lambdas and bag_size ('-' for stdin)")
    de.add_argument("--alg1-literal", action="store_true")
    de.add_argument("--out", default=None)
    de.set_defaults(func=cmd_decode)

    asg = sub.add_parser("assign", help="assign instance labels from probabilities and counts")
    asg.add_argument("--in", dest="infile", required=True, help="JSON with probs and counts ('-' for stdin)")
    asg.add_argument("--out", default=None)
    asg.set_defaults(func=cmd_assign)

    be = sub.add_parser("bench", help="run a scenario grid and aggregate metrics")
    be.add_argument("--config", required=True, help="TOML with [bench] and [[scenario]] entries (or a bundled name)")
    be.add_argument("--out", required=True, help="output directory")
    be.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    be.add_argument("--seed", type=int, default=None, help="base seed overriding every scenario")
    be.set_defaults(func=cmd_bench)

    return parser


def _setup_logging() -> None:
    raw = os.environ.get(LOG_ENV, "info").strip().lower()
    level = LOG_LEVELS.get(raw)
    if level is None:
        raise ConfigError(f"{LOG_ENV} must be one of {sorted(LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValidationError as exc:
        print(f"shape/validation error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"i/o error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
