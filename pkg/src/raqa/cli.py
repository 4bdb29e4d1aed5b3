"""Command-line entry points tying the pipeline together.

Subcommands:
  synth        generate a synthetic corpus (train/dev/test JSONL + metadata)
  rationalize  generate per-choice rationales for a dataset
  train        fine-tune reasoning models (one checkpoint per seed)
  evaluate     run evaluation suites against a checkpoint
  stress       shorthand for evaluate --suite stress
  report       aggregate per-method reports into an NRG table

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .backends import (
    BackendError,
    BackendUnavailable,
    HTTPCompletionBackend,
    MockCompletionBackend,
    SyntheticOracleBackend,
)
from .data import (
    DatasetError,
    DatasetSplit,
    SyntheticScheme,
    generate_synthetic,
    load_dataset,
    save_dataset,
    write_split_manifest,
)
from .evaluate import (
    EvaluationError,
    ood_eval,
    oracle_eval,
    predict_split,
    stress_test,
    train_simulator,
)
from .metrics import MetricError, accuracy, las, nrg, save_predictions
from .model import ToyReasoner
from .prompts import PromptSpec
from .rationalize import (
    RationaleCache,
    load_rationales,
    rationalize_split,
    save_rationales,
)
from .runs import RunDirectory, RunError, resolve_config, write_method_csv, write_report
from .tokenizer import WordTokenizer
from .training import NonFiniteLoss, TrainConfig, TrainingError, train

logger = logging.getLogger("raqa")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3
EXIT_NUMERICAL = 4


def _backend_from_args(args) -> object:
    if getattr(args, "mock_backend", False):
        return MockCompletionBackend()
    if getattr(args, "synthetic_backend", None):
        meta = json.loads(Path(args.synthetic_backend).read_text(encoding="utf-8"))
        scheme = SyntheticScheme(**meta["scheme"])
        return SyntheticOracleBackend(scheme)
    if getattr(args, "backend_url", None):
        import os

        return HTTPCompletionBackend(
            args.backend_url, api_key=os.environ.get("RAQA_BACKEND_API_KEY")
        )
    raise BackendError(
        "no backend selected: use --backend-url, --mock-backend, or --synthetic-backend"
    )


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scheme = SyntheticScheme(
        n_choices=args.n_choices,
        vocab_size=args.vocab_size,
        silence_rate=args.silence_rate,
    )
    eval_scheme = SyntheticScheme(n_choices=args.n_choices, vocab_size=args.vocab_size)
    sizes = {"train": args.train, "dev": args.dev, "test": args.test}
    for offset, (name, size) in enumerate(sizes.items()):
        if size <= 0:
            continue
        split = generate_synthetic(
            size,
            args.n_choices,
            args.vocab_size,
            leak_mode=args.leak_mode,
            seed=args.seed + offset,
            gold_bias_prob=args.gold_bias,
            other_bias_prob=args.other_bias,
            misdirect_rate=args.misdirect_rate if name == "train" else 0.0,
            name=name,
            source_dataset=args.tag,
            id_prefix=f"{args.tag}-{name[:2]}",
            scheme=eval_scheme,
        )
        save_dataset(split, out / f"{name}.jsonl")
        write_split_manifest(split, out / f"{name}.manifest.json")
        print(f"wrote {name}: {len(split)} instances")
    meta = {
        "scheme": {
            "n_choices": scheme.n_choices,
            "vocab_size": scheme.vocab_size,
            "silence_rate": scheme.silence_rate,
        },
        "generation": {
            "seed": args.seed,
            "leak_mode": args.leak_mode,
            "gold_bias_prob": args.gold_bias,
            "other_bias_prob": args.other_bias,
            "misdirect_rate": args.misdirect_rate,
        },
    }
    (out / "corpus_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2), encoding="utf-8"
    )
    return EXIT_OK


def cmd_rationalize(args) -> int:
    split = load_dataset(args.dataset)
    spec = PromptSpec.from_file(args.prompt)
    backend = _backend_from_args(args)
    cache = RationaleCache(args.cache) if args.cache else None
    before = getattr(backend, "calls", None)
    rsets = rationalize_split(
        backend,
        spec,
        split,
        max_new_tokens=args.max_new_tokens,
        cache=cache,
        parallelism=args.parallelism,
        limit=args.limit,
    )
    save_rationales(rsets.values(), args.out)
    done = len(rsets)
    total = len(split)
    calls = None if before is None else getattr(backend, "calls") - before
    print(f"rationalized {done}/{total} instances" + (
        f" ({calls} backend completions)" if calls is not None else ""))
    return EXIT_OK


def _build_tokenizer(splits, rationale_maps) -> WordTokenizer:
    texts = []
    for split in splits:
        for inst in split.instances:
            texts.append(inst.question)
            texts.extend(inst.choices)
            if inst.annotated_rationale:
                texts.append(inst.annotated_rationale)
    for rmap in rationale_maps:
        if rmap:
            for rset in rmap.values():
                texts.extend(rset.rationales)
    return WordTokenizer.from_texts(texts)


def cmd_train(args) -> int:
    defaults = TrainConfig().to_dict()
    defaults.update({"d_model": 48, "max_len": 64, "seeds": [0, 1, 2, 3]})
    overrides = {
        "mode": args.mode,
        "epsilon": args.epsilon,
        "replace_rate": args.replace_rate,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
    }
    config = resolve_config(defaults, args.config, overrides)
    if args.seeds:
        config["seeds"] = [int(s) for s in args.seeds.split(",")]
    seeds = config["seeds"]

    train_split = load_dataset(args.train_data, name="train")
    dev_split = load_dataset(args.dev_data, name="dev") if args.dev_data else None
    rsets = load_rationales(args.rationales) if args.rationales else None
    dev_rsets = (
        load_rationales(args.dev_rationales) if args.dev_rationales else None
    )
    tokenizer = _build_tokenizer(
        [s for s in (train_split, dev_split) if s], [rsets, dev_rsets]
    )

    run = RunDirectory(args.out, "train", config, seeds)
    with run.locked():
        for seed in seeds:
            cfg = TrainConfig.from_dict(
                {
                    k: v
                    for k, v in config.items()
                    if k in TrainConfig().to_dict()
                }
            )
            cfg.seed = seed
            model = ToyReasoner(
                tokenizer,
                d_model=config["d_model"],
                max_len=config["max_len"],
                seed=seed,
            )
            model, log = train(
                model, train_split, rsets, cfg, dev=dev_split, dev_rationales=dev_rsets
            )
            ckpt = run.checkpoint_path(f"seed{seed}")
            model.save_checkpoint(ckpt)
            log.save(run.report_path(f"trainlog-seed{seed}.jsonl"))
            print(
                f"seed {seed}: best dev accuracy "
                f"{log.best_dev_accuracy:.4f} -> {ckpt}"
            )
    print(f"run directory: {run.path}")
    return EXIT_OK


def _load_models(checkpoints) -> list[ToyReasoner]:
    return [ToyReasoner.load_checkpoint(p) for p in checkpoints]


def cmd_evaluate(args) -> int:
    suites = [s.strip() for s in args.suite.split(",") if s.strip()]
    split = load_dataset(args.dataset, name=args.split_name)
    rsets = load_rationales(args.rationales) if args.rationales else None
    models = _load_models(args.checkpoints)
    report: dict = {"suites": suites, "n": len(split), "per_seed": []}
    spec = PromptSpec.from_file(args.prompt) if args.prompt else None
    backend = None
    if any(s in ("stress", "ood") for s in suites):
        backend = _backend_from_args(args)

    accs, drops, las_values = [], [], []
    for model in models:
        seed = model.seed
        entry: dict = {"seed": seed}
        preds = predict_split(model, split, rsets)
        if args.dump_predictions:
            save_predictions(
                preds, Path(args.out) / f"predictions-seed{seed}.jsonl"
            )
        if "accuracy" in suites:
            entry["accuracy"] = accuracy(preds)
            accs.append(entry["accuracy"])
        if "las" in suites:
            sim_split = load_dataset(args.simulator_data, name="train")
            sim_rsets = load_rationales(args.simulator_rationales)
            sim_preds = predict_split(model, sim_split, sim_rsets)
            simulator = train_simulator(
                sim_preds, sim_split.by_id(), seed=seed, base_model=model
            )
            entry["las"] = las(simulator, preds, split.by_id())
            las_values.append(entry["las"])
        if "stress" in suites:
            result = stress_test(
                model, backend, spec, split, seed=seed, clean_rationales=rsets
            )
            entry["stress"] = {
                "clean_accuracy": result.clean_accuracy,
                "perturbed_accuracy": result.perturbed_accuracy,
                "drop": result.drop,
            }
            drops.append(result.drop)
        if "oracle" in suites:
            result = oracle_eval(model, split, rsets)
            entry["oracle"] = {
                "oracle_accuracy": result.oracle_accuracy,
                "generated_accuracy": result.generated_accuracy,
                "delta": result.delta,
            }
        if "ood" in suites:
            target = load_dataset(args.ood_dataset, name="test")
            ood_report = ood_eval(model, target, backend, spec)
            entry["ood"] = ood_report.to_dict()
        report["per_seed"].append(entry)

    def stats(values):
        if not values:
            return None
        return {"mean": float(np.mean(values)), "std": float(np.std(values))}

    report["accuracy"] = stats(accs)
    report["las"] = stats(las_values)
    report["stress_drop"] = stats(drops)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.json", report)
    print(json.dumps({k: report[k] for k in ("accuracy", "las", "stress_drop")}))
    return EXIT_OK


def cmd_report(args) -> int:
    methods = {}
    for item in args.inputs:
        name, path = item.split("=", 1)
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        acc = payload.get("accuracy", {}) or {}
        las_stats = payload.get("las", {}) or {}
        if "mean" not in acc or "mean" not in las_stats:
            raise MetricError(
                f"report {path} lacks accuracy/las means needed for NRG"
            )
        methods[name] = (acc["mean"], las_stats["mean"])
    scores = nrg(methods)
    rows = [
        {
            "method": name,
            "accuracy": methods[name][0],
            "las": methods[name][1],
            "nrg": scores[name],
        }
        for name in methods
    ]
    write_method_csv(args.out, rows, ["method", "accuracy", "las", "nrg"])
    for row in rows:
        print(f"{row['method']}: nrg={row['nrg']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raqa")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--dev", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--n-choices", type=int, default=4)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--leak-mode", choices=["deterministic", "none"], default="deterministic")
    p.add_argument("--gold-bias", type=float, default=0.5)
    p.add_argument("--other-bias", type=float, default=0.5)
    p.add_argument("--misdirect-rate", type=float, default=0.0)
    p.add_argument("--silence-rate", type=float, default=0.0)
    p.add_argument("--tag", default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rationalize", help="generate choice-specific rationales")
    p.add_argument("--dataset", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache")
    p.add_argument("--backend-url")
    p.add_argument("--mock-backend", action="store_true")
    p.add_argument("--synthetic-backend", help="corpus_meta.json of a synth corpus")
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_rationalize)

    p = sub.add_parser("train", help="train reasoning models")
    p.add_argument("--config")
    p.add_argument("--train-data", required=True)
    p.add_argument("--dev-data")
    p.add_argument("--rationales")
    p.add_argument("--dev-rationales")
    p.add_argument("--out", default="runs")
    p.add_argument("--mode")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--replace-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate checkpoints")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split-name", default="test")
    p.add_argument("--rationales")
    p.add_argument("--suite", default="accuracy")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-predictions", action="store_true")
    p.add_argument("--prompt")
    p.add_argument("--backend-url")
    p.add_argument("--mock-backend", action="store_true")
    p.add_argument("--synthetic-backend")
    p.add_argument("--simulator-data")
    p.add_argument("--simulator-rationales")
    p.add_argument("--ood-dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stress", help="sensitivity stress test")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split-name", default="test")
    p.add_argument("--rationales", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-predictions", action="store_true")
    p.add_argument("--prompt", required=True)
    p.add_argument("--backend-url")
    p.add_argument("--mock-backend", action="store_true")
    p.add_argument("--synthetic-backend")
    p.add_argument("--simulator-data")
    p.add_argument("--simulator-rationales")
    p.add_argument("--ood-dataset")
    p.set_defaults(func=cmd_evaluate, suite="stress")

    p = sub.add_parser("report", help="aggregate method reports into an NRG table")
    p.add_argument("--inputs", nargs="+", required=True, help="name=report.json pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (BackendUnavailable, BackendError) as exc:
        logger.error("backend error: %s", exc)
        return EXIT_BACKEND
    except NonFiniteLoss as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (DatasetError, EvaluationError, MetricError, TrainingError, RunError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except FileNotFoundError as exc:
        logger.error("missing file: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
