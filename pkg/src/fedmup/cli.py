"""Command-line entry point: ``fedmup {gen,run,score,eval}``.

Exit codes: 0 success / all requests granted, 1 usage or configuration
error, 2 at least one request denied, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as config_mod
from .config import ConfigError
from .dataset import (
    CLASS_NAMES,
    FEATURE_COLUMNS,
    Dataset,
    DatasetError,
    FeatureRecord,
    GeneratorConfig,
    SplitSpec,
    load_csv,
    parse_mix,
    save_csv,
    split,
    synthesize,
)
from .fed import GlobalModel, evaluate_global, run_experiment, save_experiment
from .gate import ScoredRequest, score_requests, write_decision_log
from .metrics import confusion
from .model import FingerprintMismatch, load_checkpoint, predict
from .seeding import derive_seed
from .ube import AccessRequest, SecurityThresholds, load_knowledge_base

EXIT_OK, EXIT_USAGE, EXIT_DENIED, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("fedmup")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means "denied" here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {path} not found")
    return p


# --- gen -----------------------------------------------------------------------

def cmd_gen(args) -> int:
    gen_cfg = GeneratorConfig.load(_existing(args.config, "generator config")) if args.config else None
    seed = args.seed if args.seed is not None else (gen_cfg.seed if gen_cfg and gen_cfg.seed is not None else 42)
    if args.mix is not None:
        mix = parse_mix(args.mix)
    elif gen_cfg is not None and gen_cfg.mix is not None:
        mix = gen_cfg.mix
    else:
        mix = (0.3, 0.5, 0.2)
    if args.n < 1:
        raise UsageError("--n must be positive")
    data = synthesize(args.n, seed, mix, gen_cfg)
    save_csv(data, args.out)
    counts = data.class_counts()
    print(f"wrote {len(data)} records to {args.out}")
    for code, count in counts.items():
        print(f"  class {code} ({CLASS_NAMES[code]}): {count}")
    return EXIT_OK


# --- run -----------------------------------------------------------------------

RUN_FLAGS = {
    "users": int, "k": int, "rounds": int, "epochs": int, "batch_size": int,
    "learning_rate": float, "beta1": float, "beta2": float, "epsilon": float,
    "train_fraction": float, "variant": str, "seed": int, "data": str, "n": int,
    "gen_seed": int, "mix": str, "generator": str, "results": str, "checkpoint": str,
    "figure": str, "thr_attack": float, "thr_freq": float,
}


def _load_data(cfg: config_mod.ExperimentConfig) -> Dataset:
    if cfg.data:
        return load_csv(_existing(cfg.data, "dataset"))
    gen_cfg = GeneratorConfig.load(_existing(cfg.generator, "generator config")) if cfg.generator else None
    return synthesize(cfg.n, cfg.generator_seed, parse_mix(cfg.mix), gen_cfg)


def _figure_path(cfg: config_mod.ExperimentConfig) -> Path | None:
    if cfg.figure is None:
        return Path(cfg.results).with_suffix(".png")
    if cfg.figure.lower() in ("", "none", "off"):
        return None
    return Path(cfg.figure)


def cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in RUN_FLAGS}
    overrides["parallel"] = args.parallel
    if args.no_figure:
        overrides["figure"] = "none"
    cfg = config_mod.resolve(args.config, overrides)
    data = _load_data(cfg)
    rc = cfg.round_config()
    started = time.perf_counter()
    if cfg.parallel:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            result = run_experiment(rc, data, executor=pool)
    else:
        result = run_experiment(rc, data)
    elapsed = time.perf_counter() - started
    save_experiment(
        result, cfg.results, cfg.checkpoint,
        master_seed=str(cfg.seed), train_fraction=repr(cfg.train_fraction),
    )
    final = result.reports[-1]
    print(f"{len(result.reports)} rounds, {cfg.users} users ({cfg.k} per round), {cfg.epochs} local epochs, "
          f"variant {cfg.variant}")
    print(f"round 0 (untrained): accuracy {result.initial.accuracy:.4f} loss {result.initial.mean_global_loss:.4f}")
    print(f"final round {final.round_index}: success rate {100 * final.accuracy:.2f}% "
          f"precision {final.precision:.4f} recall {final.recall:.4f} f1 {final.f1:.4f} "
          f"loss {final.mean_global_loss:.4f}")
    print(f"time {elapsed:.1f}s; results -> {cfg.results}; checkpoint -> {cfg.checkpoint}")
    fig = _figure_path(cfg)
    if fig is not None:
        from .plots import plot_rounds

        plot_rounds(result.reports, fig, initial=result.initial,
                    title=f"{cfg.variant.upper()} u_k={cfg.k} of {cfg.users}, local epochs {cfg.epochs}")
        print(f"figure -> {fig}")
    return EXIT_OK


# --- score ---------------------------------------------------------------------

REQUEST_HEADER = ("user_id", "category_id", "data_id", "timestamp") + FEATURE_COLUMNS


def _parse_features(text: str) -> FeatureRecord:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--features must be {len(FEATURE_COLUMNS)} comma-separated numbers") from None
    if len(values) != len(FEATURE_COLUMNS):
        raise UsageError(f"--features needs {len(FEATURE_COLUMNS)} values ({','.join(FEATURE_COLUMNS)})")
    return FeatureRecord.from_features(values)


def load_requests(path: str | Path) -> list[ScoredRequest]:
    """Requests CSV: ``user_id,category_id,data_id,timestamp`` plus the 12 raw feature columns."""
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(REQUEST_HEADER):
            raise UsageError(f"{path}: request header must be {','.join(REQUEST_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                req = AccessRequest(row["user_id"].strip(), row["data_id"].strip(),
                                    row["category_id"].strip(), int(row["timestamp"]))
                feats = FeatureRecord.from_features([float(row[c]) for c in FEATURE_COLUMNS])
            except ValueError as exc:
                raise UsageError(f"{path}:{line_no}: malformed request ({exc})") from None
            out.append(ScoredRequest(req, feats))
    return out


def _single_request(args) -> ScoredRequest:
    missing = [flag for flag, v in (("--user", args.user), ("--data-id", args.data_id),
                                    ("--category", args.category), ("--time", args.time),
                                    ("--features", args.features)) if v is None]
    if missing:
        raise UsageError(f"give --requests FILE or all of --user --data-id --category --time --features "
                         f"(missing {' '.join(missing)})")
    if args.time < 0:
        raise UsageError("--time must be non-negative")
    return ScoredRequest(AccessRequest(args.user, args.data_id, args.category, args.time),
                         _parse_features(args.features))


def cmd_score(args) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    kb = load_knowledge_base(_existing(args.kb, "knowledge base"))
    requests = load_requests(_existing(args.requests, "requests file")) if args.requests else [_single_request(args)]
    thresholds = SecurityThresholds(args.thr_attack, args.thr_freq)
    decisions = score_requests(requests, kb, GlobalModel.from_checkpoint(ckpt), thresholds,
                               lookback=args.lookback, record_denials=not args.no_record_denials)
    for d in decisions:
        a = d.assessment
        print(f"{d.request.user_id} {d.request.data_id}: {d.verdict.value.upper()} ({d.reason.value}) "
              f"predicted={CLASS_NAMES[d.predicted_class]} sigma={a.sigma_total} "
              f"[history={a.sigma_history} authorized={a.sigma_authorized} attack={a.sigma_attack} "
              f"leak={a.sigma_leak}] attack_factor={a.attack_factor:.3f} leak_frequency={a.leak_frequency:.3f}")
    if args.log:
        write_decision_log(decisions, args.log)
    return EXIT_DENIED if any(d.denied for d in decisions) else EXIT_OK


# --- eval ----------------------------------------------------------------------

def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    model = GlobalModel.from_checkpoint(ckpt)
    raw = load_csv(_existing(args.data, "dataset"))
    if len(raw) == 0:
        raise UsageError(f"{args.data} holds no records")
    if model.stats is None:
        raise UsageError("checkpoint carries no normalization stats")
    data = Dataset(model.stats.apply(raw.features), raw.labels, model.stats)
    if args.split != "all":
        seed = args.seed if args.seed is not None else int(ckpt.extra.get("master_seed", 42))
        fraction = float(ckpt.extra.get("train_fraction", 0.8))
        train, test = split(data, SplitSpec(fraction, derive_seed(seed, "split")))
        data = train if args.split == "train" else test
    report, test_loss = evaluate_global(model.params, model.spec, data)
    print(f"n={len(data)} accuracy={report.accuracy!r} precision={report.precision!r} "
          f"recall={report.recall!r} f1={report.f1!r} loss={test_loss!r}")
    if args.figure:
        from .plots import plot_confusion

        cm = confusion(data.labels, predict(model.params, model.spec, data.features))
        plot_confusion(cm, args.figure, title=f"{args.split} split, n={len(data)}")
        print(f"figure -> {args.figure}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedmup", description="Federated malicious-user prediction simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic labelled dataset CSV")
    g.add_argument("--n", type=int, default=10000)
    g.add_argument("--seed", type=int)
    g.add_argument("--mix", help="class ratios malicious,non_malicious,unknown (default 0.3,0.5,0.2)")
    g.add_argument("--config", help="generator key-value file")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run a federated training experiment")
    r.add_argument("--config", help="experiment key-value file; flags override it")
    r.add_argument("--users", type=int, help="total clients n (default 10)")
    r.add_argument("--k", type=int, help="participants per round (default 10)")
    r.add_argument("--rounds", type=int, help="communication rounds T (default 50)")
    r.add_argument("--epochs", type=int, help="local epochs per round (default 90)")
    r.add_argument("--batch-size", dest="batch_size", type=int)
    r.add_argument("--lr", dest="learning_rate", type=float)
    r.add_argument("--beta1", type=float)
    r.add_argument("--beta2", type=float)
    r.add_argument("--eps", dest="epsilon", type=float)
    r.add_argument("--train-fraction", dest="train_fraction", type=float)
    r.add_argument("--variant", type=str.lower, choices=["afed", "dfed"])
    r.add_argument("--seed", type=int, help="master seed (default 42)")
    r.add_argument("--data", help="dataset CSV; omitted means synthesize")
    r.add_argument("--n", type=int, help="synthetic record count (default 10000)")
    r.add_argument("--gen-seed", dest="gen_seed", type=int, help="synthetic data seed (default: master seed)")
    r.add_argument("--mix")
    r.add_argument("--generator", help="generator key-value file")
    r.add_argument("--results", help="per-round CSV (default results.csv)")
    r.add_argument("--checkpoint", help="final model checkpoint (default model.ckpt)")
    r.add_argument("--figure", help="round figure path (default: results path with .png)")
    r.add_argument("--no-figure", action="store_true")
    r.add_argument("--thr-attack", dest="thr_attack", type=float)
    r.add_argument("--thr-freq", dest="thr_freq", type=float)
    r.add_argument("--parallel", type=int, nargs="?", const=os.cpu_count() or 1,
                   help="train clients in N worker processes")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="grant or deny access requests")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--kb", required=True, help="knowledge-base CSV")
    s.add_argument("--requests", help="requests CSV")
    s.add_argument("--user")
    s.add_argument("--data-id", dest="data_id")
    s.add_argument("--category")
    s.add_argument("--time", type=int)
    s.add_argument("--features", help=f"{len(FEATURE_COLUMNS)} raw values: {','.join(FEATURE_COLUMNS)}")
    s.add_argument("--lookback", type=int, help="history window length (default: all history)")
    s.add_argument("--thr-attack", dest="thr_attack", type=float, default=0.5)
    s.add_argument("--thr-freq", dest="thr_freq", type=float, default=0.3)
    s.add_argument("--log", help="decision log CSV")
    s.add_argument("--no-record-denials", action="store_true",
                   help="do not add denied requests to the in-memory history")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="score a checkpoint on a labelled CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["all", "train", "test"], default="all",
                   help="re-derive the run's split from the checkpoint's master seed")
    e.add_argument("--seed", type=int, help="override the master seed stored in the checkpoint")
    e.add_argument("--figure", help="write a confusion-matrix figure")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, FingerprintMismatch) as exc:
        print(f"fedmup {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"fedmup {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fedmup {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"fedmup {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
