"""Command-line entry point: ``contea {gen,train,run,eval,export}``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from contea.config import MODES, RunConfig
from contea.errors import ConfigError, ConteaError

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level_name = os.environ.get("CONTEA_LOG", "info").lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"CONTEA_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=LOG_LEVELS[level_name], format="%(levelname)s %(name)s: %(message)s", force=True)
    if level_name == "quiet":
        import warnings

        warnings.simplefilter("ignore")


def _snapshot_dirs(value: str) -> list:
    """Comma-separated directories, or one directory holding ``t0, t1, ..`` (optionally under ``snapshots/``)."""
    parts = [Path(p) for p in value.split(",") if p]
    if len(parts) == 1:
        root = parts[0]
        if (root / "snapshots").is_dir():
            root = root / "snapshots"
        numbered = sorted(
            (p for p in root.glob("t*") if p.is_dir() and p.name[1:].isdigit()),
            key=lambda p: int(p.name[1:]),
        )
        if numbered:
            return numbered
    return parts


def _config(args) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        config = RunConfig.from_file(args.config, config)
    config = config.with_overrides(getattr(args, "set", None) or [])
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    return config.replace(**changes)


@contextlib.contextmanager
def _thread_limit(n: int):
    with threadpool_limits(limits=n):
        yield


def cmd_gen(args) -> int:
    from contea.snapgen import GenSpec, write_benchmark

    fields = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"override {item!r} is not key=value")
        if key == "split":
            fields[key] = tuple(float(x) for x in value.split(","))
        elif key not in GenSpec.__dataclass_fields__:
            raise ConfigError(f"unknown generator key {key!r}")
        else:
            kind = GenSpec.__dataclass_fields__[key].type
            try:
                fields[key] = int(value) if kind == "int" else float(value)
            except ValueError:
                raise ConfigError(f"generator key {key!r} expects {kind}, got {value!r}") from None
    if args.seed is not None:
        fields["seed"] = args.seed
    spec = GenSpec(**fields)
    dirs = write_benchmark(spec, args.out)
    print(f"wrote {len(dirs)} snapshots under {Path(args.out) / 'snapshots'}")
    return 0


def cmd_train(args) -> int:
    from contea.continual import run_pipeline

    config = _config(args)
    dirs = _snapshot_dirs(args.snapshots)
    with _thread_limit(config.threads):
        record = run_pipeline(dirs[:1], config, out_dir=args.out)
    _print_record(record)
    return 0


def cmd_run(args) -> int:
    from contea.continual import run_pipeline

    config = _config(args)
    dirs = _snapshot_dirs(args.snapshots)
    with _thread_limit(config.threads):
        record = run_pipeline(dirs, config, out_dir=args.out)
    _print_record(record)
    return 0


def cmd_eval(args) -> int:
    from contea.evalkit import evaluate
    from contea.kg_store import load_snapshot
    from contea.matcher import read_alignment

    pair, aligns = load_snapshot(args.snapshots)
    predicted = read_alignment(args.alignment, pair.kg1, pair.kg2)
    m = evaluate(predicted, aligns.test)
    print(f"precision={m.precision:.6f} recall={m.recall:.6f} f1={m.f1:.6f} correct={m.correct_count} predicted={len(predicted)}")
    return 0


def cmd_export(args) -> int:
    from contea.continual import predict
    from contea.encoder import load_state
    from contea.kg_store import load_snapshot
    from contea.matcher import write_alignment

    config = _config(args)
    pair, aligns = load_snapshot(args.snapshots)
    state = load_state(args.checkpoint)
    with _thread_limit(config.threads):
        ta = predict(state, pair, aligns, config)
    write_alignment(args.out, ta, pair.kg1, pair.kg2)
    print(f"wrote {len(ta)} pairs to {args.out}")
    return 0


def _print_record(record) -> None:
    for s in record.snapshots:
        m = s.metrics
        ner = "NA" if m.new_entity_recall is None else f"{m.new_entity_recall:.3f}"
        print(f"t={s.t} mode={s.mode} P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f} "
              f"new_R={ner} |TA|={s.ta_size} train={s.train_time_s:.2f}s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contea", description="Continual entity alignment on growing KG pairs.")
    sub = parser.add_subparsers(dest="command", metavar="{gen,train,run,eval,export}")
    sub.required = True

    def common(p, mode=False):
        p.add_argument("--snapshots", required=True, help="snapshot dirs (comma-separated) or their parent")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("set", nargs="*", metavar="key=value", help="config overrides")
        if mode:
            p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("gen", help="write a synthetic growing benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("set", nargs="*", metavar="key=value", help="generator parameters")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on the first snapshot only")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="process a snapshot sequence")
    common(p, mode=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score an alignment TSV against a snapshot's test links")
    p.add_argument("--snapshots", required=True, help="one snapshot directory")
    p.add_argument("--alignment", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="search a checkpoint and write its alignment TSV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _setup_logging()
        return args.func(args)
    except ConteaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
