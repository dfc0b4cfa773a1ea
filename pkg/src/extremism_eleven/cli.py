"""Command line entry point: ``e11 <stage> --config run.toml``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .corpus import RecordError
from .embedder import ProviderError
from .itembank import ItemBankError
from .pipeline import REPORTS, DataError, DependencyError, emit_report, run_all, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("extremism_eleven")


def parse_offsets(text: str) -> list[int]:
    """``"8"``, ``"0..12"`` or ``"12,6,3"``; returned in descending order."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            values = range(lo, hi + 1)
        else:
            values = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad offsets {text!r}") from None
    values = sorted(set(values), reverse=True)
    if not values or values[-1] < 0 or values[0] > 12:
        raise argparse.ArgumentTypeError("months-before offsets must lie in 0..12")
    return values


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run config")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--provider", choices=["stub", "http", "cache"], help="embedding provider")
    p.add_argument("--output", type=Path, help="override paths.output")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="e11", description="Extremist Eleven scoring pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("ingest", "filter posts and build user timelines"),
                        ("score", "posts x items cosine score matrix"),
                        ("profile", "forum profiles and group t-tests"),
                        ("trend", "LOESS trajectories aligned to t0")):
        _common(sub.add_parser(name, help=help_))

    efa = sub.add_parser("efa", help="factor analysis")
    efa_sub = efa.add_subparsers(dest="efa_command", required=True)
    _common(efa_sub.add_parser("fit", help="diagnostics, parallel analysis, PAF + rotation"))
    _common(efa_sub.add_parser("score", help="regression-method factor scores"))

    fc = sub.add_parser("forecast", help="months-before AUC sweep")
    _common(fc)
    fc.add_argument("--months-before", type=parse_offsets, metavar="N|A..B|A,B",
                    help="offsets in months before t0 (0..12)")
    fc.add_argument("--folds", type=int, help="stratified CV folds")

    rp = sub.add_parser("report", help="plot-ready CSV + JSON sidecar")
    _common(rp)
    rp.add_argument("kind", choices=REPORTS)

    allp = sub.add_parser("all", help="run every stage, then the reports")
    _common(allp)

    syn = sub.add_parser("synth", help="write a synthetic corpus and matching config")
    syn.add_argument("outdir", type=Path)
    syn.add_argument("--posts", type=int, default=10_000)
    syn.add_argument("--users", type=int, default=200)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _configure(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.forecast.seed = args.seed
    if args.provider:
        cfg.embedder.kind = args.provider
    if args.output:
        cfg.paths.output = str(args.output.resolve())
    if getattr(args, "months_before", None):
        cfg.forecast.offsets = args.months_before
    if getattr(args, "folds", None) is not None:
        cfg.forecast.folds = args.folds
    return cfg


def write_synthetic(outdir: Path, n_posts: int, n_users: int, seed: int) -> Path:
    from .corpus import write_posts
    from .itembank import load_item_bank
    from .synth import synthetic_corpus

    outdir.mkdir(parents=True, exist_ok=True)
    posts, forums = synthetic_corpus(load_item_bank(), n_posts=n_posts, n_users=n_users, seed=seed)
    write_posts(outdir / "corpus.jsonl", posts)
    banned = sorted(f for f, m in forums.items() if m["banned"] is True)
    open_ = sorted(f for f, m in forums.items() if m["banned"] is False)
    target = sorted(f for f, m in forums.items() if m["target"])
    cfg = outdir / "run.toml"
    cfg.write_text(
        f"seed = {seed}\n\n"
        "[paths]\ncorpus = [\"corpus.jsonl\"]\noutput = \"out\"\n\n"
        "[embedder]\nkind = \"stub\"\ndim = 256\n\n"
        f"[cohorts]\ntarget_forums = {target!r}\njoiner_min_posts = 5\njoiner_min_active_months = 0\n"
        "control_min_posts = 5\n\n"
        f"[profile]\nbanned_forums = {banned!r}\nnot_banned_forums = {open_!r}\n".replace("'", '"'),
        encoding="utf-8")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            path = write_synthetic(args.outdir, args.posts, args.users, args.seed)
            print(path)
            return EXIT_OK
        cfg = _configure(args)
        if args.command == "efa":
            run_stage(f"efa-{args.efa_command}", cfg)
        elif args.command == "report":
            for path in emit_report(args.kind, cfg):
                print(path)
        elif args.command == "all":
            run_all(cfg)
        else:
            run_stage(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DependencyError, ProviderError) as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (DataError, RecordError, ItemBankError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
