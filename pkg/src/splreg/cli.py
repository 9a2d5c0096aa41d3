"""Command line entry point: ``splreg {verify,train,analyze,report}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .metrics import MetricError, SeedScore, aggregate, report_csv, report_table
from .nets import save_checkpoint
from .runlog import RunLog, SchemaError, read_runlog, write_runlog
from .trainer import LOSS_TERMS, TrainingDivergence, run_training
from .verify import SUITES, run_suite

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def parse_seeds(text: str) -> list[int]:
    """``"0,3,5"``, ``"0-4"`` or a mix such as ``"0-2,7"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise CliError(f"bad seed list {text!r}") from None
    if not seeds:
        raise CliError("empty seed list")
    if len(set(seeds)) != len(seeds):
        raise CliError(f"duplicate seeds in {text!r}")
    return seeds


# -- verify ------------------------------------------------------------------

def cmd_verify(args) -> int:
    checks = run_suite(args.suite, args.seed)
    for check in checks:
        print(check.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else EXIT_FAILURE


# -- train -------------------------------------------------------------------

def _train_one(config: RunConfig, seed: int, out: Path) -> str:
    log = run_training(config.with_seed(seed))
    write_runlog(out / f"seed_{seed}.jsonl", log)
    save_checkpoint(out / f"seed_{seed}.ckpt", log.params)
    return f"seed {seed}: final return {log.returns()[-1]:.4f}, final effective rank {log.summary['final_effective_rank']:.3f}"


def cmd_train(args) -> int:
    try:
        config = load_config(args.config) if args.config else RunConfig()
        config = apply_overrides(config, args.override)
    except ConfigError as exc:
        raise CliError(f"invalid config: {exc}") from None
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(config.to_toml())
    manifest = {"config_sha256": config.digest(), "seeds": seeds, "version": __version__}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    try:
        if args.workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                lines = list(pool.map(_train_one, [config] * len(seeds), seeds, [out] * len(seeds)))
        else:
            lines = [_train_one(config, seed, out) for seed in seeds]
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for line in lines:
        print(line)
    return 0


# -- analyze -----------------------------------------------------------------

def _log_paths(items) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("*.jsonl"))
            if not found:
                raise CliError(f"{p}: no .jsonl run logs")
            paths.extend(found)
        elif p.is_file():
            paths.append(p)
        else:
            raise CliError(f"{p}: no such file or directory")
    return paths


def _csv_text(comments: list[str], header: list[str], rows) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return repr(float(x))


def _padded(values, d: int) -> list:
    return list(values[:d]) + [0.0] * max(d - len(values), 0)


def analyze_log(log: RunLog, source: str) -> dict[str, str]:
    """CSV texts for one run: effective rank, singular spectra, loss curves."""
    mons = log.monitors
    d = log.latent_dim
    er = _csv_text(
        [f"source: {source}", "one row per monitor event",
         "step: decision step; updates: gradient updates so far; effective_rank: exp(entropy of normalized singular values)"],
        ["step", "updates", "effective_rank"],
        ([m["step"], m["updates"], _num(m["effective_rank"])] for m in mons),
    )
    spectrum = _csv_text(
        [f"source: {source}",
         f"singular values of the {d}-dim latent features over all states, descending;"
         " zero-padded to d when there are fewer states than dimensions",
         "row i is the monitor event at decision step " + " ".join(str(m["step"]) for m in mons)],
        [f"s{j + 1}" for j in range(d)],
        ([_num(v) for v in _padded(m["singular_values"], d)] for m in mons),
    )
    loss = _csv_text(
        [f"source: {source}",
         "mean weighted loss terms over the updates since the previous monitor event"],
        ["step", "updates", *LOSS_TERMS],
        ([m["step"], m["updates"], *(_num(m["losses"][t]) for t in LOSS_TERMS)] for m in mons),
    )
    return {"effective_rank": er, "spectrum": spectrum, "loss": loss}


def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in _log_paths(args.logs):
        log = read_runlog(path)
        stem = f"{path.parent.name}_{path.stem}" if path.parent.name else path.stem
        for kind, text in analyze_log(log, path.name).items():
            target = out / f"{stem}_{kind}.csv"
            target.write_text(text)
            print(f"wrote {target}")
    return 0


# -- report ------------------------------------------------------------------

def _load_set(directory) -> list[RunLog]:
    return [read_runlog(p) for p in _log_paths([directory])]


def _scores(logs: list[RunLog]) -> dict[str, list[SeedScore]]:
    grouped: dict[str, list[SeedScore]] = {}
    for log in logs:
        grouped.setdefault(log.env_key(), []).append(SeedScore(log.seed, log.returns()))
    return grouped


def _stack(rows, what: str, name: str) -> np.ndarray:
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise CliError(f"{name}: runs disagree on the number of {what}")
    return np.array(rows)


def cmd_report(args) -> int:
    from .plotting import plot_curves

    if not args.baseline:
        raise CliError("report needs --baseline: normalized scores S^ are defined relative to the baseline mean")
    sets = {Path(args.baseline).name: _load_set(args.baseline)}
    for directory in args.variant:
        name = Path(directory).name
        if name in sets:
            raise CliError(f"duplicate run set name {name!r}")
        sets[name] = _load_set(directory)
    base_name = Path(args.baseline).name
    try:
        report = aggregate(
            {name: _scores(logs) for name, logs in sets.items()},
            _scores(sets[base_name]),
            last=args.last,
            resamples=args.resamples,
            seed=args.seed,
        )
    except MetricError as exc:
        raise CliError(str(exc), EXIT_FAILURE) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.csv").write_text(report_csv(report))
    table = report_table(report)
    (out / "aggregate.txt").write_text(table)
    print(table, end="")

    returns, ranks = {}, {}
    for name, logs in sets.items():
        steps = [c["step"] for c in logs[0].checkpoints]
        returns[name] = (steps, _stack([log.returns() for log in logs], "checkpoints", name))
        mon_steps, _ = logs[0].effective_ranks()
        ranks[name] = (mon_steps, _stack([log.effective_ranks()[1] for log in logs], "monitor events", name))
    plot_curves(out / "returns.svg", returns, "Evaluation return", "decision step", "discounted return")
    plot_curves(out / "effective_rank.svg", ranks, "Effective rank of latent features", "decision step",
                "effective rank")
    print(f"wrote {out / 'aggregate.csv'}, {out / 'returns.svg'}, {out / 'effective_rank.svg'}")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splreg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the randomized property suites")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train one run per seed and write JSONL logs")
    p.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    p.add_argument("--seeds", default="0", help="e.g. 0-4 or 0,2,5")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="CSV tables of effective rank, spectra and losses")
    p.add_argument("logs", nargs="+", help="run logs or directories of them")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="aggregate scores and SVG plots against a baseline")
    p.add_argument("--baseline", help="directory of baseline run logs")
    p.add_argument("--variant", action="append", default=[], help="directory of variant run logs, repeatable")
    p.add_argument("--out", required=True)
    p.add_argument("--last", type=int, default=10, help="checkpoints averaged per seed")
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"splreg: error: {exc}", file=sys.stderr)
        return exc.code
    except SchemaError as exc:
        print(f"splreg: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
