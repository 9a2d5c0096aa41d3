"""Evaluation metrics: temporal mean return, baseline-normalized score, IQM,
and percentile-bootstrap confidence intervals.

Scores are grouped by task (an environment key). Normalization always uses the
baseline runs of the same task, and aggregates pool the (task, seed) pairs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_CHECKPOINTS = 50
DEFAULT_LAST = 10
AGGREGATION_NOTE = "aggregate = mean over (task, seed) pairs; CI = seed bootstrap stratified by task"


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SeedScore:
    """Per-checkpoint evaluation returns of one seed."""

    seed: int
    returns: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=np.float64)
        if r.ndim != 1 or r.size == 0:
            raise MetricError("returns must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(r)):
            raise MetricError(f"seed {self.seed}: non-finite checkpoint return")
        object.__setattr__(self, "returns", r)

    @property
    def checkpoints(self) -> int:
        return self.returns.size


def average_return(scores, last: int = DEFAULT_LAST) -> float:
    """Mean of the final ``last`` checkpoint returns."""
    r = scores.returns if isinstance(scores, SeedScore) else np.asarray(scores, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise MetricError("need a non-empty 1-D sequence of returns")
    if not 1 <= last <= r.size:
        raise MetricError(f"cannot average the last {last} of {r.size} checkpoints")
    return float(np.mean(r[-last:]))


def normalized_score(score: float, baseline_scores) -> float:
    """``1 + (S - mean(base)) / |mean(base)|``; valid for negative baselines too."""
    base = np.asarray(baseline_scores, dtype=np.float64)
    if base.size == 0:
        raise MetricError("normalized score needs at least one baseline score")
    mean = float(np.mean(base))
    if mean == 0.0:
        raise MetricError("baseline mean is zero; the normalized score is undefined")
    return 1.0 + (float(score) - mean) / abs(mean)


def iqm_weights(n: int) -> np.ndarray:
    """Weights on the sorted sample that give the interquartile mean.

    Item ``i`` covers ``[i, i+1)`` on the rank axis; the IQM averages over
    ``[n/4, 3n/4]``, so boundary items count fractionally when ``n % 4 != 0``.
    """
    if n < 4:
        raise MetricError(f"IQM needs at least 4 values, got {n}")
    lo, hi = n / 4.0, 3.0 * n / 4.0
    edges = np.arange(n + 1, dtype=np.float64)
    overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return overlap / (hi - lo)


def iqm(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return float(v @ iqm_weights(v.size))


def _statistic_rows(samples: np.ndarray, statistic: str) -> np.ndarray:
    if statistic == "mean":
        return samples.mean(axis=1)
    if statistic == "iqm":
        return np.sort(samples, axis=1) @ iqm_weights(samples.shape[1])
    raise MetricError(f"unknown statistic {statistic!r}")


def _percentiles(stats: np.ndarray, level: float) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise MetricError(f"confidence level must lie in (0, 1), got {level}")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def bootstrap_ci(values, resamples: int = 10_000, level: float = 0.95, seed: int = 0,
                 statistic: str = "mean") -> tuple[float, float]:
    """Percentile bootstrap interval of ``statistic`` over the given values.

    A single value has no sampling spread; its interval is the point itself.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise MetricError("bootstrap of an empty sample")
    if v.size == 1:
        return float(v[0]), float(v[0])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(resamples, v.size))
    return _percentiles(_statistic_rows(v[idx], statistic), level)


def stratified_bootstrap_ci(groups: Sequence, resamples: int = 10_000, level: float = 0.95,
                            seed: int = 0, statistic: str = "mean") -> tuple[float, float]:
    """Bootstrap that resamples within each group and pools the draws."""
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if not groups or any(g.size == 0 for g in groups):
        raise MetricError("stratified bootstrap needs non-empty groups")
    if len(groups) == 1:
        return bootstrap_ci(groups[0], resamples, level, seed, statistic)
    if all(g.size == 1 for g in groups):
        pooled = np.concatenate(groups)
        point = float(_statistic_rows(pooled[None, :], statistic)[0])
        return point, point
    rng = np.random.default_rng(seed)
    draws = [g[rng.integers(0, g.size, size=(resamples, g.size))] for g in groups]
    return _percentiles(_statistic_rows(np.concatenate(draws, axis=1), statistic), level)


@dataclass
class VariantSummary:
    name: str
    tasks: list
    seeds: list
    raw: np.ndarray
    normalized: np.ndarray
    mean: float
    iqm: float | None
    ci: tuple

    def __post_init__(self):
        lo, hi = self.ci
        if not lo - 1e-12 <= self.mean <= hi + 1e-12:
            raise MetricError(f"{self.name}: CI [{lo}, {hi}] excludes the point estimate {self.mean}")


@dataclass
class AggregateReport:
    variants: list = field(default_factory=list)
    last: int = DEFAULT_LAST
    level: float = 0.95
    resamples: int = 10_000

    def by_name(self, name: str) -> VariantSummary:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)


def aggregate(
    variants: Mapping[str, Mapping[str, Sequence[SeedScore]]],
    baseline: Mapping[str, Sequence[SeedScore]],
    last: int = DEFAULT_LAST,
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> AggregateReport:
    """Normalize every variant against the baseline of the same task and summarize.

    ``variants`` maps a variant name to ``{task: [SeedScore, ...]}``;
    ``baseline`` is ``{task: [SeedScore, ...]}``.
    """
    if not baseline:
        raise MetricError("a baseline run set is required: normalized scores divide by the baseline mean")
    base_raw = {task: [average_return(s, last) for s in runs] for task, runs in baseline.items()}
    report = AggregateReport(last=last, level=level, resamples=resamples)
    for name, per_task in variants.items():
        tasks, seeds, raw, groups = [], [], [], []
        for task in sorted(per_task):
            if task not in base_raw:
                raise MetricError(f"variant {name!r}: no baseline runs for task {task}")
            scores = [average_return(s, last) for s in per_task[task]]
            normed = [normalized_score(x, base_raw[task]) for x in scores]
            tasks.extend([task] * len(scores))
            seeds.extend(s.seed for s in per_task[task])
            raw.extend(scores)
            groups.append(normed)
        normalized = np.concatenate([np.asarray(g) for g in groups]) if groups else np.zeros(0)
        if normalized.size == 0:
            raise MetricError(f"variant {name!r} has no runs")
        report.variants.append(VariantSummary(
            name=name,
            tasks=tasks,
            seeds=seeds,
            raw=np.asarray(raw),
            normalized=normalized,
            mean=float(normalized.mean()),
            iqm=iqm(normalized) if normalized.size >= 4 else None,
            ci=stratified_bootstrap_ci(groups, resamples, level, seed),
        ))
    return report


REPORT_COLUMNS = ("variant", "runs", "raw_mean", "normalized_mean", "normalized_iqm", "ci_lower", "ci_upper")


def _rows(report: AggregateReport):
    for v in report.variants:
        yield [
            v.name,
            len(v.seeds),
            f"{v.raw.mean():.6f}",
            f"{v.mean:.6f}",
            "" if v.iqm is None else f"{v.iqm:.6f}",
            f"{v.ci[0]:.6f}",
            f"{v.ci[1]:.6f}",
        ]


def report_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    buf.write(f"# average return over the last {report.last} checkpoints; normalized against the baseline\n")
    buf.write(f"# {AGGREGATION_NOTE}; {report.level:.0%} percentile bootstrap, {report.resamples} resamples\n")
    buf.write("# normalized_iqm is empty when fewer than 4 runs are available\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(_rows(report))
    return buf.getvalue()


def report_table(report: AggregateReport) -> str:
    header = ["variant", "runs", "raw", "norm. mean", "norm. IQM", f"{report.level:.0%} CI"]
    body = []
    for v in report.variants:
        body.append([
            v.name,
            str(len(v.seeds)),
            f"{v.raw.mean():.3f}",
            f"{v.mean:.2f}",
            "-" if v.iqm is None else f"{v.iqm:.2f}",
            f"[{v.ci[0]:.2f}, {v.ci[1]:.2f}]",
        ])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in body]
    lines = [line.rstrip() for line in lines]
    lines.append(AGGREGATION_NOTE)
    return "\n".join(lines) + "\n"
