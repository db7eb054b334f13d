"""Metric samples, percentile reporting and artifact writers."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

KINDS = ("startup_latency", "round_time", "recovery_time", "migration_count", "pool_hit")
POLICY_LABELS = ("swiftbot", "local_warm", "cold_start", "fedavg_baseline")
CSV_HEADER = ("kind", "value", "policy", "arrival_rate", "round", "node", "time_s")


@dataclass(frozen=True)
class MetricSample:
    kind: str
    value: float
    policy: str
    arrival_rate: float | None = None
    round: int | None = None
    node: str | None = None
    time_s: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.policy not in POLICY_LABELS:
            raise ValueError(f"unknown policy label {self.policy!r}")
        if not self.value >= 0:
            raise ValueError(f"{self.kind} value must be >= 0, got {self.value}")

    def row(self) -> list[str]:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return f"{x:.6f}"
            return str(x)

        return [self.kind, fmt(float(self.value)), self.policy, fmt(self.arrival_rate),
                fmt(self.round), fmt(self.node), fmt(self.time_s)]


def write_csv(samples: Iterable[MetricSample], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in samples:
        w.writerow(s.row())


def csv_text(samples: Iterable[MetricSample]) -> str:
    buf = io.StringIO()
    write_csv(samples, buf)
    return buf.getvalue()


def read_csv(fh) -> list[MetricSample]:
    out = []
    for rec in csv.DictReader(fh):
        out.append(
            MetricSample(
                rec["kind"],
                float(rec["value"]),
                rec["policy"],
                float(rec["arrival_rate"]) if rec["arrival_rate"] else None,
                int(rec["round"]) if rec["round"] else None,
                rec["node"] or None,
                float(rec["time_s"]) if rec["time_s"] else None,
            )
        )
    return out


def write_jsonl(records: Iterable[dict], fh) -> None:
    for r in records:
        fh.write(json.dumps(r, sort_keys=True) + "\n")


# -- statistics ----------------------------------------------------------------


def nearest_rank(values: Sequence[float], p: float) -> float | None:
    """Value at rank ceil(p * n) of the sorted sample; None for an empty sample."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(p * len(ordered) - 1e-9))
    return ordered[rank - 1]


def cdf_points(values: Sequence[float], resolution_s: float = 0.001) -> list[tuple[float, float]]:
    """Empirical CDF evaluated on a grid of ``resolution_s`` steps covering the sample."""
    if not values:
        return []
    ordered = sorted(values)
    n = len(ordered)
    lo = math.floor(ordered[0] / resolution_s)
    hi = math.ceil(ordered[-1] / resolution_s)
    out = []
    i = 0
    for step in range(lo, hi + 1):
        x = step * resolution_s
        while i < n and ordered[i] <= x + 1e-12:
            i += 1
        out.append((round(x, 9), i / n))
    return out


def _cell_key(s: MetricSample):
    return (s.kind, s.policy, s.arrival_rate if s.arrival_rate is not None else -1.0)


@dataclass(frozen=True)
class CellSummary:
    kind: str
    policy: str
    arrival_rate: float | None
    count: int
    p50: float | None
    p99: float | None
    mean: float | None


@dataclass(frozen=True)
class RoundSummary:
    policy: str
    rounds: int
    median: float | None
    q1: float | None
    q3: float | None

    @property
    def iqr(self) -> float | None:
        return None if self.q1 is None else self.q3 - self.q1


@dataclass
class Report:
    cells: list[CellSummary]
    rounds: list[RoundSummary]
    cdfs: dict[tuple[str, float | None], list[tuple[float, float]]]

    def cell(self, kind: str, policy: str, rate: float | None = None) -> CellSummary | None:
        for c in self.cells:
            if c.kind == kind and c.policy == policy and c.arrival_rate == rate:
                return c
        return None


def report(samples: Iterable[MetricSample], requested: Iterable[tuple[str, str, float | None]] = ()) -> Report:
    """Summaries per (kind, policy, arrival rate); requested cells without samples come back absent."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    labels: dict[tuple, MetricSample] = {}
    for s in samples:
        k = _cell_key(s)
        groups[k].append(s.value)
        labels.setdefault(k, s)
    cells = []
    for k in sorted(groups):
        vals = groups[k]
        s = labels[k]
        cells.append(
            CellSummary(s.kind, s.policy, s.arrival_rate, len(vals), nearest_rank(vals, 0.5),
                        nearest_rank(vals, 0.99), sum(vals) / len(vals))
        )
    for kind, policy, rate in requested:
        key = (kind, policy, rate if rate is not None else -1.0)
        if key not in groups:
            cells.append(CellSummary(kind, policy, rate, 0, None, None, None))
    rounds = []
    cdfs = {}
    for k in sorted(groups):
        kind, policy, _ = k
        s = labels[k]
        if kind == "round_time":
            v = groups[k]
            rounds.append(RoundSummary(policy, len(v), nearest_rank(v, 0.5), nearest_rank(v, 0.25), nearest_rank(v, 0.75)))
        elif kind == "startup_latency":
            cdfs[(policy, s.arrival_rate)] = cdf_points(groups[k])
    return Report(cells, rounds, cdfs)


def _ms(x: float | None) -> str:
    return "absent" if x is None else f"{x * 1000:.1f}"


def _s(x: float | None) -> str:
    return "absent" if x is None else f"{x:.2f}"


def summary_text(rep: Report) -> str:
    lines = ["# startup latency (ms, nearest rank)", f"{'policy':<16}{'rate':>8}{'n':>8}{'p50':>10}{'p99':>10}"]
    for c in rep.cells:
        if c.kind != "startup_latency":
            continue
        rate = "-" if c.arrival_rate is None else f"{c.arrival_rate:g}"
        lines.append(f"{c.policy:<16}{rate:>8}{c.count:>8}{_ms(c.p50):>10}{_ms(c.p99):>10}")
    other = [c for c in rep.cells if c.kind in ("recovery_time", "migration_count", "pool_hit")]
    if other:
        lines += ["", "# counters and recovery", f"{'kind':<18}{'policy':<16}{'rate':>8}{'n':>8}{'sum/p50':>12}"]
        for c in other:
            rate = "-" if c.arrival_rate is None else f"{c.arrival_rate:g}"
            val = c.p50 if c.kind == "recovery_time" else (None if c.mean is None else c.mean * c.count)
            lines.append(f"{c.kind:<18}{c.policy:<16}{rate:>8}{c.count:>8}{_s(val):>12}")
    if rep.rounds:
        lines += ["", "# round time (s)", f"{'policy':<16}{'rounds':>8}{'median':>10}{'q1':>10}{'q3':>10}{'iqr':>10}"]
        for r in rep.rounds:
            lines.append(f"{r.policy:<16}{r.rounds:>8}{_s(r.median):>10}{_s(r.q1):>10}{_s(r.q3):>10}{_s(r.iqr):>10}")
    return "\n".join(lines) + "\n"


def write_cdf(rep: Report, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("policy", "arrival_rate", "latency_ms", "fraction"))
    for (policy, rate), pts in sorted(rep.cdfs.items(), key=lambda kv: (kv[0][0], kv[0][1] or -1.0)):
        for x, f in pts:
            w.writerow((policy, "" if rate is None else f"{rate:g}", f"{x * 1000:.0f}", f"{f:.6f}"))
