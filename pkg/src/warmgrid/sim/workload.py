"""Task arrival streams: seeded Poisson generation and trace replay.

Trace format, one task per line (``#`` starts a comment)::

    arrival_time_s,task_id,task_class[,key=value ...]
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..decomposer import TaskSpec

NOISE_SLOTS = 16


class TraceParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class TaskArrival:
    time: float
    spec: TaskSpec
    origin: float  # uniform draw in [0, 1); the cluster maps it onto a node
    startup_noise: tuple[float, ...]  # standard normals, one per subtask slot
    duration_noise: tuple[float, ...]


def _noise(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal((n, NOISE_SLOTS)), rng.standard_normal((n, NOISE_SLOTS))


def poisson_workload(seed: int, rate: float, tasks: int, mix: Mapping[str, float]) -> list[TaskArrival]:
    """Arrival gaps are unit exponentials scaled by 1/rate, so streams at
    different rates share every random draw except the time axis."""
    rng = np.random.default_rng([seed, 0x5EED])
    gaps = rng.exponential(1.0, tasks)
    classes = sorted(mix)
    p = np.array([mix[c] for c in classes], dtype=float)
    picks = rng.choice(len(classes), size=tasks, p=p / p.sum())
    origins = rng.random(tasks)
    sz, dz = _noise(rng, tasks)
    times = np.cumsum(gaps) / rate
    return [
        TaskArrival(
            float(times[i]),
            TaskSpec(f"t{i:05d}", task_class=classes[picks[i]]),
            float(origins[i]),
            tuple(sz[i].tolist()),
            tuple(dz[i].tolist()),
        )
        for i in range(tasks)
    ]


def parse_trace(lines: Iterable[str]) -> list[tuple[float, TaskSpec]]:
    out = []
    seen = set()
    last = 0.0
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 3:
            raise TraceParseError(lineno, "expected arrival_time_s,task_id,task_class[,key=value...]")
        try:
            t = float(fields[0])
        except ValueError:
            raise TraceParseError(lineno, f"bad arrival time {fields[0]!r}") from None
        if t < 0 or t < last:
            raise TraceParseError(lineno, "arrival times must be non-negative and non-decreasing")
        tid, cls = fields[1], fields[2]
        if not tid or tid in seen:
            raise TraceParseError(lineno, f"missing or duplicate task id {tid!r}")
        params = {}
        for kv in fields[3:]:
            k, sep, v = kv.partition("=")
            if not sep or not k:
                raise TraceParseError(lineno, f"bad parameter {kv!r}")
            params[k.strip()] = v.strip()
        seen.add(tid)
        last = t
        out.append((t, TaskSpec(tid, task_class=cls, params=params)))
    return out


def trace_workload(path: str | Path, seed: int) -> list[TaskArrival]:
    with open(path) as fh:
        entries = parse_trace(fh)
    rng = np.random.default_rng([seed, 0x7ACE])
    origins = rng.random(len(entries))
    sz, dz = _noise(rng, len(entries))
    return [
        TaskArrival(t, spec, float(origins[i]), tuple(sz[i].tolist()), tuple(dz[i].tolist()))
        for i, (t, spec) in enumerate(entries)
    ]


def dump_trace(arrivals: Iterable[TaskArrival]) -> list[str]:
    lines = []
    for a in arrivals:
        extra = [f"{k}={v}" for k, v in sorted(a.spec.params.items())]
        lines.append(",".join([f"{a.time:.6f}", a.spec.task_id, a.spec.task_class, *extra]))
    return lines
