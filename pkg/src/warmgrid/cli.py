"""Command-line entry point: ``warmgrid run | sweep | fl``.

Every flag can also come from the environment as ``WARMGRID_<FLAG>``
(for example ``WARMGRID_SEED=3``); an explicit flag wins.

Exit status: 0 on success, 2 for invalid input (config, flags, trace),
3 when a run breaks a runtime invariant.  Failures print one JSON error
record on stderr and, when the output directory is usable, also write it to
``error.json`` there.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .selector import ConfigError
from .sim.cluster import InvariantViolation, run
from .sim.config import POLICIES, SimConfig, default_config, load_config
from .sim.fl import MODES, SUPPORTED_CLIENTS, FLConfigError, FLRoundModel, run_fl_rounds
from .sim.metrics import MetricSample, report, summary_text, write_cdf, write_csv, write_jsonl
from .sim.workload import TraceParseError

ENV_PREFIX = "WARMGRID_"
EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3


class UsageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class RunManifest:
    config_path: str | None
    policy: str
    output_dir: Path
    seed: int | None = None
    sweep: tuple[float, ...] = ()

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise UsageError("manifest", "sweep rates must be strictly increasing")
        if any(r <= 0 for r in self.sweep):
            raise UsageError("manifest", "sweep rates must be positive")


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper(), default)


def _parse_rates(text: str | None) -> tuple[float, ...]:
    if not text:
        return ()
    try:
        return tuple(float(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise UsageError("arguments", f"bad rate list {text!r}") from None


def _int(text, what: str) -> int | None:
    if text is None or text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise UsageError("arguments", f"{what} must be an integer, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="warmgrid", description="Warm-container orchestration simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="simulation config (JSON); defaults to the bundled 4-node testbed")
        sp.add_argument("--seed", help="override the config seed")
        sp.add_argument("--out", help="output directory (default: out)")

    r = sub.add_parser("run", help="one simulation under one policy")
    common(r)
    r.add_argument("--policy", help=f"one of {', '.join(POLICIES)} (default swiftbot)")

    s = sub.add_parser("sweep", help="P99 per arrival rate for every policy")
    common(s)
    s.add_argument("--sweep", help="comma-separated arrival rates, strictly increasing")
    s.add_argument("--policy", help="restrict to one policy (default: all)")

    f = sub.add_parser("fl", help="federated round-time distribution per aggregation mode")
    common(f)
    f.add_argument("--clients", help=f"client count, one of {SUPPORTED_CLIENTS} (default 16)")
    f.add_argument("--profile", help="timing profile from the calibration file (default ucf101)")
    f.add_argument("--rounds", help="number of rounds (default 20)")
    return p


def _load(config_path: str | None, seed: int | None) -> SimConfig:
    cfg = load_config(config_path) if config_path else default_config()
    return cfg.with_(seed=seed) if seed is not None else cfg


def _out_dir(path: str | None) -> Path:
    out = Path(path or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError("output", f"output directory {out} is not writable: {exc}") from None
    return out


def _write_artifacts(out: Path, samples: list[MetricSample], audit=(), pools=(), requested=()) -> None:
    with open(out / "metrics.csv", "w", newline="") as fh:
        write_csv(samples, fh)
    rep = report(samples, requested)
    (out / "summary.txt").write_text(summary_text(rep))
    if rep.cdfs:
        with open(out / "cdf.csv", "w", newline="") as fh:
            write_cdf(rep, fh)
    if audit:
        with open(out / "audit.jsonl", "w") as fh:
            write_jsonl(audit, fh)
    if pools:
        with open(out / "pools.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(pools[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(pools)


def cmd_run(m: RunManifest) -> int:
    cfg = _load(m.config_path, m.seed)
    if m.sweep:
        return cmd_sweep(m)
    res = run(cfg, m.policy)
    _write_artifacts(m.output_dir, res.samples, res.audit, res.pool_snapshots)
    print(f"{m.policy}: {res.completed}/{res.injected} tasks completed; artifacts in {m.output_dir}")
    return EXIT_OK


def cmd_sweep(m: RunManifest, policies: Sequence[str] = POLICIES) -> int:
    cfg = _load(m.config_path, m.seed)
    rates = m.sweep or (cfg.rate,)
    samples: list[MetricSample] = []
    for policy in policies:
        for rate in rates:
            samples.extend(run(cfg.with_(rate=rate), policy).samples)
    requested = [("startup_latency", p, r) for p in policies for r in rates]
    _write_artifacts(m.output_dir, samples, requested=requested)
    rep = report(samples, requested)
    print(f"{'policy':<12}{'rate':>6}{'p99_ms':>10}")
    for p in policies:
        for r in rates:
            c = rep.cell("startup_latency", p, r)
            val = "absent" if c is None or c.p99 is None else f"{c.p99 * 1000:.1f}"
            print(f"{p:<12}{r:>6g}{val:>10}")
    return EXIT_OK


def cmd_fl(m: RunManifest, clients: int, profile: str, rounds: int) -> int:
    if clients not in SUPPORTED_CLIENTS:
        raise UsageError("arguments", f"--clients must be one of {SUPPORTED_CLIENTS}, got {clients}")
    cfg = _load(m.config_path, m.seed)
    try:
        prof = cfg.calibration.fl_profiles[profile]
    except KeyError:
        known = ", ".join(sorted(cfg.calibration.fl_profiles))
        raise UsageError("arguments", f"unknown profile {profile!r}; known: {known}") from None
    failures = [ev for ev in cfg.failure_schedule if ev.round is not None]
    samples: list[MetricSample] = []
    medians = {}
    for mode in MODES:
        res = run_fl_rounds(
            FLRoundModel(clients, prof, mode), rounds=rounds, seed=cfg.seed, failures=failures,
            calibration=cfg.calibration, heartbeat_s=cfg.heartbeat_s, timeout_beats=cfg.timeout_beats,
            stabilize_s=cfg.stabilize_s,
        )
        samples.extend(res.samples)
        medians[mode] = res.median()
    _write_artifacts(m.output_dir, samples)
    for mode, med in medians.items():
        print(f"{mode:<14} median round {med:8.1f} s")
    print(f"ratio dht_pooled / central_sync = {medians['dht_pooled'] / medians['central_sync']:.3f}")
    return EXIT_OK


def _fail(code: int, record: dict, out: Path | None) -> int:
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out: Path | None = None
    try:
        out = _out_dir(args.out or _env("out"))
        policy = getattr(args, "policy", None) or _env("policy") or ("swiftbot" if args.command == "run" else None)
        if policy is not None and policy not in POLICIES:
            raise UsageError("arguments", f"unknown policy {policy!r}; expected one of {POLICIES}")
        manifest = RunManifest(
            args.config or _env("config"),
            policy or "swiftbot",
            out,
            _int(args.seed or _env("seed"), "--seed"),
            _parse_rates(getattr(args, "sweep", None) or _env("sweep")) if args.command != "fl" else (),
        )
        if args.command == "run":
            return cmd_run(manifest)
        if args.command == "sweep":
            return cmd_sweep(manifest, (policy,) if policy else POLICIES)
        clients = _int(args.clients or _env("clients"), "--clients") or 16
        rounds = _int(args.rounds or _env("rounds"), "--rounds") or 20
        return cmd_fl(manifest, clients, args.profile or _env("profile") or "ucf101", rounds)
    except UsageError as exc:
        return _fail(EXIT_INPUT, {"error": "invalid_input", "stage": exc.stage, "message": str(exc)}, out)
    except (ConfigError, FLConfigError) as exc:
        return _fail(EXIT_INPUT, {"error": "invalid_config", "stage": "config", "message": str(exc)}, out)
    except TraceParseError as exc:
        return _fail(
            EXIT_INPUT,
            {"error": "invalid_trace", "stage": "workload", "line": exc.lineno, "message": str(exc)},
            out,
        )
    except OSError as exc:
        return _fail(EXIT_INPUT, {"error": "invalid_input", "stage": "io", "message": str(exc)}, out)
    except InvariantViolation as exc:
        return _fail(
            EXIT_INVARIANT,
            {"error": "invariant_violation", "stage": "simulate", "invariant": exc.invariant, "message": exc.detail},
            out,
        )


if __name__ == "__main__":
    sys.exit(main())
