"""Simulation and calibration configuration (JSON files)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..selector import ConfigError, CostTable, ImageCost

POLICIES = ("swiftbot", "local_warm", "cold_start")


@dataclass(frozen=True)
class ImageCalibration:
    pull_s: float
    init_s: float
    handoff_s: float
    reuse_s: float
    resume_ratio: float = 0.25
    state_mib: float = 0.0
    duration_s: float = 1.0
    stateful: bool = False

    @property
    def cold_s(self) -> float:
        return self.pull_s + self.init_s


@dataclass(frozen=True)
class FLProfile:
    median_s: float
    sigma: float
    upload_s: float
    chunks: int = 8
    chunk_state_mib: float = 64.0


@dataclass(frozen=True)
class Calibration:
    images: Mapping[str, ImageCalibration]
    jitter_sigma: float = 0.0
    duration_sigma: float = 0.0
    serialize_overhead_s: float = 0.2
    bandwidth_mib_s: float = 100.0
    fl_profiles: Mapping[str, FLProfile] = field(default_factory=dict)

    def costs(self, policy: str = "swiftbot") -> CostTable:
        """Per-policy cost view; the keep-alive baseline pays the reuse cost on a hit."""
        return CostTable(
            {
                k: ImageCost(v.pull_s, v.init_s, v.reuse_s if policy == "local_warm" else v.handoff_s)
                for k, v in self.images.items()
            }
        )

    def durations(self) -> dict[str, float]:
        return {k: v.duration_s for k, v in self.images.items()}

    def image(self, name: str) -> ImageCalibration:
        try:
            return self.images[name]
        except KeyError:
            raise ConfigError(f"image {name!r} is not calibrated") from None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Calibration":
        base = dict(d.get("image_defaults", {}))
        images = {}
        for name, vals in d.get("images", {}).items():
            merged = {**base, **vals}
            try:
                images[name] = ImageCalibration(**merged)
            except TypeError as exc:
                raise ConfigError(f"calibration for {name!r}: {exc}") from None
        if not images:
            raise ConfigError("calibration lists no images")
        for name, img in images.items():
            if min(img.pull_s, img.init_s, img.handoff_s, img.reuse_s, img.state_mib) < 0:
                raise ConfigError(f"negative cost for image {name!r}")
        profiles = {}
        for name, vals in d.get("fl_profiles", {}).items():
            try:
                profiles[name] = FLProfile(**vals)
            except TypeError as exc:
                raise ConfigError(f"fl profile {name!r}: {exc}") from None
        kw = {k: d[k] for k in ("jitter_sigma", "duration_sigma", "serialize_overhead_s", "bandwidth_mib_s") if k in d}
        return cls(images=images, fl_profiles=profiles, **kw)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Calibration":
        if path is None:
            text = resources.files("warmgrid.data").joinpath("calibration.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(_parse_json(text, str(path or "calibration.json")))


@dataclass(frozen=True)
class NodeProfile:
    name: str
    cpu: float
    mem_mib: float
    speed: float = 1.0
    pool_capacity: int | None = None


@dataclass(frozen=True)
class FailureEvent:
    nodes: tuple[str, ...]
    at: float | None = None
    round: int | None = None
    rejoin_after: float | None = None


@dataclass(frozen=True)
class SimConfig:
    seed: int
    nodes: tuple[NodeProfile, ...]
    calibration: Calibration
    arrival: str = "poisson"
    rate: float = 5.0
    tasks: int = 1000
    mix: Mapping[str, float] = field(default_factory=lambda: {"media_video": 0.5, "media_audio": 0.5})
    trace: str | None = None
    duration: float | None = None
    link_latency_s: float = 0.002
    link_latency: Mapping[tuple[str, str], float] = field(default_factory=dict)
    bandwidth: Mapping[tuple[str, str], float] = field(default_factory=dict)
    failure_schedule: tuple[FailureEvent, ...] = ()
    pool_capacity: int = 8
    capacity_per_gib: float | None = None
    ttl_s: float = 600.0
    probe_interval_s: float = 5.0
    prewarm_horizon_s: float = 10.0
    initial_warm: int = 0
    theta_match: float = 0.7
    gamma: float = 0.5
    k: int = 5
    replicas: int = 5
    group_size: int = 5
    heartbeat_s: float = 0.1
    timeout_beats: int = 3
    stabilize_s: float = 0.5

    def __post_init__(self):
        if not self.nodes:
            raise ConfigError("at least one node profile is required")
        if self.arrival not in ("poisson", "trace"):
            raise ConfigError(f"unknown arrival kind {self.arrival!r}")
        if self.arrival == "poisson" and self.rate <= 0:
            raise ConfigError("arrival rate must be > 0")
        if self.arrival == "trace" and not self.trace:
            raise ConfigError("trace arrival needs a trace path")
        if self.tasks < 0:
            raise ConfigError("task count must be >= 0")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ConfigError("node names must be unique")
        for n in self.nodes:
            if n.cpu <= 0 or n.mem_mib <= 0 or n.speed <= 0:
                raise ConfigError(f"node {n.name!r}: cpu, mem and speed must be positive")
        for ev in self.failure_schedule:
            unknown = set(ev.nodes) - set(names)
            if unknown:
                raise ConfigError(f"failure schedule names unknown nodes {sorted(unknown)}")

    def capacity_of(self, node: NodeProfile) -> int:
        if node.pool_capacity is not None:
            return node.pool_capacity
        if self.capacity_per_gib is not None:
            return max(1, int(node.mem_mib / 1024 * self.capacity_per_gib))
        return self.pool_capacity

    def latency(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return self.link_latency.get((a, b), self.link_latency_s)

    def bandwidth_map(self) -> dict[tuple[str, str], float]:
        return dict(self.bandwidth)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def _parse_json(text: str, where: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}: line {exc.lineno}: {exc.msg}") from None


def _pair_map(raw: Mapping[str, float] | None) -> dict[tuple[str, str], float]:
    """``{"a->b": x}`` to ``{("a", "b"): x}``."""
    out = {}
    for key, val in (raw or {}).items():
        a, sep, b = key.partition("->")
        if not sep:
            raise ConfigError(f"pair key {key!r} must look like 'src->dst'")
        out[(a.strip(), b.strip())] = float(val)
    return out


def config_from_dict(d: Mapping[str, Any], base_dir: Path | None = None) -> SimConfig:
    d = dict(d)
    cal = d.pop("calibration", None)
    if isinstance(cal, Mapping):
        calibration = Calibration.from_dict(cal)
    elif isinstance(cal, str):
        p = Path(cal)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"calibration file {p} not found")
        calibration = Calibration.load(p)
    else:
        calibration = Calibration.load()
    try:
        nodes = tuple(NodeProfile(**n) for n in d.pop("nodes"))
    except KeyError:
        raise ConfigError("config needs a 'nodes' list") from None
    except TypeError as exc:
        raise ConfigError(f"node profile: {exc}") from None
    arrival = d.pop("arrival", {"kind": "poisson"})
    kw: dict[str, Any] = {}
    if isinstance(arrival, Mapping):
        kw["arrival"] = arrival.get("kind", "poisson")
        for key in ("rate", "tasks", "mix", "trace"):
            if key in arrival:
                kw[key] = arrival[key]
        if kw.get("trace") and base_dir is not None and not Path(kw["trace"]).is_absolute():
            kw["trace"] = str(base_dir / kw["trace"])
    failures = tuple(
        FailureEvent(tuple(f["nodes"]), f.get("at"), f.get("round"), f.get("rejoin_after"))
        for f in d.pop("failure_schedule", ())
    )
    kw["link_latency"] = _pair_map(d.pop("link_latency", None))
    kw["bandwidth"] = _pair_map(d.pop("bandwidth", None))
    try:
        return SimConfig(nodes=nodes, calibration=calibration, failure_schedule=failures, **kw, **d)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None


def load_config(path: str | Path) -> SimConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return config_from_dict(_parse_json(p.read_text(), str(p)), p.parent)


def default_config(**overrides) -> SimConfig:
    text = resources.files("warmgrid.data").joinpath("testbed.json").read_text()
    cfg = config_from_dict(_parse_json(text, "testbed.json"))
    return cfg.with_(**overrides) if overrides else cfg
