"""Three-phase container selection.

Phase 1 reuses a compatible ready container from the local pool, Phase 2
asks the k overlay successors of the image key for ready containers worth
migrating, Phase 3 cold-starts.  Selection is side-effect free: it returns an
``AllocationOutcome`` and the caller carries it out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .decomposer import Subtask
from .overlay import OverlayError
from .pool import ContainerRecord, Status

LOCAL_WARM = "local_warm"
MIGRATED_WARM = "migrated_warm"
COLD_START = "cold_start"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreWeights:
    img: float = 0.5
    res: float = 0.3
    vol: float = 0.2

    def __post_init__(self):
        if min(self.img, self.res, self.vol) < 0:
            raise ConfigError("score weights must be non-negative")
        if abs(self.img + self.res + self.vol - 1.0) > 1e-9:
            raise ConfigError("score weights must sum to 1")


@dataclass
class SelectorConfig:
    theta_match: float = 0.7
    gamma: float = 0.5
    k: int = 5
    serialize_overhead: float = 0.2
    bandwidth_map: Mapping[tuple[str, str], float] = field(default_factory=dict)
    default_bandwidth: float | None = None
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    phases: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if not 0 <= self.theta_match <= 1:
            raise ConfigError("theta_match must lie in [0, 1]")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")

    def bandwidth(self, src: str, dst: str) -> float:
        bw = self.bandwidth_map.get((src, dst), self.default_bandwidth)
        if bw is None:
            raise ConfigError(f"no bandwidth configured for {src} -> {dst}")
        if bw <= 0:
            raise ConfigError(f"bandwidth {src} -> {dst} must be positive")
        return bw


@dataclass(frozen=True)
class ImageCost:
    pull_s: float
    init_s: float
    handoff_s: float


class CostTable:
    """Per-image startup costs."""

    def __init__(self, images: Mapping[str, ImageCost]):
        self.images = dict(images)

    def _get(self, image: str) -> ImageCost:
        try:
            return self.images[image]
        except KeyError:
            raise ConfigError(f"image {image!r} missing from the cost table") from None

    def cold_cost(self, image: str) -> float:
        c = self._get(image)
        return c.pull_s + c.init_s

    def handoff(self, image: str) -> float:
        return self._get(image).handoff_s


@dataclass(frozen=True)
class AllocationOutcome:
    kind: str
    container_id: str | None
    startup_latency: float
    source_node: str | None = None
    score: float | None = None
    eta: float | None = None
    cold_cost: float | None = None

    def __post_init__(self):
        if self.kind == MIGRATED_WARM and self.source_node is None:
            raise ValueError("a migrated allocation needs its source node")
        if self.startup_latency < 0:
            raise ValueError("startup latency must be >= 0")

    @property
    def phase(self) -> int:
        return {LOCAL_WARM: 1, MIGRATED_WARM: 2, COLD_START: 3}[self.kind]

    def audit(self, task: str) -> dict:
        return {
            "task": task,
            "phase_taken": self.phase,
            "chosen_container": self.container_id,
            "score": self.score,
            "eta": self.eta,
            "cold_cost": self.cold_cost,
            "latency": self.startup_latency,
        }


def image_match(c: ContainerRecord, t: Subtask) -> float:
    if c.image == t.image:
        return 1.0
    if c.image in t.compatible_images:
        return 0.5
    return 0.0


def compat(c: ContainerRecord, t: Subtask) -> int:
    return int(image_match(c, t) > 0 and c.cpu >= t.cpu and c.mem_mib >= t.mem_mib)


def score(c: ContainerRecord, t: Subtask, weights: ScoreWeights = ScoreWeights()) -> float:
    s_res = min(1.0, c.cpu / t.cpu, c.mem_mib / t.mem_mib)
    s_vol = len(c.volumes & t.volumes) / len(t.volumes) if t.volumes else 1.0
    return weights.img * image_match(c, t) + weights.res * s_res + weights.vol * s_vol


def mig_cost(c: ContainerRecord, src: str, dst: str, cfg: SelectorConfig) -> float:
    return c.state_size / cfg.bandwidth(src, dst) + cfg.serialize_overhead


def cold_cost(t: Subtask, costs: CostTable) -> float:
    return costs.cold_cost(t.image)


class Overlay(Protocol):
    def position(self, name: str) -> int: ...

    def successors(self, key: int, k: int, start: str | None = None) -> list[str]: ...


def select(
    t: Subtask,
    local_node: str,
    pools: Mapping[str, Iterable[ContainerRecord]],
    overlay: Overlay,
    cfg: SelectorConfig,
    costs: CostTable,
) -> AllocationOutcome:
    """Pick a container for ``t`` on ``local_node``.

    ``pools`` maps node -> snapshot of its records.  Nothing is mutated.
    """
    cold = cold_cost(t, costs)

    if 1 in cfg.phases:
        local = [
            c for c in pools.get(local_node, ()) if c.status is Status.READY and compat(c, t) == 1
        ]
        if local:
            best = min(local, key=lambda c: (-score(c, t, cfg.weights), c.container_id))
            return AllocationOutcome(
                LOCAL_WARM, best.container_id, costs.handoff(t.image),
                score=score(best, t, cfg.weights), cold_cost=cold,
            )

    if 2 in cfg.phases:
        try:
            nodes = overlay.successors(overlay.position(t.image), cfg.k, local_node)
        except OverlayError:
            nodes = []
        feasible = []
        for n in nodes:
            if n == local_node:
                continue
            for c in pools.get(n, ()):
                if c.status is not Status.READY:
                    continue
                s = score(c, t, cfg.weights)
                eta = mig_cost(c, n, local_node, cfg)
                if s >= cfg.theta_match and eta < cfg.gamma * cold:
                    feasible.append((s, eta, c, n))
        if feasible:
            s, eta, c, n = min(feasible, key=lambda x: (-x[0], x[1], x[2].container_id))
            return AllocationOutcome(
                MIGRATED_WARM, c.container_id, eta + costs.handoff(t.image),
                source_node=n, score=s, eta=eta, cold_cost=cold,
            )

    return AllocationOutcome(COLD_START, None, cold, cold_cost=cold)
