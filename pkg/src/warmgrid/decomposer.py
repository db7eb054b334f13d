"""Task decomposition into subtask DAGs with container hints.

A rule table keyed on task class stands in for the language-model planner.
Requests are routed through a two-tier cascade (fast / large); each tier can
be backed by an external client speaking the line-delimited DAG format, and
both default to the rule engine.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

log = logging.getLogger(__name__)

TASK_CLASSES = (
    "navigation",
    "manipulation",
    "perception",
    "multi_robot",
    "inspection",
    "hri",
    "media_video",
    "media_audio",
)

EWMA_ALPHA = 0.3
FAST_PATH_MAX_NODES = 3


class UnsupportedTaskError(ValueError):
    pass


class DagError(ValueError):
    pass


@dataclass(frozen=True)
class StageRule:
    name: str
    image: str
    cpu: float
    mem_mib: float
    volumes: tuple[str, ...] = ()


def _chain(*stages: StageRule) -> tuple[StageRule, ...]:
    return stages


# Every class is a short sequential pipeline; `fan_out` widens one stage.
RULES: dict[str, tuple[StageRule, ...]] = {
    "navigation": _chain(
        StageRule("localize", "localize", 1.0, 512, ("maps",)),
        StageRule("plan", "plan_path", 1.0, 512, ("maps",)),
        StageRule("control", "control", 0.5, 256),
    ),
    "manipulation": _chain(
        StageRule("perceive", "perceive", 2.0, 1024, ("scenes",)),
        StageRule("grasp", "grasp_plan", 1.0, 1024),
        StageRule("actuate", "actuate", 0.5, 256),
    ),
    "perception": _chain(
        StageRule("capture", "capture", 0.5, 256),
        StageRule("detect", "detect", 2.0, 2048, ("models",)),
        StageRule("fuse", "fuse", 1.0, 512),
    ),
    "multi_robot": _chain(
        StageRule("allocate", "allocate", 0.5, 256),
        StageRule("plan", "plan_path", 1.0, 512, ("maps",)),
        StageRule("merge", "merge", 0.5, 256),
    ),
    "inspection": _chain(
        StageRule("capture", "capture", 0.5, 256),
        StageRule("detect", "detect", 2.0, 2048, ("models",)),
        StageRule("report", "report", 0.5, 256),
    ),
    "hri": _chain(
        StageRule("speech", "speech", 1.0, 1024, ("models",)),
        StageRule("intent", "intent", 1.0, 1024),
        StageRule("respond", "respond", 0.5, 256),
    ),
    "media_video": _chain(
        StageRule("extract", "extract", 0.5, 1024, ("ucf101",)),
        StageRule("encode", "encode3d", 1.0, 4096, ("ucf101",)),
        StageRule("classify", "classify", 0.5, 2048),
    ),
    "media_audio": _chain(
        StageRule("preprocess", "preprocess", 0.5, 1024, ("librispeech",)),
        StageRule("acoustic", "acoustic", 1.0, 4096, ("librispeech",)),
        StageRule("lm", "lmcorrect", 0.5, 2048),
    ),
}


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str = ""
    task_class: str = "media_video"
    params: Mapping[str, str] = field(default_factory=dict)
    deadline: float | None = None


@dataclass(frozen=True)
class ContainerHint:
    preferred_image: str
    compatible_images: frozenset[str] = frozenset()
    required_volumes: frozenset[str] = frozenset()
    locality_preference: str | None = None

    def __post_init__(self):
        if self.preferred_image in self.compatible_images:
            raise ValueError("preferred image must not be listed as merely compatible")


@dataclass(frozen=True)
class Subtask:
    subtask_id: str
    image: str
    cpu: float
    mem_mib: float
    volumes: frozenset[str] = frozenset()
    est_duration: float = 1.0
    parallel_group: int = 0
    deps: tuple[str, ...] = ()
    stage: str = ""
    deadline: float | None = None
    hint: ContainerHint | None = None

    def __post_init__(self):
        if self.cpu <= 0 or self.mem_mib <= 0:
            raise ValueError(f"{self.subtask_id}: cpu and mem must be positive")
        if self.hint is None:
            object.__setattr__(
                self, "hint", ContainerHint(self.image, required_volumes=frozenset(self.volumes))
            )

    @property
    def compatible_images(self) -> frozenset[str]:
        return self.hint.compatible_images


@dataclass
class SubtaskDag:
    nodes: list[Subtask]
    edges: list[tuple[str, str]]

    def __post_init__(self):
        ids = {n.subtask_id for n in self.nodes}
        if len(ids) != len(self.nodes):
            raise DagError("duplicate subtask ids")
        for a, b in self.edges:
            if a not in ids or b not in ids:
                raise DagError(f"edge ({a}, {b}) references a missing node")
        self.topological_order()

    def by_id(self, sid: str) -> Subtask:
        for n in self.nodes:
            if n.subtask_id == sid:
                return n
        raise KeyError(sid)

    def predecessors(self, sid: str) -> list[str]:
        return [a for a, b in self.edges if b == sid]

    def successors(self, sid: str) -> list[str]:
        return [b for a, b in self.edges if a == sid]

    def roots(self) -> list[str]:
        has_in = {b for _, b in self.edges}
        return [n.subtask_id for n in self.nodes if n.subtask_id not in has_in]

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; raises DagError on a cycle."""
        indeg = {n.subtask_id: 0 for n in self.nodes}
        out = defaultdict(list)
        for a, b in self.edges:
            indeg[b] += 1
            out[a].append(b)
        queue = deque(sid for sid in indeg if indeg[sid] == 0)
        order = []
        while queue:
            sid = queue.popleft()
            order.append(sid)
            for nxt in out[sid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    queue.append(nxt)
        if len(order) != len(self.nodes):
            raise DagError("dependency graph has a cycle")
        return order

    def reachable(self, src: str, dst: str) -> bool:
        seen, stack = set(), [src]
        while stack:
            cur = stack.pop()
            if cur == dst and cur != src:
                return True
            for nxt in self.successors(cur):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False


# -- exchange format -------------------------------------------------------


def dump_dag(dag: SubtaskDag) -> list[str]:
    """One JSON record per subtask, in topological order."""
    lines = []
    for sid in dag.topological_order():
        st = dag.by_id(sid)
        lines.append(
            json.dumps(
                {
                    "subtask_id": st.subtask_id,
                    "image": st.image,
                    "cpu": float(st.cpu),
                    "mem_mib": float(st.mem_mib),
                    "volumes": sorted(st.volumes),
                    "deps": sorted(dag.predecessors(sid)),
                    "parallel_group": st.parallel_group,
                    "est_duration_s": st.est_duration,
                },
                sort_keys=True,
            )
        )
    return lines


def load_dag(lines: Iterable[str], compat: Mapping[str, Iterable[str]] | None = None) -> SubtaskDag:
    compat = compat or {}
    nodes, edges = [], []
    for lineno, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            image = rec["image"]
            vols = frozenset(rec.get("volumes", ()))
            nodes.append(
                Subtask(
                    subtask_id=rec["subtask_id"],
                    image=image,
                    cpu=float(rec["cpu"]),
                    mem_mib=float(rec["mem_mib"]),
                    volumes=vols,
                    est_duration=float(rec.get("est_duration_s", 1.0)),
                    parallel_group=int(rec.get("parallel_group", 0)),
                    deps=tuple(rec.get("deps", ())),
                    hint=ContainerHint(image, frozenset(compat.get(image, ())) - {image}, vols),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DagError(f"line {lineno}: {exc}") from exc
        edges.extend((d, rec["subtask_id"]) for d in rec.get("deps", ()))
    return SubtaskDag(nodes, edges)


class ModelClient(Protocol):
    """External planner backend: request is the TaskSpec as JSON text, the reply
    is the DAG exchange format."""

    def complete(self, request: str) -> str: ...


def spec_request(spec: TaskSpec) -> str:
    return json.dumps(
        {
            "task_id": spec.task_id,
            "instruction": spec.instruction,
            "task_class": spec.task_class,
            "params": dict(spec.params),
            "deadline": spec.deadline,
        },
        sort_keys=True,
    )


class RuleBackedClient:
    """Stub backend answering from the rule table."""

    def __init__(self, decomposer: "Decomposer"):
        self.decomposer = decomposer

    def complete(self, request: str) -> str:
        rec = json.loads(request)
        spec = TaskSpec(rec["task_id"], rec.get("instruction", ""), rec["task_class"], rec.get("params", {}), rec.get("deadline"))
        return "\n".join(dump_dag(self.decomposer.rule_dag(spec)))


def _fan_out(spec: TaskSpec) -> tuple[int, int]:
    """(stage index, width) of the widened stage; width 1 means no fan-out."""
    width = int(spec.params.get("fan_out", 1))
    stage = int(spec.params.get("fan_out_stage", 1))
    if width < 1:
        raise ValueError("fan_out must be >= 1")
    return stage, width


class Decomposer:
    def __init__(
        self,
        durations: Mapping[str, float],
        compat: Mapping[str, Iterable[str]] | None = None,
        fast_client: ModelClient | None = None,
        large_client: ModelClient | None = None,
        alpha: float = EWMA_ALPHA,
    ):
        self.durations = dict(durations)
        self.compat = {k: frozenset(v) for k, v in (compat or {}).items()}
        self.fast_client = fast_client
        self.large_client = large_client
        self.alpha = alpha
        self.estimates: dict[tuple[str, str], float] = {}
        self.failures: dict[str, int] = defaultdict(int)
        self._seen: dict[str, str] = {}

    def estimate(self, task_class: str, rule: StageRule) -> float:
        key = (task_class, rule.name)
        if key not in self.estimates:
            try:
                self.estimates[key] = float(self.durations[rule.image])
            except KeyError:
                raise UnsupportedTaskError(f"no calibrated duration for image {rule.image!r}") from None
        return self.estimates[key]

    def estimated_nodes(self, spec: TaskSpec) -> tuple[int, bool]:
        rules = self._rules(spec)
        stage, width = _fan_out(spec)
        fanned = width > 1 and 0 <= stage < len(rules)
        return len(rules) + (width - 1 if fanned else 0), fanned

    def route(self, spec: TaskSpec) -> str:
        count, fanned = self.estimated_nodes(spec)
        return "fast_path" if count <= FAST_PATH_MAX_NODES and not fanned else "large_path"

    def _rules(self, spec: TaskSpec) -> tuple[StageRule, ...]:
        try:
            return RULES[spec.task_class]
        except KeyError:
            raise UnsupportedTaskError(f"unsupported task class {spec.task_class!r}") from None

    def rule_dag(self, spec: TaskSpec) -> SubtaskDag:
        rules = self._rules(spec)
        fan_stage, width = _fan_out(spec)
        nodes: list[Subtask] = []
        edges: list[tuple[str, str]] = []
        prev: list[str] = []
        for idx, rule in enumerate(rules):
            n = width if idx == fan_stage else 1
            ids = [f"{spec.task_id}/{rule.name}" + (f".{i}" if n > 1 else "") for i in range(n)]
            vols = frozenset(rule.volumes)
            for sid in ids:
                nodes.append(
                    Subtask(
                        subtask_id=sid,
                        image=rule.image,
                        cpu=rule.cpu,
                        mem_mib=rule.mem_mib,
                        volumes=vols,
                        est_duration=self.estimate(spec.task_class, rule),
                        parallel_group=idx,
                        deps=tuple(prev),
                        stage=rule.name,
                        deadline=spec.deadline,
                        hint=ContainerHint(rule.image, self.compat.get(rule.image, frozenset()) - {rule.image}, vols),
                    )
                )
                edges.extend((p, sid) for p in prev)
            prev = ids
        return SubtaskDag(nodes, edges)

    def decompose(self, spec: TaskSpec) -> SubtaskDag:
        client = self.fast_client if self.route(spec) == "fast_path" else self.large_client
        if client is None:
            dag = self.rule_dag(spec)
        else:
            dag = load_dag(client.complete(spec_request(spec)).splitlines(), self.compat)
        self._seen[spec.task_id] = spec.task_class
        return dag

    def record_feedback(
        self, task_id: str, outcome: str, observed_durations: Mapping[str, float] | None = None
    ) -> dict[tuple[str, str], float]:
        """Fold observed per-stage durations into the estimates (EWMA)."""
        task_class = self._seen.get(task_id)
        if task_class is None:
            log.warning("feedback for unknown task %s ignored", task_id)
            return dict(self.estimates)
        if outcome == "failure":
            self.failures[task_class] += 1
            return dict(self.estimates)
        if outcome != "success":
            raise ValueError(f"unknown outcome {outcome!r}")
        rules = {r.name: r for r in RULES[task_class]}
        for stage, observed in (observed_durations or {}).items():
            if stage not in rules:
                continue
            prior = self.estimate(task_class, rules[stage])
            self.estimates[(task_class, stage)] = self.alpha * observed + (1 - self.alpha) * prior
        return dict(self.estimates)
