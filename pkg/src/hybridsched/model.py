"""Domain types for applications, jobs and schedules, plus the public-cloud cost model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

StageId = int
JobId = int
ReplicaId = int


class DagError(ValueError):
    """Raised when an application DAG violates a structural rule."""

    def __init__(self, rule: str, message: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule


@dataclass(frozen=True)
class CostModel:
    granularity_ms: float = 100.0
    rate_usd_per_gb_ms: float = 0.00001667 / 1000
    reference_memory_mb: float = 1024.0

    def __post_init__(self):
        for name in ("granularity_ms", "rate_usd_per_gb_ms", "reference_memory_mb"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")


DEFAULT_COST_MODEL = CostModel()


def cost_of_execution(t_ms: float, memory_mb: float, cm: CostModel = DEFAULT_COST_MODEL) -> float:
    """Public-cloud price in USD of one function execution lasting ``t_ms``.

    Billing rounds the duration up to the next multiple of ``cm.granularity_ms``
    and scales linearly with the configured memory.
    """
    if t_ms < 0 or math.isnan(t_ms):
        raise ValueError(f"execution time must be non-negative, got {t_ms!r}")
    if not memory_mb > 0:
        raise ValueError(f"memory must be positive, got {memory_mb!r}")
    billed = cm.granularity_ms * math.ceil(t_ms / cm.granularity_ms)
    return billed * (memory_mb / cm.reference_memory_mb) * cm.rate_usd_per_gb_ms


@dataclass(frozen=True)
class AppDag:
    """Application template: stages, precedence edges, replicas and memory per stage.

    Construction validates the graph (see :func:`validate_dag`).
    """

    names: Tuple[str, ...]
    edges: Tuple[Tuple[StageId, StageId], ...]
    replicas: Tuple[int, ...]
    memory_mb: Tuple[float, ...]
    must_private: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "edges", tuple(sorted({(int(p), int(q)) for p, q in self.edges})))
        object.__setattr__(self, "replicas", tuple(int(r) for r in self.replicas))
        object.__setattr__(self, "memory_mb", tuple(float(m) for m in self.memory_mb))
        object.__setattr__(self, "must_private", frozenset(int(k) for k in self.must_private))
        validate_dag(self)

    @classmethod
    def chain(cls, n_stages: int, replicas=1, memory_mb=1024.0, names=None) -> "AppDag":
        reps = [replicas] * n_stages if isinstance(replicas, int) else list(replicas)
        mems = [memory_mb] * n_stages if isinstance(memory_mb, (int, float)) else list(memory_mb)
        names = names or [f"s{k}" for k in range(n_stages)]
        return cls(tuple(names), tuple((k, k + 1) for k in range(n_stages - 1)), tuple(reps), tuple(mems))

    @property
    def stage_count(self) -> int:
        return len(self.names)

    @property
    def stages(self) -> range:
        return range(self.stage_count)

    @property
    def out_degree(self) -> Tuple[int, ...]:
        deg = [0] * self.stage_count
        for p, _ in self.edges:
            deg[p] += 1
        return tuple(deg)

    @cached_property
    def _succ(self) -> Tuple[Tuple[StageId, ...], ...]:
        return tuple(tuple(q for p, q in self.edges if p == k) for k in self.stages)

    @cached_property
    def _pred(self) -> Tuple[Tuple[StageId, ...], ...]:
        return tuple(tuple(p for p, q in self.edges if q == k) for k in self.stages)

    def successors(self, k: StageId) -> Tuple[StageId, ...]:
        return self._succ[k]

    def predecessors(self, k: StageId) -> Tuple[StageId, ...]:
        return self._pred[k]

    @property
    def sources(self) -> Tuple[StageId, ...]:
        return tuple(k for k in self.stages if not self.predecessors(k))

    @property
    def sinks(self) -> Tuple[StageId, ...]:
        return tuple(k for k in self.stages if not self.successors(k))

    @cached_property
    def _topo(self) -> Tuple[StageId, ...]:
        return _topological_order(self.stage_count, self.edges)

    def topological_order(self) -> Tuple[StageId, ...]:
        return self._topo

    def descendants(self, k: StageId) -> frozenset:
        seen, stack = set(), [k]
        while stack:
            for q in self.successors(stack.pop()):
                if q not in seen:
                    seen.add(q)
                    stack.append(q)
        return frozenset(seen)

    def ancestors(self, k: StageId) -> frozenset:
        seen, stack = set(), [k]
        while stack:
            for p in self.predecessors(stack.pop()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return frozenset(seen)

    def index(self, name: str) -> StageId:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown stage {name!r}") from None


def _topological_order(n: int, edges) -> Optional[Tuple[int, ...]]:
    # Kahn's algorithm with smallest-id-first for a deterministic order
    indeg = [0] * n
    succ: Dict[int, List[int]] = {k: [] for k in range(n)}
    for p, q in edges:
        indeg[q] += 1
        succ[p].append(q)
    ready = sorted(k for k in range(n) if indeg[k] == 0)
    order = []
    while ready:
        k = ready.pop(0)
        order.append(k)
        for q in succ[k]:
            indeg[q] -= 1
            if indeg[q] == 0:
                ready.append(q)
                ready.sort()
    return tuple(order) if len(order) == n else None


def validate_dag(dag: AppDag) -> None:
    """Raise :class:`DagError` naming the first violated rule, or return ``None``."""
    k_count = len(dag.names)
    if k_count == 0:
        raise DagError("empty", "an application needs at least one stage")
    if len(set(dag.names)) != k_count:
        raise DagError("names", "stage names must be unique")
    if len(dag.replicas) != k_count or len(dag.memory_mb) != k_count:
        raise DagError("shape", "replicas and memory_mb need one entry per stage")
    for k, r in enumerate(dag.replicas):
        if r < 1:
            raise DagError("replicas", f"stage {k} has {r} replicas, need >= 1")
    for k, m in enumerate(dag.memory_mb):
        if not (m > 0 and math.isfinite(m)):
            raise DagError("memory", f"stage {k} memory must be positive, got {m}")
    for p, q in dag.edges:
        if not (0 <= p < k_count and 0 <= q < k_count):
            raise DagError("edge", f"edge ({p}, {q}) references an unknown stage")
        if p == q:
            raise DagError("cycle", f"self-loop on stage {p}")
    for k in dag.must_private:
        if not 0 <= k < k_count:
            raise DagError("must_private", f"unknown stage {k}")
    if _topological_order(k_count, dag.edges) is None:
        raise DagError("cycle", "precedence edges contain a cycle")
    # weak connectivity: an isolated stage would form a separate application
    adj: Dict[int, set] = {k: set() for k in range(k_count)}
    for p, q in dag.edges:
        adj[p].add(q)
        adj[q].add(p)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != k_count:
        missing = sorted(set(range(k_count)) - seen)
        raise DagError("reachability", f"stages {missing} are not connected to the rest of the DAG")


def _as_floats(values, length: int, name: str, strictly_positive: bool) -> Tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != length:
        raise ValueError(f"{name} has {len(out)} entries, expected {length}")
    for v in out:
        if not math.isfinite(v) or (v <= 0 if strictly_positive else v < 0):
            bound = "> 0" if strictly_positive else ">= 0"
            raise ValueError(f"{name} entries must be finite and {bound}, got {v!r}")
    return out


@dataclass(frozen=True)
class Job:
    """One batch member with per-stage latency estimates in milliseconds."""

    id: JobId
    p_private: Tuple[float, ...]
    p_public: Tuple[float, ...]
    upload_ms: Tuple[float, ...] = None
    download_ms: Tuple[float, ...] = None
    must_private: frozenset = frozenset()
    features: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        k = len(self.p_private)
        object.__setattr__(self, "p_private", _as_floats(self.p_private, k, "p_private", True))
        object.__setattr__(self, "p_public", _as_floats(self.p_public, k, "p_public", True))
        up = self.upload_ms if self.upload_ms is not None else [0.0] * k
        down = self.download_ms if self.download_ms is not None else [0.0] * k
        object.__setattr__(self, "upload_ms", _as_floats(up, k, "upload_ms", False))
        object.__setattr__(self, "download_ms", _as_floats(down, k, "download_ms", False))
        object.__setattr__(self, "must_private", frozenset(int(s) for s in self.must_private))
        object.__setattr__(self, "features", tuple(tuple(float(x) for x in f) for f in self.features))
        if any(not 0 <= s < k for s in self.must_private):
            raise ValueError(f"job {self.id}: must_private references unknown stage")

    @property
    def stage_count(self) -> int:
        return len(self.p_private)


def check_batch(dag: AppDag, batch: Sequence[Job]) -> None:
    """Validate a batch against its DAG: dense ids and matching stage counts."""
    if len(batch) == 0:
        raise ValueError("batch is empty")
    for pos, job in enumerate(batch):
        if job.id != pos:
            raise ValueError(f"job ids must be dense 0..J-1, position {pos} holds id {job.id}")
        if job.stage_count != dag.stage_count:
            raise ValueError(f"job {job.id} has {job.stage_count} stages, DAG has {dag.stage_count}")


def stage_cost(job: Job, k: StageId, dag: AppDag, cm: CostModel = DEFAULT_COST_MODEL) -> float:
    return cost_of_execution(job.p_public[k], dag.memory_mb[k], cm)


def job_public_cost(job: Job, dag: AppDag, cm: CostModel = DEFAULT_COST_MODEL) -> float:
    return math.fsum(stage_cost(job, k, dag, cm) for k in dag.stages)


def job_private_runtime(job: Job) -> float:
    return math.fsum(job.p_private)


def compute_capacity(dag: AppDag, c_max: float) -> float:
    return math.fsum(i * c_max for i in dag.replicas)


def critical_path_latency(dag: AppDag, job: Job, start: StageId) -> float:
    """Longest private-latency path from ``start`` (inclusive) to any sink."""
    longest = longest_path_table(dag, job.p_private)
    return longest[start]


def longest_path_table(dag: AppDag, weights: Sequence[float]) -> List[float]:
    table = [0.0] * dag.stage_count
    for k in reversed(dag.topological_order()):
        tails = [table[q] for q in dag.successors(k)]
        table[k] = weights[k] + (max(tails) if tails else 0.0)
    return table


def critical_path(dag: AppDag, job: Job, start: StageId) -> Tuple[StageId, ...]:
    """Stages of the longest private path from ``start``; ties go to the smallest stage id."""
    table = longest_path_table(dag, job.p_private)
    path = [start]
    while dag.successors(path[-1]):
        succ = dag.successors(path[-1])
        best = max(table[q] for q in succ)
        path.append(min(q for q in succ if table[q] == best))
    return tuple(path)


@dataclass(frozen=True)
class Placement:
    """Where one job stage runs: a private replica index, or the public cloud (``None``)."""

    replica: Optional[ReplicaId] = None

    @classmethod
    def private(cls, replica: ReplicaId) -> "Placement":
        if replica < 0:
            raise ValueError("replica index must be non-negative")
        return cls(int(replica))

    @property
    def is_public(self) -> bool:
        return self.replica is None

    def __str__(self):
        return "public" if self.is_public else f"private:{self.replica}"


PUBLIC = Placement(None)


@dataclass(frozen=True)
class StageRun:
    placement: Placement
    start_ms: float
    # earliest moment the stage may begin moving to the public cloud
    release_ms: float = 0.0


@dataclass
class Schedule:
    """Placement and start time for every (job, stage) pair."""

    entries: Dict[Tuple[JobId, StageId], StageRun] = field(default_factory=dict)

    def set(self, job: JobId, stage: StageId, placement: Placement, start_ms: float,
            release_ms: float = 0.0) -> None:
        self.entries[(job, stage)] = StageRun(placement, float(start_ms), float(release_ms))

    def __getitem__(self, key: Tuple[JobId, StageId]) -> StageRun:
        return self.entries[key]

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __iter__(self):
        return iter(sorted(self.entries.items()))

    def __len__(self):
        return len(self.entries)

    def placement_matrix(self, n_jobs: int, n_stages: int) -> List[List[int]]:
        """The e-matrix: 1 where a stage runs privately, 0 where it runs publicly."""
        return [[0 if self.entries[(j, k)].placement.is_public else 1 for k in range(n_stages)]
                for j in range(n_jobs)]

    def replica_sequences(self) -> Dict[Tuple[StageId, ReplicaId], List[JobId]]:
        seqs: Dict[Tuple[StageId, ReplicaId], List[Tuple[float, JobId]]] = {}
        for (j, k), run in self.entries.items():
            if not run.placement.is_public:
                seqs.setdefault((k, run.placement.replica), []).append((run.start_ms, j))
        return {key: [j for _, j in sorted(v)] for key, v in sorted(seqs.items())}
