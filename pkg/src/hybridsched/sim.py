"""Deterministic discrete-event simulator of the hybrid private/public platform."""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator

from .model import (DEFAULT_COST_MODEL, AppDag, CostModel, Job, JobId, Placement, Schedule,
                    StageId, check_batch, cost_of_execution)
from .sched import OffloadRecord, PriorityOrder, SchedulerState
from .timing import list_schedule


class EventKind(enum.IntEnum):
    # value doubles as the tie-break rank among events sharing a timestamp
    BatchArrival = -1
    PublicStageComplete = 0
    PrivateStageComplete = 1
    PublicUploadComplete = 2
    ResultDownloadComplete = 3


@dataclass(frozen=True, order=True)
class SimEvent:
    time_ms: float
    kind: EventKind
    job: int
    stage: int
    replica: int = -1

    @property
    def placement(self) -> str:
        if self.kind is EventKind.BatchArrival:
            return "-"
        return "private" if self.kind is EventKind.PrivateStageComplete else "public"


@dataclass(frozen=True)
class TruthTable:
    """Realised latencies per (job, stage); may differ from the scheduler's estimates."""

    p_private: Tuple[Tuple[float, ...], ...]
    p_public: Tuple[Tuple[float, ...], ...]
    upload_ms: Tuple[Tuple[float, ...], ...]
    download_ms: Tuple[Tuple[float, ...], ...]

    def __post_init__(self):
        for name in ("p_private", "p_public"):
            rows = getattr(self, name)
            if any(not (v > 0 and math.isfinite(v)) for row in rows for v in row):
                raise ValueError(f"true {name} latencies must be strictly positive")
        for name in ("upload_ms", "download_ms"):
            if any(not (v >= 0 and math.isfinite(v)) for row in getattr(self, name) for v in row):
                raise ValueError(f"true {name} latencies must be non-negative")

    @classmethod
    def from_jobs(cls, jobs: Sequence[Job]) -> "TruthTable":
        return cls(tuple(j.p_private for j in jobs), tuple(j.p_public for j in jobs),
                   tuple(j.upload_ms for j in jobs), tuple(j.download_ms for j in jobs))

    def apply(self, batch: Sequence[Job]) -> List[Job]:
        """Copies of ``batch`` carrying the true latencies."""
        if len(batch) != len(self.p_private):
            raise ValueError("truth table and batch disagree on the number of jobs")
        return [Job(j.id, self.p_private[j.id], self.p_public[j.id], self.upload_ms[j.id],
                    self.download_ms[j.id], j.must_private, j.features) for j in batch]


@dataclass(frozen=True)
class StageRecord:
    placement: Placement
    start_ms: float
    finish_ms: float
    release_ms: float = 0.0


@dataclass
class SimReport:
    makespan_ms: float
    total_cost_usd: float
    offloaded_stage_count: int
    offloaded_initial_count: int
    records: Dict[Tuple[JobId, StageId], StageRecord]
    deadline_missed: bool
    trace: List[SimEvent]
    c_max: float = math.inf
    policy: str = ""
    offload_log: List[OffloadRecord] = field(default_factory=list)
    capacity_warning: bool = False

    @property
    def total_stage_count(self) -> int:
        return len(self.records)

    @property
    def offloaded_fraction(self) -> float:
        return self.offloaded_stage_count / self.total_stage_count

    def to_schedule(self) -> Schedule:
        sched = Schedule()
        for (j, k), rec in sorted(self.records.items()):
            sched.set(j, k, rec.placement, rec.start_ms, rec.release_ms)
        return sched

    def summary(self) -> Dict[str, object]:
        return {
            "policy": self.policy,
            "c_max_ms": self.c_max,
            "makespan_ms": self.makespan_ms,
            "total_cost_usd": self.total_cost_usd,
            "offloaded_stage_count": self.offloaded_stage_count,
            "offloaded_initial_count": self.offloaded_initial_count,
            "offloaded_fraction": self.offloaded_fraction,
            "deadline_missed": self.deadline_missed,
            "capacity_warning": self.capacity_warning,
        }


def _report_cost(dag: AppDag, truth_jobs: Sequence[Job], public: Sequence[Tuple[int, int]],
                 cm: CostModel) -> float:
    return math.fsum(cost_of_execution(truth_jobs[j].p_public[k], dag.memory_mb[k], cm) for j, k in public)


class _GreedySimulation:
    def __init__(self, dag, batch, truth_jobs, order, c_max, cm):
        self.dag = dag
        self.truth = truth_jobs
        self.cm = cm
        self.state = SchedulerState(dag, batch, c_max, order, 0.0, cm)
        self.heap: List[tuple] = []
        self.trace: List[SimEvent] = []
        self.idle = [[True] * n for n in dag.replicas]
        self.start: Dict[Tuple[int, int], float] = {}
        self.finish: Dict[Tuple[int, int], float] = {}
        self.release: Dict[Tuple[int, int], float] = {}
        self.upload: Dict[Tuple[int, int], str] = {}
        self.result_time: Dict[int, float] = {}

    def push(self, time, kind, job, stage, replica=-1):
        heapq.heappush(self.heap, (time, int(kind), job, stage, replica))

    def run(self) -> None:
        self.push(0.0, EventKind.BatchArrival, -1, -1)
        while self.heap:
            now = self.heap[0][0]
            while self.heap and self.heap[0][0] == now:
                time, kind, job, stage, replica = heapq.heappop(self.heap)
                self.handle(SimEvent(time, EventKind(kind), job, stage, replica))
            self.dispatch(now)

    def handle(self, ev: SimEvent) -> None:
        self.trace.append(ev)
        now, j, k = ev.time_ms, ev.job, ev.stage
        if ev.kind is EventKind.BatchArrival:
            self.state.initial_partition()
            self.drain(now)
        elif ev.kind is EventKind.PrivateStageComplete:
            self.idle[k][ev.replica] = True
            self.complete(j, k, now)
        elif ev.kind is EventKind.PublicStageComplete:
            self.complete(j, k, now)
            if not self.dag.successors(k):
                self.push(now + self.truth[j].download_ms[k], EventKind.ResultDownloadComplete, j, k)
        elif ev.kind is EventKind.PublicUploadComplete:
            self.upload[(j, k)] = "done"
            self.advance_public(j, k, now)
        elif ev.kind is EventKind.ResultDownloadComplete:
            self.result_time[j] = max(self.result_time.get(j, 0.0), now)

    def complete(self, j, k, now) -> None:
        self.finish[(j, k)] = now
        if not self.dag.successors(k) and not self.state.is_public(j, k):
            self.result_time[j] = max(self.result_time.get(j, 0.0), now)
        self.state.on_stage_complete(j, k, now)
        self.drain(now)
        for q in self.dag.successors(k):
            self.advance_public(j, q, now)

    def drain(self, now) -> None:
        while self.state.new_public:
            j, k = self.state.new_public.pop(0)
            self.release[(j, k)] = now
            self.advance_public(j, k, now)

    def advance_public(self, j, q, now) -> None:
        st = self.state
        if (j, q) in self.start or not st.is_public(j, q):
            return
        preds = self.dag.predecessors(q)
        private_preds = [p for p in preds if not st.is_public(j, p)]
        if not preds or private_preds:
            status = self.upload.get((j, q))
            if status is None:
                if all(st.completed[j][p] for p in private_preds):
                    self.upload[(j, q)] = "pending"
                    self.push(now + self.truth[j].upload_ms[q], EventKind.PublicUploadComplete, j, q)
                return
            if status != "done":
                return
        if all(st.completed[j][p] for p in preds):
            self.start[(j, q)] = now
            self.push(now + self.truth[j].p_public[q], EventKind.PublicStageComplete, j, q)

    def dispatch(self, now) -> None:
        for k in self.dag.stages:
            for r in range(self.dag.replicas[k]):
                if not self.idle[k][r]:
                    continue
                j = self.state.on_replica_available(k, r, now)
                if j is None:
                    break
                self.idle[k][r] = False
                self.start[(j, k)] = now
                self.push(now + self.truth[j].p_private[k], EventKind.PrivateStageComplete, j, k, r)
                self.drain(now)

    def report(self, policy: str) -> SimReport:
        st = self.state
        n_stages = self.dag.stage_count
        missing = [(j, k) for j in range(len(st.batch)) for k in range(n_stages) if (j, k) not in self.finish]
        if missing:
            raise RuntimeError(f"simulation ended with unfinished stages {missing[:5]}")
        records = {}
        public = []
        for (j, k), s in sorted(self.start.items()):
            placement = st.placement[j][k]
            if placement.is_public:
                public.append((j, k))
            records[(j, k)] = StageRecord(placement, s, self.finish[(j, k)], self.release.get((j, k), 0.0))
        makespan = max(self.result_time.values())
        return SimReport(
            makespan_ms=makespan,
            total_cost_usd=_report_cost(self.dag, self.truth, public, self.cm),
            offloaded_stage_count=len(public),
            offloaded_initial_count=len(st.initial_offloaded),
            records=records,
            deadline_missed=makespan > st.c_max,
            trace=self.trace,
            c_max=st.c_max,
            policy=policy,
            offload_log=list(st.offload_log),
            capacity_warning=st.capacity_warning,
        )


def _truth_jobs(batch: Sequence[Job], truth: Optional[TruthTable]) -> List[Job]:
    return list(batch) if truth is None else truth.apply(batch)


def run_greedy(dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable] = None,
               order: PriorityOrder = PriorityOrder.SPT, c_max: float = math.inf,
               cost_model: CostModel = DEFAULT_COST_MODEL) -> SimReport:
    """Simulate the greedy scheduler.

    ``batch`` carries the scheduler's latency estimates; ``truth`` (default: the
    estimates themselves) drives the actual execution times and the bill.
    """
    check_batch(dag, batch)
    sim = _GreedySimulation(dag, batch, _truth_jobs(batch, truth), order, c_max, cost_model)
    sim.run()
    return sim.report(PriorityOrder(order).value)


def run_all_private(dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable] = None,
                    order: PriorityOrder = PriorityOrder.SPT,
                    cost_model: CostModel = DEFAULT_COST_MODEL) -> SimReport:
    # an infinite deadline never triggers an offload
    rep = run_greedy(dag, batch, truth, order, math.inf, cost_model)
    rep.policy = "all-private"
    return rep


def execute_fixed(dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable], schedule: Schedule,
                  c_max: float = math.inf, cost_model: CostModel = DEFAULT_COST_MODEL,
                  policy: str = "fixed") -> SimReport:
    """Replay given placements and per-replica orders against the true latencies."""
    check_batch(dag, batch)
    jobs = _truth_jobs(batch, truth)
    n, K = len(jobs), dag.stage_count
    if len(schedule) != n * K or any((j, k) not in schedule for j in range(n) for k in range(K)):
        raise ValueError("schedule must place every (job, stage) exactly once")
    public = [[schedule[(j, k)].placement.is_public for k in range(K)] for j in range(n)]
    release = {(j, k): run.release_ms for (j, k), run in schedule if run.placement.is_public}
    timed, finish = list_schedule(dag, jobs, public, schedule.replica_sequences(), release)

    events: List[SimEvent] = [SimEvent(0.0, EventKind.BatchArrival, -1, -1)]
    records = {}
    result_time: Dict[int, float] = {}
    public_stages = []
    for (j, k), run in timed:
        f = finish[(j, k)]
        records[(j, k)] = StageRecord(run.placement, run.start_ms, f, run.release_ms)
        sink = not dag.successors(k)
        if run.placement.is_public:
            public_stages.append((j, k))
            events.append(SimEvent(f, EventKind.PublicStageComplete, j, k))
            if not dag.predecessors(k) or any(not public[j][p] for p in dag.predecessors(k)):
                events.append(SimEvent(_upload_done(dag, jobs[j], k, public[j], finish, run.release_ms),
                                       EventKind.PublicUploadComplete, j, k))
            if sink:
                done = f + jobs[j].download_ms[k]
                events.append(SimEvent(done, EventKind.ResultDownloadComplete, j, k))
                result_time[j] = max(result_time.get(j, 0.0), done)
        else:
            events.append(SimEvent(f, EventKind.PrivateStageComplete, j, k, run.placement.replica))
            if sink:
                result_time[j] = max(result_time.get(j, 0.0), f)
    events.sort()
    makespan = max(result_time.values())
    whole_jobs = sum(all(row) for row in public)
    return SimReport(
        makespan_ms=makespan,
        total_cost_usd=_report_cost(dag, jobs, public_stages, cost_model),
        offloaded_stage_count=len(public_stages),
        offloaded_initial_count=whole_jobs,
        records=records,
        deadline_missed=makespan > c_max,
        trace=events,
        c_max=c_max,
        policy=policy,
    )


def _upload_done(dag, job, k, public, finish, release) -> float:
    priv = [finish[(job.id, p)] for p in dag.predecessors(k) if not public[p]]
    return max([release] + priv) + job.upload_ms[k]


def run_all_public(dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable] = None,
                   cost_model: CostModel = DEFAULT_COST_MODEL) -> SimReport:
    sched = Schedule()
    for job in batch:
        for k in dag.stages:
            sched.set(job.id, k, Placement(None), 0.0)
    return execute_fixed(dag, batch, truth, sched, cost_model=cost_model, policy="all-public")


class HybridScheduler(BaseEstimator):
    """Estimator-style front end to the simulator.

    ``fit`` runs one batch and stores the outcome in ``report_`` and
    ``schedule_``; ``get_params``/``set_params`` make policies easy to sweep.

    Parameters
    ----------
    policy : {"spt", "hcf", "fifo", "all-public", "all-private"}
    c_max : float
        Deadline in milliseconds (ignored by the all-public/all-private baselines).
    cost_model : CostModel or None
    """

    def __init__(self, policy: str = "spt", c_max: float = 60_000.0, cost_model: Optional[CostModel] = None):
        self.policy = policy
        self.c_max = c_max
        self.cost_model = cost_model

    def fit(self, dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable] = None):
        cm = self.cost_model or DEFAULT_COST_MODEL
        if self.policy == "all-public":
            rep = run_all_public(dag, batch, truth, cm)
        elif self.policy == "all-private":
            rep = run_all_private(dag, batch, truth, PriorityOrder.SPT, cm)
        else:
            if not self.c_max > 0:
                raise ValueError("c_max must be positive")
            rep = run_greedy(dag, batch, truth, PriorityOrder(self.policy), self.c_max, cm)
        self.report_ = rep
        self.schedule_ = rep.to_schedule()
        return self

    def score(self, dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable] = None) -> float:
        """Negative public cost of the run (higher is better)."""
        return -self.fit(dag, batch, truth).report_.total_cost_usd
