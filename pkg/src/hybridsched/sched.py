"""Greedy deadline-aware scheduler: initial partition, per-stage priority queues, ACD offloading."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .model import (DEFAULT_COST_MODEL, PUBLIC, AppDag, CostModel, Job, JobId, Placement, StageId,
                    check_batch, compute_capacity, job_private_runtime, job_public_cost,
                    longest_path_table)


class PriorityOrder(str, enum.Enum):
    SPT = "spt"
    HCF = "hcf"
    FIFO = "fifo"


def priority_keys(dag: AppDag, batch: Sequence[Job], order: PriorityOrder,
                  cm: CostModel = DEFAULT_COST_MODEL) -> Dict[JobId, tuple]:
    """Sort keys (ascending = towards the queue head), fixed for the whole batch."""
    order = PriorityOrder(order)
    if order is PriorityOrder.SPT:
        return {j.id: (job_private_runtime(j), j.id) for j in batch}
    if order is PriorityOrder.HCF:
        return {j.id: (-job_public_cost(j, dag, cm), j.id) for j in batch}
    return {j.id: (j.id, j.id) for j in batch}


class StageQueue:
    """Jobs waiting for one stage, kept sorted by their batch priority key."""

    def __init__(self, stage: StageId, keys: Dict[JobId, tuple]):
        self.stage = stage
        self._keys = keys
        self._items: List[tuple] = []

    def push(self, job: JobId) -> None:
        if job in self:
            raise ValueError(f"job {job} already queued at stage {self.stage}")
        bisect.insort(self._items, (self._keys[job], job))

    def pop_head(self) -> JobId:
        return self._items.pop(0)[1]

    def remove(self, job: JobId) -> None:
        self._items.remove((self._keys[job], job))

    def jobs(self) -> List[JobId]:
        return [j for _, j in self._items]

    def __contains__(self, job) -> bool:
        return job in self._keys and (self._keys[job], job) in self._items

    def __len__(self):
        return len(self._items)

    def __bool__(self):
        return bool(self._items)


@dataclass
class OffloadRecord:
    time_ms: float
    job: JobId
    stage: StageId
    reason: str  # "initial" or "acd"


class SchedulerState:
    """Single-writer state machine driving the greedy algorithm.

    The event handlers must be called in timestamp order by a driver (the
    simulator). Latencies seen here are the scheduler's *estimates*.
    """

    def __init__(self, dag: AppDag, batch: Sequence[Job], c_max: float,
                 order: PriorityOrder = PriorityOrder.SPT, t0: float = 0.0,
                 cost_model: CostModel = DEFAULT_COST_MODEL):
        check_batch(dag, batch)
        if not c_max > 0:
            raise ValueError("c_max must be positive")
        self.dag = dag
        self.batch = list(batch)
        self.c_max = float(c_max)
        self.t0 = float(t0)
        self.order = PriorityOrder(order)
        self.cost_model = cost_model
        self.keys = priority_keys(dag, batch, self.order, cost_model)
        self.queues = [StageQueue(k, self.keys) for k in dag.stages]
        self.replica_busy_until = [[self.t0] * n for n in dag.replicas]
        self.placement: List[List[Optional[Placement]]] = [[None] * dag.stage_count for _ in batch]
        self.completed = [[False] * dag.stage_count for _ in batch]
        self.offload_log: List[OffloadRecord] = []
        self.capacity_warning = False
        self.initial_offloaded: List[JobId] = []
        # (job, stage) pairs turned public since the driver last drained this list
        self.new_public: List[Tuple[JobId, StageId]] = []
        self._tails = [longest_path_table(dag, j.p_private) for j in self.batch]
        self._started = False

    @property
    def deadline(self) -> float:
        return self.t0 + self.c_max

    def is_public(self, job: JobId, stage: StageId) -> bool:
        p = self.placement[job][stage]
        return p is not None and p.is_public

    def on_public_chain(self, job: JobId) -> bool:
        return any(p is not None and p.is_public for p in self.placement[job])

    # -- initialization ---------------------------------------------------

    def initial_partition(self) -> Tuple[List[JobId], List[JobId]]:
        """Offload whole jobs from the priority tail until the rest fit in ``T_max``."""
        if self._started:
            raise RuntimeError("initial_partition may run only once")
        self._started = True
        capacity = compute_capacity(self.dag, self.c_max)
        ranked = sorted(self.batch, key=lambda j: self.keys[j.id])
        forced = [j for j in ranked if j.must_private]
        used = math.fsum(job_private_runtime(j) for j in forced)
        if used > capacity:
            self.capacity_warning = True
        retained = {j.id for j in forced}
        for job in ranked:
            if job.id in retained:
                continue
            c = job_private_runtime(job)
            if used + c > capacity:
                break
            used += c
            retained.add(job.id)
        offloaded = [j.id for j in ranked if j.id not in retained]
        for j in offloaded:
            for k in self.dag.stages:
                self._mark_public(j, k, self.t0, "initial")
        self.initial_offloaded = list(offloaded)
        kept = [j.id for j in ranked if j.id in retained]
        for src in self.dag.sources:
            for j in kept:
                self.queues[src].push(j)
            self.on_queue_change(src, self.t0)
        return kept, offloaded

    # -- offload test -------------------------------------------------------

    def acd(self, stage: StageId, job: JobId, now: float) -> float:
        """Apparent closeness to deadline of ``job`` queued at ``stage``."""
        q = self.queues[stage].jobs()
        ahead = q[:q.index(job)]
        return self._acd(stage, job, now, math.fsum(self.batch[y].p_private[stage] for y in ahead))

    def _acd(self, stage: StageId, job: JobId, now: float, ahead_work: float) -> float:
        queue_delay = ahead_work / self.dag.replicas[stage]
        return self.deadline - (now + queue_delay + self._tails[job][stage])

    def on_queue_change(self, stage: StageId, now: float) -> List[JobId]:
        """Offload every queued job whose ACD is negative, scanning head to tail."""
        snapshot = self.queues[stage].jobs()
        offloaded = []
        ahead: List[float] = []
        for j in snapshot:
            if not self.batch[j].must_private and self._acd(stage, j, now, math.fsum(ahead)) < 0:
                offloaded.append(j)
                continue
            ahead.append(self.batch[j].p_private[stage])
        for j in offloaded:
            self._offload_job(j, stage, now)
        return offloaded

    def _offload_job(self, job: JobId, stage: StageId, now: float) -> None:
        # every not-yet-started stage goes public, siblings of `stage` included
        touched = []
        for k in [stage] + [k for k in self.dag.stages if k != stage]:
            if self.placement[job][k] is None:
                if job in self.queues[k]:
                    self.queues[k].remove(job)
                    if k != stage:
                        touched.append(k)
                self._mark_public(job, k, now, "acd")
        for k in touched:
            self.on_queue_change(k, now)

    def _mark_public(self, job: JobId, stage: StageId, now: float, reason: str) -> None:
        self.placement[job][stage] = PUBLIC
        self.offload_log.append(OffloadRecord(now, job, stage, reason))
        self.new_public.append((job, stage))

    # -- dispatch and completion -------------------------------------------

    def on_replica_available(self, stage: StageId, replica: int, now: float) -> Optional[JobId]:
        queue = self.queues[stage]
        if not queue:
            return None
        job = queue.pop_head()
        self.placement[job][stage] = Placement.private(replica)
        self.on_queue_change(stage, now)
        return job

    def on_stage_complete(self, job: JobId, stage: StageId, now: float) -> List[Tuple[StageId, str]]:
        """Mark ``stage`` done; return ``(successor, "enqueue" | "public")`` for newly ready stages."""
        if self.placement[job][stage] is None:
            raise RuntimeError(f"stage {stage} of job {job} completed without being dispatched")
        if self.completed[job][stage]:
            raise RuntimeError(f"stage {stage} of job {job} completed twice")
        self.completed[job][stage] = True
        actions = []
        for q in self.dag.successors(stage):
            if not all(self.completed[job][p] for p in self.dag.predecessors(q)):
                continue
            if self.is_public(job, q):
                actions.append((q, "public"))
            elif self.placement[job][q] is None:
                self.queues[q].push(job)
                actions.append((q, "enqueue"))
                self.on_queue_change(q, now)
        return actions
