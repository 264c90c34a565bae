"""Transfer rules and earliest-start list scheduling shared by the simulator and the exact solver.

Latency conventions (milliseconds):

* ``upload_ms[k]`` moves the input of stage ``k`` from private to public storage.
  It is paid when a public stage has a private predecessor, or is a public source
  (batch inputs live in the private cloud).
* ``download_ms[k]`` moves the output of stage ``k`` back to private storage.
  It is paid on a public-to-private edge and after a public sink.
"""

from __future__ import annotations

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .model import AppDag, Job, JobId, Placement, ReplicaId, Schedule, StageId


def duration(job: Job, k: StageId, public: bool) -> float:
    return job.p_public[k] if public else job.p_private[k]


def edge_delay(job: Job, p: StageId, q: StageId, p_public: bool, q_public: bool) -> float:
    if q_public and not p_public:
        return job.upload_ms[q]
    if p_public and not q_public:
        return job.download_ms[p]
    return 0.0


def result_delay(job: Job, k: StageId, public: bool) -> float:
    return job.download_ms[k] if public else 0.0


def ready_time(dag: AppDag, job: Job, k: StageId, public: Sequence[bool],
               finish: Mapping[StageId, float], t0: float = 0.0, release: float = 0.0) -> float:
    """Earliest start of stage ``k`` given its predecessors' finish times."""
    preds = dag.predecessors(k)
    if not preds:
        base = max(t0, release)
        return base + job.upload_ms[k] if public[k] else base
    if public[k]:
        priv = [finish[p] for p in preds if not public[p]]
        pub = [finish[p] for p in preds if public[p]]
        t = max(pub) if pub else t0
        if priv:
            t = max(t, max(max(priv), release) + job.upload_ms[k])
        return t
    return max(finish[p] + edge_delay(job, p, k, public[p], False) for p in preds)


def job_result_time(dag: AppDag, job: Job, public: Sequence[bool], finish: Mapping[StageId, float]) -> float:
    return max(finish[k] + result_delay(job, k, public[k]) for k in dag.sinks)


def list_schedule(dag: AppDag, batch: Sequence[Job], public: Sequence[Sequence[bool]],
                  sequences: Mapping[Tuple[StageId, ReplicaId], Sequence[JobId]],
                  release: Optional[Mapping[Tuple[JobId, StageId], float]] = None,
                  t0: float = 0.0) -> Tuple[Schedule, Dict[Tuple[JobId, StageId], float]]:
    """Earliest start times for fixed placements and per-replica job orders.

    Every private ``(job, stage)`` must appear in exactly one replica sequence.
    ``release`` optionally delays the upload of public stages (the moment the
    scheduler decided to offload).
    """
    release = release or {}
    seen = set()
    for (k, r), jobs in sequences.items():
        if not 0 <= r < dag.replicas[k]:
            raise ValueError(f"replica {r} out of range for stage {k}")
        for j in jobs:
            if public[j][k] or (j, k) in seen:
                raise ValueError(f"job {j} stage {k} is public or sequenced twice")
            seen.add((j, k))
    for job in batch:
        for k in dag.stages:
            if not public[job.id][k] and (job.id, k) not in seen:
                raise ValueError(f"private job {job.id} stage {k} is missing from every replica sequence")

    sched = Schedule()
    finish: Dict[Tuple[JobId, StageId], float] = {}
    per_job_finish: List[Dict[StageId, float]] = [{} for _ in batch]
    for k in dag.topological_order():
        for job in batch:
            if public[job.id][k]:
                s = ready_time(dag, job, k, public[job.id], per_job_finish[job.id], t0,
                               release.get((job.id, k), t0))
                f = s + job.p_public[k]
                sched.set(job.id, k, Placement(None), s, release.get((job.id, k), t0))
                finish[(job.id, k)] = per_job_finish[job.id][k] = f
        for r in range(dag.replicas[k]):
            free = t0
            for j in sequences.get((k, r), ()):
                job = batch[j]
                s = max(free, ready_time(dag, job, k, public[j], per_job_finish[j], t0))
                f = s + job.p_private[k]
                sched.set(j, k, Placement.private(r), s)
                finish[(j, k)] = per_job_finish[j][k] = free = f
    return sched, finish
