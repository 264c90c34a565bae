import itertools
import math

import pytest
from hypothesis import given, strategies as st

from hybridsched.model import compute_capacity, job_private_runtime, job_public_cost
from hybridsched.sched import PriorityOrder, SchedulerState, StageQueue, priority_keys

from conftest import chain, diamond, job

S = 1000.0  # one second in ms


def state(dag, jobs, c_max, order=PriorityOrder.SPT):
    return SchedulerState(dag, jobs, c_max, order)


# -- initial partition --------------------------------------------------------

def test_partition_keeps_maximal_prefix():
    jobs = [job(0, [50]), job(1, [60]), job(2, [70])]
    kept, off = state(chain(1), jobs, 120).initial_partition()
    assert kept == [0, 1] and off == [2]


def test_partition_keeps_everything_when_capacity_suffices():
    jobs = [job(0, [50]), job(1, [60]), job(2, [70])]
    kept, off = state(chain(1), jobs, 180).initial_partition()
    assert off == []


def test_hcf_partition_offloads_cheapest_job():
    jobs = [job(0, [40], [900]), job(1, [40], [500]), job(2, [40], [100])]
    st_ = state(chain(1), jobs, 80, PriorityOrder.HCF)
    kept, off = st_.initial_partition()
    assert kept == [0, 1] and off == [2]
    # among all subsets that fit, the retained one saves the most
    costs = {j.id: job_public_cost(j, chain(1)) for j in jobs}
    best = max((s for r in range(4) for s in itertools.combinations(range(3), r) if 40 * len(s) <= 80),
               key=lambda s: sum(costs[j] for j in s))
    assert set(best) == set(kept)
    assert [r.reason for r in st_.offload_log] == ["initial"]


def test_partition_runs_once():
    s = state(chain(1), [job(0, [1])], 10)
    s.initial_partition()
    with pytest.raises(RuntimeError):
        s.initial_partition()


def test_forced_private_jobs_are_retained_and_flag_capacity():
    jobs = [job(0, [100], must_private={0}), job(1, [10])]
    s = state(chain(1), jobs, 50)
    kept, off = s.initial_partition()
    assert kept == [0] and off == [1]
    assert s.capacity_warning


@given(st.lists(st.integers(1, 100), min_size=1, max_size=12), st.integers(1, 600),
       st.sampled_from(list(PriorityOrder)))
def test_partition_prefix_maximality(cs, c_max, order):
    jobs = [job(i, [float(c)], [float(c * 7 % 97 + 1)]) for i, c in enumerate(cs)]
    dag = chain(1)
    s = state(dag, jobs, c_max, order)
    kept, off = s.initial_partition()
    keys = priority_keys(dag, jobs, order)
    ranked = sorted(range(len(jobs)), key=keys.__getitem__)
    assert ranked[:len(kept)] == kept
    used = math.fsum(job_private_runtime(jobs[j]) for j in kept)
    cap = compute_capacity(dag, c_max)
    assert used <= cap
    if off:
        assert used + job_private_runtime(jobs[off[0]]) > cap
    assert all(s.is_public(j, 0) for j in off)


# -- queues and ACD -----------------------------------------------------------

def test_queue_orders():
    jobs = [job(0, [30], [100]), job(1, [10], [900]), job(2, [10], [300])]
    dag = chain(1)
    spt = StageQueue(0, priority_keys(dag, jobs, "spt"))
    hcf = StageQueue(0, priority_keys(dag, jobs, "hcf"))
    fifo = StageQueue(0, priority_keys(dag, jobs, "fifo"))
    for q in (spt, hcf, fifo):
        for j in (0, 2, 1):
            q.push(j)
    assert spt.jobs() == [1, 2, 0]
    assert hcf.jobs() == [1, 2, 0]
    assert fifo.jobs() == [0, 1, 2]
    with pytest.raises(ValueError):
        spt.push(0)


def _queued(dag, jobs, c_max, queue):
    s = state(dag, jobs, c_max)
    for j in queue:
        s.queues[0].push(j)
    return s


def test_acd_single_job():
    s = _queued(chain(1), [job(0, [10 * S])], 60 * S, [0])
    assert s.acd(0, 0, 0.0) == 50 * S


def test_acd_counts_queue_ahead_divided_by_replicas():
    jobs = [job(0, [10 * S]), job(1, [10 * S]), job(2, [10 * S])]
    s = _queued(chain(1, replicas=2), jobs, 60 * S, [0, 1, 2])
    assert s.acd(0, 2, 0.0) == 40 * S


def test_acd_uses_critical_path():
    s = _queued(chain(2), [job(0, [30 * S, 45 * S])], 60 * S, [0])
    assert s.acd(0, 0, 20 * S) == -35 * S


def test_queue_change_offloads_negative_tail():
    jobs = [job(0, [10 * S]), job(1, [10 * S])]
    s = _queued(chain(1), jobs, 15 * S, [0, 1])
    assert s.on_queue_change(0, 0.0) == [1]
    assert s.queues[0].jobs() == [0]
    assert s.is_public(1, 0)
    assert s.offload_log[-1].reason == "acd"


def test_queue_change_noops():
    s = _queued(chain(1), [job(0, [1.0])], 1e9, [])
    assert s.on_queue_change(0, 0.0) == []
    s.queues[0].push(0)
    assert s.on_queue_change(0, 0.0) == [] and s.queues[0].jobs() == [0]


def test_removed_job_shrinks_delay_of_later_jobs():
    # j1 is offloaded, so j2 only waits behind j0
    jobs = [job(0, [10 * S]), job(1, [30 * S]), job(2, [10 * S])]
    s = state(chain(1), jobs, 25 * S, PriorityOrder.FIFO)
    for j in range(3):
        s.queues[0].push(j)
    assert s.on_queue_change(0, 0.0) == [1]
    assert s.queues[0].jobs() == [0, 2]
    for j in s.queues[0].jobs():
        assert s.acd(0, j, 0.0) >= 0


def test_must_private_jobs_are_never_offloaded():
    jobs = [job(0, [10 * S]), job(1, [10 * S], must_private={0})]
    s = _queued(chain(1), jobs, 15 * S, [0, 1])
    assert s.on_queue_change(0, 0.0) == []


def test_offload_marks_siblings_public():
    d = diamond()
    s = state(d, [job(0, [1, 1, 1, 1])], 1e9)
    s.initial_partition()
    assert s.on_replica_available(0, 0, 0.0) == 0
    s.on_stage_complete(0, 0, 1.0)
    assert s.queues[1].jobs() == [0] and s.queues[2].jobs() == [0]
    s.c_max = 0.5  # force a negative ACD at B
    assert s.on_queue_change(1, 1.0) == [0]
    assert s.is_public(0, 1) and s.is_public(0, 2) and s.is_public(0, 3)
    assert not s.queues[2]


# -- dispatch and completion --------------------------------------------------

def test_dispatch_takes_head():
    jobs = [job(0, [20]), job(1, [30]), job(2, [10])]
    s = _queued(chain(1), jobs, 1e9, [0, 2])
    assert s.queues[0].jobs() == [2, 0]
    assert s.on_replica_available(0, 0, 0.0) == 2
    assert s.queues[0].jobs() == [0]
    assert s.placement[2][0].replica == 0
    s.queues[0].pop_head()
    assert s.on_replica_available(0, 0, 0.0) is None


def test_dispatch_does_not_offload_positive_acd():
    jobs = [job(0, [10 * S]), job(1, [10 * S]), job(2, [10 * S])]
    s = _queued(chain(1), jobs, 25 * S, [0, 1])
    assert s.on_replica_available(0, 0, 0.0) == 0
    assert not s.is_public(1, 0)


def test_completion_enqueues_successor():
    s = state(chain(2), [job(0, [1, 1])], 1e9)
    s.initial_partition()
    s.on_replica_available(0, 0, 0.0)
    assert s.on_stage_complete(0, 0, 1.0) == [(1, "enqueue")]
    assert s.queues[1].jobs() == [0]


def test_join_waits_for_all_predecessors():
    s = state(diamond(), [job(0, [1, 1, 1, 1])], 1e9)
    s.initial_partition()
    s.on_replica_available(0, 0, 0.0)
    s.on_stage_complete(0, 0, 1.0)
    s.on_replica_available(1, 0, 1.0)
    s.on_replica_available(2, 0, 1.0)
    assert s.on_stage_complete(0, 1, 2.0) == []
    assert s.on_stage_complete(0, 2, 2.0) == [(3, "enqueue")]


def test_public_chain_successor_marked_without_queueing():
    s = state(chain(3), [job(0, [1, 1, 1])], 1e9)
    s.initial_partition()
    s.on_replica_available(0, 0, 0.0)
    s.on_stage_complete(0, 0, 1.0)
    s.c_max = 0.5
    s.on_queue_change(1, 1.0)
    assert s.on_stage_complete(0, 1, 5.0) == [(2, "public")]
    assert not s.queues[2]


def test_completion_errors():
    s = state(chain(1), [job(0, [1])], 1e9)
    s.initial_partition()
    with pytest.raises(RuntimeError):
        s.on_stage_complete(0, 0, 0.0)
    s.on_replica_available(0, 0, 0.0)
    s.on_stage_complete(0, 0, 1.0)
    with pytest.raises(RuntimeError):
        s.on_stage_complete(0, 0, 1.0)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=10), st.integers(1, 120), st.integers(1, 3),
       st.integers(0, 60))
def test_queue_change_postcondition(cs, c_max, replicas, now):
    jobs = [job(i, [float(c)]) for i, c in enumerate(cs)]
    s = state(chain(1, replicas=replicas), jobs, float(c_max))
    for j in range(len(jobs)):
        s.queues[0].push(j)
    s.on_queue_change(0, float(now))
    for j in s.queues[0].jobs():
        assert s.acd(0, j, float(now)) >= 0
