import math
import random

import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from hybridsched.exact import MilpInstance, enumerate_exhaustive, solve_exact
from hybridsched.model import Placement, Schedule, cost_of_execution, stage_cost
from hybridsched.sched import PriorityOrder
from hybridsched.sim import (EventKind, HybridScheduler, TruthTable, execute_fixed, run_all_private,
                             run_all_public, run_greedy)

from conftest import chain, diamond, job, random_instance

S = 1000.0


def test_single_job_runs_privately():
    r = run_greedy(chain(1), [job(0, [10 * S])], c_max=60 * S)
    assert r.records[(0, 0)].placement == Placement.private(0)
    assert r.makespan_ms == 10 * S and r.total_cost_usd == 0.0
    assert not r.deadline_missed


def test_two_jobs_one_forced_offload():
    dag = chain(1)
    jobs = [job(0, [40 * S], [25 * S], [2 * S], [3 * S]), job(1, [40 * S], [25 * S], [2 * S], [3 * S])]
    r = run_greedy(dag, jobs, c_max=60 * S)
    # T_max = 60 s < 80 s, so SPT keeps job 0 and offloads job 1 at t0
    assert r.offloaded_stage_count == 1 and r.offloaded_initial_count == 1
    assert r.records[(1, 0)].placement.is_public
    assert r.makespan_ms == max(40 * S, 2 * S + 25 * S + 3 * S)
    assert r.total_cost_usd == stage_cost(jobs[1], 0, dag)
    # the oracle agrees that exactly one job has to leave
    opt = enumerate_exhaustive(MilpInstance(dag, jobs, 60 * S))
    assert opt.public_cost_usd == stage_cost(jobs[1], 0, dag)
    assert sum(row[0] for row in opt.placement) == 1


def test_generous_deadline_matches_all_private():
    rng = random.Random(5)
    dag, jobs, _ = random_instance(rng, shapes=("chain", "fork"))
    g = run_greedy(dag, jobs, c_max=1e12)
    p = run_all_private(dag, jobs)
    assert g.offloaded_stage_count == 0 and g.total_cost_usd == 0.0
    assert g.makespan_ms == p.makespan_ms and g.trace == p.trace


def test_all_public_chain():
    r = run_all_public(chain(2), [job(0, [1, 1], [100, 200], [50, 50], [50, 50])])
    assert r.makespan_ms == 400


def test_all_public_diamond_takes_longer_branch():
    j = job(0, [1] * 4, [100, 300, 200, 50], [10] * 4, [20] * 4)
    r = run_all_public(diamond(), [j])
    assert r.makespan_ms == 10 + 100 + 300 + 50 + 20
    assert r.total_cost_usd == pytest.approx(math.fsum(stage_cost(j, k, diamond()) for k in range(4)), abs=1e-15)


@pytest.mark.parametrize("replicas, makespan", [(1, 80 * S), (2, 40 * S)])
def test_all_private_replicas(replicas, makespan):
    r = run_all_private(chain(1, replicas=replicas), [job(0, [40 * S]), job(1, [40 * S])])
    assert r.makespan_ms == makespan and r.total_cost_usd == 0.0


def test_reversed_replica_order_changes_makespan_only():
    dag = chain(2)
    jobs = [job(0, [10, 30]), job(1, [30, 10])]

    def fixed(order):
        s = Schedule()
        for k in range(2):
            for pos, j in enumerate(order):
                s.set(j, k, Placement.private(0), float(pos))
        return execute_fixed(dag, jobs, None, s)

    a, b = fixed([0, 1]), fixed([1, 0])
    assert (a.makespan_ms, b.makespan_ms) == (50, 70)
    assert a.total_cost_usd == b.total_cost_usd == 0.0


def test_cost_charged_on_true_latencies():
    dag = chain(1)
    jobs = [job(0, [40 * S], [1 * S]), job(1, [40 * S], [1 * S])]
    truth = TruthTable.from_jobs([job(0, [40 * S], [5 * S]), job(1, [40 * S], [5 * S])])
    r = run_greedy(dag, jobs, truth, c_max=60 * S)
    assert r.total_cost_usd == cost_of_execution(5 * S, 1024)


def test_truth_table_rejects_nonpositive():
    with pytest.raises(ValueError):
        TruthTable(((0.0,),), ((1.0,),), ((0.0,),), ((0.0,),))


def test_exact_schedule_replays_at_predicted_cost():
    rng = random.Random(11)
    for _ in range(10):
        dag, jobs, c = random_instance(rng)
        sol = solve_exact(MilpInstance(dag, jobs, c))
        if not sol.feasible:
            continue
        r = execute_fixed(dag, jobs, None, sol.schedule, c)
        assert r.total_cost_usd == pytest.approx(sol.public_cost_usd, abs=1e-12)
        assert not r.deadline_missed


def test_estimator_wraps_runs():
    dag, jobs = chain(1), [job(0, [40 * S], [20 * S]), job(1, [40 * S], [20 * S])]
    est = HybridScheduler(policy="hcf", c_max=60 * S)
    assert clone(est).get_params()["policy"] == "hcf"
    assert est.fit(dag, jobs).report_.offloaded_stage_count == 1
    assert est.score(dag, jobs) == -est.report_.total_cost_usd
    assert est.set_params(policy="all-public").fit(dag, jobs).report_.offloaded_stage_count == 2
    assert len(est.schedule_) == 2


# -- properties over random runs ----------------------------------------------

def _check_trace_invariants(dag, jobs, r):
    # exactly once
    assert set(r.records) == {(j.id, k) for j in jobs for k in dag.stages}
    # precedence
    for j in jobs:
        for p, q in dag.edges:
            assert r.records[(j.id, q)].start_ms >= r.records[(j.id, p)].finish_ms
    # replica exclusivity
    by_replica = {}
    for (j, k), rec in r.records.items():
        if not rec.placement.is_public:
            by_replica.setdefault((k, rec.placement.replica), []).append((rec.start_ms, rec.finish_ms))
    for spans in by_replica.values():
        spans.sort()
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    # public chain: public stages are closed under descendants
    for j in jobs:
        for k in dag.stages:
            if r.records[(j.id, k)].placement.is_public:
                assert all(r.records[(j.id, q)].placement.is_public for q in dag.descendants(k))
    # cost recomputed from the trace alone
    public = [(e.job, e.stage) for e in r.trace if e.kind is EventKind.PublicStageComplete]
    assert len(public) == r.offloaded_stage_count
    cost = math.fsum(stage_cost(jobs[j], k, dag) for j, k in public)
    assert abs(cost - r.total_cost_usd) <= 1e-12
    assert r.trace == sorted(r.trace)


@given(st.integers(0, 10 ** 6), st.sampled_from(list(PriorityOrder)), st.floats(0.2, 1.5))
def test_greedy_run_invariants(seed, order, tightness):
    rng = random.Random(seed)
    dag, jobs, _ = random_instance(rng, max_jobs=6, max_stages=3, shapes=("chain", "fork"))
    c = tightness * max(sum(j.p_private) for j in jobs) * len(jobs) / 2
    r = run_greedy(dag, jobs, order=order, c_max=c)
    _check_trace_invariants(dag, jobs, r)
    assert run_all_public(dag, jobs).total_cost_usd >= r.total_cost_usd - 1e-15
    assert r.makespan_ms == max(rec.finish_ms + (jobs[j].download_ms[k] if rec.placement.is_public else 0.0)
                                for (j, k), rec in r.records.items() if not dag.successors(k))


@given(st.integers(0, 10 ** 6), st.sampled_from(list(PriorityOrder)))
def test_replay_is_bit_exact(seed, order):
    rng = random.Random(seed)
    dag, jobs, c = random_instance(rng, max_jobs=6, max_stages=3, shapes=("chain", "fork"))
    r = run_greedy(dag, jobs, order=order, c_max=c)
    again = execute_fixed(dag, jobs, None, r.to_schedule(), c)
    assert again.trace == r.trace
    assert again.makespan_ms == r.makespan_ms and again.total_cost_usd == r.total_cost_usd
    assert again.records == r.records


def test_runs_are_deterministic():
    rng = random.Random(9)
    dag, jobs, c = random_instance(rng, max_jobs=4, max_stages=3, shapes=("fork",))
    a = run_greedy(dag, jobs, order="hcf", c_max=c)
    b = run_greedy(dag, jobs, order="hcf", c_max=c)
    assert a.trace == b.trace and a.offload_log == b.offload_log
