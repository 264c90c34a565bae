import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from hybridsched.model import (AppDag, CostModel, DagError, Job, Placement, Schedule, check_batch,
                               compute_capacity, cost_of_execution, critical_path, critical_path_latency,
                               job_private_runtime, stage_cost)

from conftest import DIAMOND_EDGES, chain, diamond, job

RATE = Fraction(1667, 10 ** 11)  # 0.00001667 USD per GB-second, per millisecond


def eq1(t_ms, memory_mb):
    """Exact rational evaluation of the billing formula."""
    billed = 100 * math.ceil(Fraction(t_ms) / 100)
    return billed * Fraction(memory_mb) / 1024 * RATE


# -- cost ---------------------------------------------------------------------

@pytest.mark.parametrize("t, mem, expected", [
    (150, 1024, 3.334e-6),
    (0, 2048, 0.0),
    (100, 2048, 3.334e-6),
    (1, 1024, 1.667e-6),
    (250, 512, 2.5005e-6),
])
def test_cost_examples(t, mem, expected):
    assert cost_of_execution(t, mem) == pytest.approx(expected, abs=1e-12)


def test_cost_rejects_negative_time():
    with pytest.raises(ValueError):
        cost_of_execution(-1.0, 1024)


def test_cost_model_fields_must_be_positive():
    with pytest.raises(ValueError):
        CostModel(granularity_ms=0)


def test_stage_cost_uses_public_latency_and_stage_memory():
    dag = AppDag.chain(2, memory_mb=(1024.0, 512.0))
    j = job(0, [9999.0, 9999.0], [150.0, 250.0])
    assert stage_cost(j, 0, dag) == pytest.approx(3.334e-6, abs=1e-12)
    assert stage_cost(j, 1, dag) == pytest.approx(2.5005e-6, abs=1e-12)


@given(st.floats(0, 1e6, allow_nan=False), st.sampled_from([128.0, 512.0, 1024.0, 1536.0, 3008.0]))
def test_cost_matches_rational_evaluation(t, mem):
    assert abs(cost_of_execution(t, mem) - float(eq1(t, mem))) <= 1e-12


@given(st.floats(0, 1e5, allow_nan=False), st.floats(0, 1e5, allow_nan=False))
def test_cost_is_monotone_step(t1, t2):
    lo, hi = sorted((t1, t2))
    assert cost_of_execution(lo, 1024) <= cost_of_execution(hi, 1024)
    assert cost_of_execution(lo, 1024) == cost_of_execution(100 * math.ceil(lo / 100), 1024)


@given(st.floats(0, 1e6, allow_nan=False), st.floats(1, 1e4, allow_nan=False))
def test_cost_doubles_with_memory_exactly(t, mem):
    assert cost_of_execution(t, 2 * mem) == 2 * cost_of_execution(t, mem)


# -- aggregates ---------------------------------------------------------------

@pytest.mark.parametrize("private, total", [([40, 60], 100), ([7], 7), ([10, 10, 10, 10], 40)])
def test_job_private_runtime(private, total):
    assert job_private_runtime(job(0, private)) == total


@pytest.mark.parametrize("replicas, c_max, capacity", [
    ((2, 2), 300000, 1_200_000), ((1,), 60000, 60000), ((2, 2, 2, 2), 200000, 1_600_000)])
def test_compute_capacity(replicas, c_max, capacity):
    dag = AppDag.chain(len(replicas), replicas=list(replicas))
    assert compute_capacity(dag, c_max) == capacity


def _paths(dag, k):
    if not dag.successors(k):
        return [[k]]
    return [[k] + p for q in dag.successors(k) for p in _paths(dag, q)]


def test_critical_path_examples():
    assert critical_path_latency(chain(2), job(0, [30, 50]), 0) == 80
    d = diamond()
    j = job(0, [10, 40, 5, 2])
    # enumerate both branches explicitly
    assert max(sum(j.p_private[s] for s in p) for p in _paths(d, 0)) == 52
    assert critical_path_latency(d, j, 0) == 52
    assert critical_path(d, j, 0) == (0, 1, 3)
    assert critical_path_latency(d, job(0, [1, 1, 1, 9]), 3) == 9


def test_critical_path_ties_go_to_smallest_stage():
    assert critical_path(diamond(), job(0, [1, 5, 5, 1]), 0) == (0, 1, 3)


@given(st.lists(st.integers(1, 1000), min_size=4, max_size=4))
def test_critical_path_properties(p):
    d, j = diamond(), job(0, [float(x) for x in p])
    for k in d.stages:
        cp = critical_path_latency(d, j, k)
        assert cp == max(sum(j.p_private[s] for s in path) for path in _paths(d, k))
        assert cp >= j.p_private[k]
        assert (cp == j.p_private[k]) == (not d.successors(k))
    assert job_private_runtime(j) >= critical_path_latency(d, j, 0)


# -- DAG validation -----------------------------------------------------------

def test_valid_two_stage_dag():
    dag = AppDag(("a", "b"), ((0, 1),), (1, 1), (1024, 1024))
    assert dag.out_degree == (1, 0)
    assert dag.sources == (0,) and dag.sinks == (1,)


@pytest.mark.parametrize("names, edges, replicas, memory, rule", [
    (("a", "b"), ((0, 1), (1, 0)), (1, 1), (1, 1), "cycle"),
    (("a", "b", "c"), ((0, 1),), (1, 1, 1), (1, 1, 1), "reachability"),
    (("a",), ((0, 0),), (1,), (1,), "cycle"),
    ((), (), (), (), "empty"),
    (("a", "a"), ((0, 1),), (1, 1), (1, 1), "names"),
    (("a", "b"), ((0, 1),), (0, 1), (1, 1), "replicas"),
    (("a", "b"), ((0, 1),), (1, 1), (1, -2), "memory"),
    (("a", "b"), ((0, 5),), (1, 1), (1, 1), "edge"),
])
def test_dag_rules(names, edges, replicas, memory, rule):
    with pytest.raises(DagError) as exc:
        AppDag(names, edges, replicas, memory)
    assert exc.value.rule == rule


def test_must_private_must_name_a_stage():
    with pytest.raises(DagError) as exc:
        AppDag(("a",), (), (1,), (1,), frozenset({3}))
    assert exc.value.rule == "must_private"


@given(st.permutations(range(4)))
def test_out_degree_recount_and_topological_order(perm):
    # relabel the diamond and check structural invariants
    edges = tuple((perm[p], perm[q]) for p, q in DIAMOND_EDGES)
    dag = AppDag(tuple("abcd"), edges, (1,) * 4, (1.0,) * 4)
    for k in dag.stages:
        assert dag.out_degree[k] == sum(1 for p, _ in edges if p == k)
    pos = {k: i for i, k in enumerate(dag.topological_order())}
    assert all(pos[p] < pos[q] for p, q in edges)
    assert dag.descendants(perm[0]) == frozenset(perm[1:])
    assert dag.ancestors(perm[3]) == frozenset(perm[:3])


# -- jobs and schedules -------------------------------------------------------

def test_job_validation():
    with pytest.raises(ValueError):
        Job(0, (0.0,), (1.0,))
    with pytest.raises(ValueError):
        Job(0, (1.0,), (1.0,), (-1.0,))
    with pytest.raises(ValueError):
        Job(0, (1.0,), (1.0, 2.0))
    with pytest.raises(ValueError):
        Job(0, (1.0,), (1.0,), must_private={1})
    assert Job(0, (1.0, 2.0), (1.0, 2.0)).upload_ms == (0.0, 0.0)


def test_check_batch_requires_dense_ids_and_matching_stages():
    dag = chain(2)
    with pytest.raises(ValueError):
        check_batch(dag, [job(1, [1, 1])])
    with pytest.raises(ValueError):
        check_batch(dag, [job(0, [1])])
    with pytest.raises(ValueError):
        check_batch(dag, [])


def test_schedule_sequences_follow_start_times():
    s = Schedule()
    s.set(0, 0, Placement.private(0), 10.0)
    s.set(1, 0, Placement.private(0), 0.0)
    s.set(2, 0, Placement(None), 0.0)
    assert s.replica_sequences() == {(0, 0): [1, 0]}
    assert s.placement_matrix(3, 1) == [[1], [1], [0]]
    assert len(s) == 3 and (2, 0) in s
    with pytest.raises(ValueError):
        Placement.private(-1)
