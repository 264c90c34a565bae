"""Exact cost-optimal schedules on small instances.

Three pieces share one timing model (:mod:`hybridsched.timing`):

* :func:`verify_schedule` checks a schedule against every constraint family of
  the mixed-integer formulation and reports violations as data;
* :func:`enumerate_exhaustive` brute-forces placements, replica assignments and
  per-replica orders (the oracle);
* :func:`solve_exact` is a depth-first branch-and-bound over placements.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator

from .model import (DEFAULT_COST_MODEL, AppDag, CostModel, Job, Schedule, check_batch,
                    stage_cost)
from .timing import duration, edge_delay, list_schedule, ready_time, result_delay

EXHAUSTIVE_MAX_CELLS = 12
EXHAUSTIVE_MAX_REPLICAS = 4


class InstanceTooLarge(ValueError):
    pass


@dataclass
class MilpInstance:
    dag: AppDag
    batch: List[Job]
    c_max: float
    cost_model: CostModel = DEFAULT_COST_MODEL
    H: List[List[float]] = field(init=False)
    Q_seq: float = field(init=False)
    M_ind: float = field(init=False)

    def __post_init__(self):
        check_batch(self.dag, self.batch)
        self.batch = list(self.batch)
        if not self.c_max > 0:
            raise ValueError("c_max must be positive")
        self.H = [[stage_cost(j, k, self.dag, self.cost_model) for k in self.dag.stages] for j in self.batch]
        longest = max(max(j.p_private + j.p_public + j.upload_ms + j.download_ms) for j in self.batch)
        n_cells = len(self.batch) * self.dag.stage_count
        self.Q_seq = n_cells * longest + self.c_max + 1.0
        self.M_ind = max(self.dag.out_degree) + 1.0

    @property
    def n_jobs(self) -> int:
        return len(self.batch)

    @property
    def n_stages(self) -> int:
        return self.dag.stage_count

    def omega(self, j: int) -> frozenset:
        return self.batch[j].must_private | self.dag.must_private

    def total_cost(self) -> float:
        return math.fsum(h for row in self.H for h in row)

    def savings(self, e: Sequence[Sequence[int]]) -> float:
        return math.fsum(self.H[j][k] for j in range(self.n_jobs) for k in range(self.n_stages) if e[j][k])


@dataclass
class ExactSolution:
    schedule: Optional[Schedule]
    savings_usd: float
    public_cost_usd: float
    optimal: bool
    nodes_explored: int
    feasible: bool = True
    placement: Optional[List[List[int]]] = None

    def summary(self) -> Dict[str, object]:
        return {
            "feasible": self.feasible,
            "optimal": self.optimal,
            "savings_usd": self.savings_usd,
            "public_cost_usd": self.public_cost_usd,
            "nodes_explored": self.nodes_explored,
        }


def _solution(inst: MilpInstance, e, schedule, optimal: bool, nodes: int) -> ExactSolution:
    if e is None:
        return ExactSolution(None, 0.0, math.inf, optimal, nodes, feasible=False)
    pub = math.fsum(inst.H[j][k] for j in range(inst.n_jobs) for k in range(inst.n_stages) if not e[j][k])
    return ExactSolution(schedule, inst.savings(e), pub, optimal, nodes, True, [list(r) for r in e])


# -- verification -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    family: str
    job: int
    stage: int
    slack: float
    detail: str = ""

    def __str__(self):
        return f"{self.family}: job {self.job} stage {self.stage} slack {self.slack:.6g} {self.detail}".rstrip()


def transfer_indicators(dag: AppDag, e_row: Sequence[int]) -> Tuple[List[int], List[int]]:
    """Upload/download bits of one job from ``X_k = delta_k e_k - sum_succ e_q``.

    ``X > 0``: stage ``k`` ran privately and some successor is public (upload);
    ``X < 0``: ``k`` ran publicly and some successor is private (download).
    """
    deg = dag.out_degree
    u, d = [], []
    for k in dag.stages:
        x = deg[k] * e_row[k] - sum(e_row[q] for q in dag.successors(k))
        u.append(1 if x > 0 else 0)
        d.append(1 if x < 0 else 0)
    return u, d


def verify_schedule(inst: MilpInstance, sched: Schedule, makespan_limit: Optional[float] = None,
                    tol: float = 1e-9) -> List[Violation]:
    """Every constraint violation of ``sched``; an empty list means feasible."""
    dag, J, K = inst.dag, inst.n_jobs, inst.n_stages
    limit = inst.c_max if makespan_limit is None else makespan_limit
    out: List[Violation] = []
    for (j, k), _ in sched:
        if not (0 <= j < J and 0 <= k < K):
            out.append(Violation("completeness", j, k, 0.0, "unknown job or stage"))
    missing = [(j, k) for j in range(J) for k in range(K) if (j, k) not in sched]
    for j, k in missing:
        out.append(Violation("completeness", j, k, 0.0, "stage never scheduled"))
    if missing:
        return out

    e = [[0 if sched[(j, k)].placement.is_public else 1 for k in range(K)] for j in range(J)]
    start = {(j, k): sched[(j, k)].start_ms for j in range(J) for k in range(K)}
    finish = {(j, k): start[(j, k)] + duration(inst.batch[j], k, not e[j][k]) for j in range(J) for k in range(K)}

    for j in range(J):
        job = inst.batch[j]
        u, d = transfer_indicators(dag, e[j])
        for k in range(K):
            run = sched[(j, k)]
            if start[(j, k)] < -tol:
                out.append(Violation("nonnegativity", j, k, start[(j, k)]))
            if not run.placement.is_public and not 0 <= run.placement.replica < dag.replicas[k]:
                out.append(Violation("assignment", j, k, 0.0, f"replica {run.placement.replica} does not exist"))
            if k in inst.omega(j) and run.placement.is_public:
                out.append(Violation("privacy", j, k, 0.0, "stage must run in the private cloud"))
            slack = limit - finish[(j, k)]
            if not dag.successors(k):
                slack = limit - (finish[(j, k)] + result_delay(job, k, not e[j][k]))
            if slack < -tol:
                out.append(Violation("makespan", j, k, slack))
            if not dag.predecessors(k) and not e[j][k]:
                slack = start[(j, k)] - job.upload_ms[k]
                if slack < -tol:
                    out.append(Violation("upload", j, k, slack, "public source starts before its input upload"))
        for p, q in dag.edges:
            charge = 0.0
            if u[p] and not e[j][q]:
                charge = job.upload_ms[q]
            elif d[p] and e[j][q]:
                charge = job.download_ms[p]
            slack = start[(j, q)] - (finish[(j, p)] + charge)
            if slack < -tol:
                out.append(Violation("precedence", j, q, slack, f"edge {p}->{q}"))

    for k in range(K):
        for i in range(dag.replicas[k]):
            on = sorted(j for j in range(J) if e[j][k] and sched[(j, k)].placement.replica == i)
            for a, b in itertools.combinations(on, 2):
                y = 1 if (start[(a, k)], a) < (start[(b, k)], b) else 0
                # disjunctive pair: y picks which of the two big-Q rows is binding
                if y == 0:
                    slack = start[(a, k)] - finish[(b, k)]
                else:
                    slack = start[(b, k)] - finish[(a, k)]
                if slack < -tol:
                    first, second = (b, a) if y == 0 else (a, b)
                    out.append(Violation("sequencing", second, k, slack,
                                         f"overlaps job {first} on replica {i}"))
    return out


# -- shared search helpers ----------------------------------------------------

def _placement_ok(inst: MilpInstance, e_row: Sequence[int], j: int, free_placement: bool) -> bool:
    if any(not e_row[k] for k in inst.omega(j)):
        return False
    if free_placement:
        return True
    # public-chain closure: a public stage has only public descendants
    return all(e_row[q] == 0 for k in inst.dag.stages if not e_row[k] for q in inst.dag.descendants(k))


def _job_tails(inst: MilpInstance, e_row: Sequence[int], j: int) -> List[float]:
    """Minimum time from the finish of each stage until the job's result is stored."""
    dag, job = inst.dag, inst.batch[j]
    tail = [0.0] * inst.n_stages
    for k in reversed(dag.topological_order()):
        if not dag.successors(k):
            tail[k] = result_delay(job, k, not e_row[k])
        else:
            tail[k] = max(edge_delay(job, k, q, not e_row[k], not e_row[q]) + duration(job, q, not e_row[q])
                          + tail[q] for q in dag.successors(k))
    return tail


def _schedule_from_sequences(inst: MilpInstance, e, sequences) -> Schedule:
    public = [[not e[j][k] for k in range(inst.n_stages)] for j in range(inst.n_jobs)]
    sched, _ = list_schedule(inst.dag, inst.batch, public, sequences)
    return sched


# -- exhaustive oracle --------------------------------------------------------

def _replica_splits(jobs: Sequence[int], n_replicas: int) -> Iterator[Tuple[Tuple[int, ...], ...]]:
    """Every assignment of ``jobs`` to labelled replicas together with an order on each."""
    n = len(jobs)
    for perm in itertools.permutations(jobs):
        for cuts in itertools.combinations_with_replacement(range(n + 1), n_replicas - 1):
            bounds = (0,) + cuts + (n,)
            yield tuple(perm[bounds[i]:bounds[i + 1]] for i in range(n_replicas))


def _brute_force_sequences(inst: MilpInstance, e) -> Optional[Dict[Tuple[int, int], Tuple[int, ...]]]:
    dag, J = inst.dag, inst.n_jobs
    order = dag.topological_order()
    public = [[not e[j][k] for k in dag.stages] for j in range(J)]

    def stage_ok(k, finish) -> bool:
        for j in range(J):
            f = finish[j][k]
            if f > inst.c_max or (not dag.successors(k) and f + result_delay(inst.batch[j], k, public[j][k]) > inst.c_max):
                return False
        return True

    def rec(idx, finish, seqs):
        if idx == len(order):
            return dict(seqs)
        k = order[idx]
        nxt = [dict(f) for f in finish]
        for j in range(J):
            if public[j][k]:
                s = ready_time(dag, inst.batch[j], k, public[j], nxt[j])
                nxt[j][k] = s + inst.batch[j].p_public[k]
        private = [j for j in range(J) if not public[j][k]]
        for split in _replica_splits(private, dag.replicas[k]):
            trial = [dict(f) for f in nxt]
            for r, jobs in enumerate(split):
                free = 0.0
                for j in jobs:
                    s = max(free, ready_time(dag, inst.batch[j], k, public[j], trial[j]))
                    trial[j][k] = free = s + inst.batch[j].p_private[k]
            if not stage_ok(k, trial):
                continue
            for r, jobs in enumerate(split):
                seqs[(k, r)] = jobs
            found = rec(idx + 1, trial, seqs)
            if found is not None:
                return found
            for r in range(len(split)):
                seqs.pop((k, r), None)
        return None

    return rec(0, [{} for _ in range(J)], {})


def enumerate_exhaustive(inst: MilpInstance, free_placement: bool = False) -> ExactSolution:
    """Brute-force optimum over placements, replica assignments and replica orders.

    Among optimal placements the lexicographically smallest e-matrix wins.
    """
    J, K = inst.n_jobs, inst.n_stages
    if J * K > EXHAUSTIVE_MAX_CELLS or sum(inst.dag.replicas) > EXHAUSTIVE_MAX_REPLICAS:
        raise InstanceTooLarge(f"exhaustive search needs J*K <= {EXHAUSTIVE_MAX_CELLS} and "
                               f"sum(I_k) <= {EXHAUSTIVE_MAX_REPLICAS}, got {J * K} and {sum(inst.dag.replicas)}")
    rows = []
    for j in range(J):
        rows.append([row for row in itertools.product((0, 1), repeat=K)
                     if _placement_ok(inst, row, j, free_placement)])
    candidates = []
    for e in itertools.product(*rows):
        candidates.append((-inst.savings(e), e))
    candidates.sort()
    explored = 0
    for neg_z, e in candidates:
        explored += 1
        seqs = _brute_force_sequences(inst, e)
        if seqs is not None:
            return _solution(inst, e, _schedule_from_sequences(inst, e, seqs), True, explored)
    return _solution(inst, None, None, True, explored)


# -- branch and bound ---------------------------------------------------------

class _OutOfBudget(Exception):
    pass


class _Budget:
    """Search-node counter shared by the placement search and the timing searches."""

    def __init__(self, limit: Optional[int] = None):
        self.limit = limit
        self.used = 0

    def spend(self) -> None:
        self.used += 1
        if self.limit is not None and self.used > self.limit:
            raise _OutOfBudget


class _TimingSearch:
    """Feasibility of one placement matrix.

    Stages are processed in topological order. Private jobs of a stage are
    enumerated as start orders, each job taking the replica that frees up
    first; for identical replicas this dominates every other assignment with
    the same start order. Per-stage outcomes are deduplicated and reduced to
    their Pareto front, and failed states are memoised.
    """

    def __init__(self, inst: MilpInstance, e, budget: Optional[_Budget] = None):
        self.inst = inst
        self.e = e
        self.budget = budget or _Budget()
        self.public = [[not e[j][k] for k in inst.dag.stages] for j in range(inst.n_jobs)]
        self.tails = [_job_tails(inst, e[j], j) for j in range(inst.n_jobs)]
        self.order = inst.dag.topological_order()
        self.failed = set()

    def run(self) -> Optional[Dict[Tuple[int, int], Tuple[int, ...]]]:
        return self._rec(0, tuple({} for _ in range(self.inst.n_jobs)), {})

    def _stage_outcomes(self, k, finish):
        inst, dag = self.inst, self.inst.dag
        c_max = inst.c_max
        base = [dict(f) for f in finish]
        for j in range(inst.n_jobs):
            if self.public[j][k]:
                s = ready_time(dag, inst.batch[j], k, self.public[j], base[j])
                f = s + inst.batch[j].p_public[k]
                if f + self.tails[j][k] > c_max:
                    return base, []
                base[j][k] = f
        private = [j for j in range(inst.n_jobs) if not self.public[j][k]]
        ready = {j: ready_time(dag, inst.batch[j], k, self.public[j], base[j]) for j in private}
        n_rep = dag.replicas[k]
        outcomes: Dict[tuple, Tuple[Tuple[int, ...], ...]] = {}

        def place(remaining, free, fins, seqs):
            self.budget.spend()
            if not remaining:
                key = tuple(fins[j] for j in private)
                outcomes.setdefault(key, tuple(tuple(s) for s in seqs))
                return
            r = min(range(n_rep), key=lambda i: (free[i], i))
            for j in remaining:
                s = max(free[r], ready[j])
                f = s + inst.batch[j].p_private[k]
                if f + self.tails[j][k] > c_max:
                    continue
                old = free[r]
                free[r] = f
                fins[j] = f
                seqs[r].append(j)
                place([x for x in remaining if x != j], free, fins, seqs)
                seqs[r].pop()
                free[r] = old

        place(private, [0.0] * n_rep, {}, [[] for _ in range(n_rep)])
        keys = sorted(outcomes, key=lambda v: (sum(v), v))
        front: List[tuple] = []
        for v in keys:
            if not any(all(a <= b for a, b in zip(w, v)) for w in front):
                front.append(v)
        result = []
        for v in front:
            result.append((dict(zip(private, v)), outcomes[v]))
        return base, result

    def _rec(self, idx, finish, seqs):
        if idx == len(self.order):
            return dict(seqs)
        key = (idx, tuple(tuple(sorted(f.items())) for f in finish))
        if key in self.failed:
            return None
        k = self.order[idx]
        base, outcomes = self._stage_outcomes(k, finish)
        private = [j for j in range(self.inst.n_jobs) if not self.public[j][k]]
        if not private and all(k in base[j] or not self.public[j][k] for j in range(self.inst.n_jobs)):
            outcomes = [({}, tuple(() for _ in range(self.inst.dag.replicas[k])))]
        for fins, split in outcomes:
            nxt = tuple({**base[j], **({k: fins[j]} if j in fins else {})} for j in range(self.inst.n_jobs))
            for r, jobs in enumerate(split):
                seqs[(k, r)] = jobs
            found = self._rec(idx + 1, nxt, seqs)
            if found is not None:
                return found
            for r in range(len(split)):
                seqs.pop((k, r), None)
        self.failed.add(key)
        return None


def _feasible_sequences(inst: MilpInstance, e, budget: Optional[_Budget] = None):
    return _TimingSearch(inst, e, budget).run()


def solve_exact(inst: MilpInstance, node_budget: int = 1_000_000, free_placement: bool = False,
                incumbents: Sequence[Schedule] = ()) -> ExactSolution:
    """Branch-and-bound over placements maximising the private-cloud savings.

    Variables are fixed in order of descending public cost, private first.
    The bound adds the cost of every undecided stage that could still run
    privately. ``incumbents`` are optional feasible schedules (e.g. from the
    greedy heuristic) used to seed the search. ``node_budget`` caps placement
    nodes and timing-search steps together; when it runs out the best schedule
    found so far is returned with ``optimal=False``.
    """
    J, K = inst.n_jobs, inst.n_stages
    dag = inst.dag
    cells = sorted(((j, k) for j in range(J) for k in range(K)), key=lambda c: (-inst.H[c[0]][c[1]], c))
    forced_private = {(j, k) for j in range(J) for k in inst.omega(j)}
    if not free_placement:
        forced_private |= {(j, a) for j, k in list(forced_private) for a in dag.ancestors(k)}

    best_e, best_z, best_seqs = None, -math.inf, None

    def consider(e, seqs):
        nonlocal best_e, best_z, best_seqs
        z = inst.savings(e)
        if z > best_z:
            best_e, best_z, best_seqs = [list(r) for r in e], z, seqs

    budget = _Budget(node_budget)
    e = [[None] * K for _ in range(J)]
    for cand in incumbents:
        e = cand.placement_matrix(J, K)
        if not all(_placement_ok(inst, e[j], j, free_placement) for j in range(J)):
            continue
        if verify_schedule(inst, cand):
            continue
        consider(e, {key: tuple(v) for key, v in cand.replica_sequences().items()})


    def consistent(j, k, val) -> bool:
        if val == 0 and (j, k) in forced_private:
            return False
        if free_placement:
            return True
        if val == 0:
            return all(e[j][q] != 1 for q in dag.descendants(k))
        return all(e[j][a] != 0 for a in dag.ancestors(k))

    def load_ok(k) -> bool:
        work = math.fsum(inst.batch[j].p_private[k] for j in range(J) if e[j][k] == 1)
        return work <= dag.replicas[k] * inst.c_max

    def dfs(depth):
        budget.spend()
        bound = math.fsum([inst.H[j][k] for j in range(J) for k in range(K) if e[j][k] == 1]
                          + [inst.H[j][k] for j, k in cells[depth:]])
        if bound <= best_z:
            return
        if depth == len(cells):
            seqs = _feasible_sequences(inst, e, budget)
            if seqs is not None:
                consider(e, seqs)
            return
        j, k = cells[depth]
        for val in (1, 0):
            if not consistent(j, k, val):
                continue
            e[j][k] = val
            if val == 0 or load_ok(k):
                dfs(depth + 1)
            e[j][k] = None

    minimal = [[1 if (j, k) in forced_private else 0 for k in range(K)] for j in range(J)]
    if all(_placement_ok(inst, minimal[j], j, free_placement) for j in range(J)):
        # outside the budget: only forced-private stages need timing here
        seqs = _feasible_sequences(inst, minimal)
        if seqs is not None:
            consider(minimal, seqs)
    optimal = True
    try:
        dfs(0)
    except _OutOfBudget:
        optimal = False
    nodes = min(budget.used, node_budget)
    if best_e is None:
        return _solution(inst, None, None, optimal, nodes)
    return _solution(inst, best_e, _schedule_from_sequences(inst, best_e, best_seqs), optimal, nodes)


class ExactScheduler(BaseEstimator):
    """Estimator wrapper around :func:`solve_exact`.

    ``fit(dag, batch)`` stores ``solution_`` and ``schedule_``.
    """

    def __init__(self, c_max: float = 60_000.0, node_budget: int = 1_000_000, free_placement: bool = False,
                 cost_model: Optional[CostModel] = None):
        self.c_max = c_max
        self.node_budget = node_budget
        self.free_placement = free_placement
        self.cost_model = cost_model

    def fit(self, dag: AppDag, batch: Sequence[Job], incumbents: Sequence[Schedule] = ()):
        inst = MilpInstance(dag, list(batch), self.c_max, self.cost_model or DEFAULT_COST_MODEL)
        self.instance_ = inst
        self.solution_ = solve_exact(inst, self.node_budget, self.free_placement, incumbents)
        self.schedule_ = self.solution_.schedule
        return self
