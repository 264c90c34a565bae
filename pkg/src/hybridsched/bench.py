"""Synthetic workloads, deadline sweeps and heuristic-versus-optimal comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exact import MilpInstance, solve_exact
from .model import DEFAULT_COST_MODEL, AppDag, CostModel, Job, Schedule
from .predict import TraceRow
from .sched import PriorityOrder
from .sim import TruthTable, execute_fixed, run_all_private, run_all_public, run_greedy

MIN_LATENCY_MS = 1.0


@dataclass(frozen=True)
class Linear:
    """``intercept + slope * size``, times ``1 + noise * N(0, 1)``, floored at ``floor``."""

    slope: float
    intercept: float
    noise: float = 0.0

    def sample(self, rng: np.random.Generator, size: float, floor: float = MIN_LATENCY_MS) -> float:
        mean = self.intercept + self.slope * size
        if self.noise:
            mean *= 1.0 + self.noise * rng.standard_normal()
        return max(floor, float(mean))


@dataclass(frozen=True)
class StageProfile:
    private: Linear
    public: Linear
    upload: Linear = Linear(0.0, 0.0)
    download: Linear = Linear(0.0, 0.0)
    # output size feature as a multiple of the input size
    output_ratio: float = 1.0


@dataclass(frozen=True)
class WorkloadTemplate:
    name: str
    dag: AppDag
    stages: Tuple[StageProfile, ...]
    feature_range: Tuple[float, float] = (1.0, 2.0)
    overhead_ms: float = 0.0
    error_factor: float = 1.0
    error_sigma: float = 0.0

    def __post_init__(self):
        if len(self.stages) != self.dag.stage_count:
            raise ValueError(f"template {self.name}: {len(self.stages)} profiles for {self.dag.stage_count} stages")
        lo, hi = self.feature_range
        if not 0 < lo <= hi:
            raise ValueError("feature range must satisfy 0 < lo <= hi")
        if not self.error_factor > 0 or self.error_sigma < 0 or self.overhead_ms < 0:
            raise ValueError("error factor must be positive; sigma and overhead non-negative")

    def with_error(self, factor: float = 1.0, sigma: float = 0.0) -> "WorkloadTemplate":
        return replace(self, error_factor=factor, error_sigma=sigma)

    @classmethod
    def matrix_chain(cls, replicas=(2, 2)) -> "WorkloadTemplate":
        # feature: matrix dimension; multiply then LU factorisation, LU is the heavier stage
        dag = AppDag(("MM", "LU"), ((0, 1),), tuple(replicas), (2048.0, 2048.0))
        xfer = Linear(0.05, 100.0)
        return cls("matrix", dag, (
            StageProfile(Linear(1.5, 1000.0, 0.02), Linear(1.2, 1100.0, 0.02), xfer, xfer),
            StageProfile(Linear(2.25, 1500.0, 0.02), Linear(1.8, 1600.0, 0.02), xfer, xfer),
        ), feature_range=(1000.0, 3000.0))

    @classmethod
    def video_dag(cls, replicas=(2, 2, 2, 1)) -> "WorkloadTemplate":
        # feature: video size in MB; decoding the object-detection stage dominates
        dag = AppDag(("EF", "DO", "RI", "ME"), ((0, 1), (0, 2), (1, 3), (2, 3)), tuple(replicas),
                     (1024.0, 3008.0, 1024.0, 512.0))
        return cls("video", dag, (
            StageProfile(Linear(80.0, 300.0, 0.02), Linear(64.0, 400.0, 0.02),
                         Linear(20.0, 50.0), Linear(10.0, 50.0)),
            StageProfile(Linear(213.0, 800.0, 0.02), Linear(150.0, 900.0, 0.02),
                         Linear(10.0, 50.0), Linear(1.0, 20.0), output_ratio=0.1),
            StageProfile(Linear(40.0, 200.0, 0.02), Linear(32.0, 300.0, 0.02),
                         Linear(10.0, 50.0), Linear(1.0, 20.0), output_ratio=0.1),
            StageProfile(Linear(30.0, 50.0, 0.02), Linear(25.0, 150.0, 0.02),
                         Linear(5.0, 20.0), Linear(5.0, 20.0)),
        ), feature_range=(5.0, 25.0))

    @classmethod
    def image_chain(cls, replicas=(1, 1, 1)) -> "WorkloadTemplate":
        # feature: image size in KB
        dag = AppDag(("rotate", "resize", "compress"), ((0, 1), (1, 2)), tuple(replicas), (2048.0,) * 3)
        xfer = Linear(0.02, 5.0)
        return cls("image", dag, (
            StageProfile(Linear(0.24, 30.0, 0.02), Linear(0.2, 60.0, 0.02), xfer, xfer),
            StageProfile(Linear(0.096, 12.0, 0.02), Linear(0.08, 40.0, 0.02), xfer, xfer, output_ratio=0.5),
            StageProfile(Linear(0.16, 10.0, 0.02), Linear(0.14, 35.0, 0.02), xfer, xfer, output_ratio=0.5),
        ), feature_range=(200.0, 800.0))

    @classmethod
    def custom(cls, dag: AppDag, stages: Optional[Sequence[StageProfile]] = None,
               feature_range=(1.0, 2.0)) -> "WorkloadTemplate":
        """Any DAG; by default every stage costs about a second, a bit faster in the public cloud."""
        if stages is None:
            stages = [StageProfile(Linear(500.0, 250.0, 0.02), Linear(400.0, 350.0, 0.02),
                                   Linear(50.0, 20.0), Linear(50.0, 20.0)) for _ in dag.stages]
        return cls("custom", dag, tuple(stages), feature_range=tuple(feature_range))

    @classmethod
    def named(cls, name: str) -> "WorkloadTemplate":
        try:
            return {"matrix": cls.matrix_chain, "video": cls.video_dag, "image": cls.image_chain}[name]()
        except KeyError:
            raise ValueError(f"unknown template {name!r}; expected matrix, video or image") from None


class Workload(NamedTuple):
    dag: AppDag
    batch: List[Job]  # carries the scheduler's estimates
    truth: TruthTable
    estimates: TruthTable


class _JobSample(NamedTuple):
    feature: float
    inputs: List[Tuple[float, ...]]
    outputs: List[Tuple[float, ...]]
    private: List[float]
    public: List[float]
    upload: List[float]
    download: List[float]


def _sample_job(t: WorkloadTemplate, rng: np.random.Generator) -> _JobSample:
    dag = t.dag
    x = float(rng.uniform(*t.feature_range))
    inputs: Dict[int, Tuple[float, ...]] = {}
    outputs: Dict[int, Tuple[float, ...]] = {}
    priv, pub, up, down = ([0.0] * dag.stage_count for _ in range(4))
    for k in dag.topological_order():
        preds = dag.predecessors(k)
        inputs[k] = (x,) if not preds else tuple(v for p in sorted(preds) for v in outputs[p])
        size = math.fsum(inputs[k])
        prof = t.stages[k]
        outputs[k] = (prof.output_ratio * size,)
        priv[k] = prof.private.sample(rng, size) + t.overhead_ms
        pub[k] = prof.public.sample(rng, size)
        up[k] = prof.upload.sample(rng, size, floor=0.0)
        down[k] = prof.download.sample(rng, outputs[k][0], floor=0.0)
    return _JobSample(x, [inputs[k] for k in dag.stages], [outputs[k] for k in dag.stages], priv, pub, up, down)


def _perturb(values: Sequence[float], rng: np.random.Generator, factor: float, sigma: float,
             floor: float) -> Tuple[float, ...]:
    noise = rng.lognormal(0.0, sigma, size=len(values)) if sigma > 0 else np.ones(len(values))
    return tuple(max(floor, float(v * factor * n)) for v, n in zip(values, noise))


def generate_workload(template: WorkloadTemplate, n_jobs: int, seed: int = 0) -> Workload:
    """Sample ``n_jobs`` jobs; estimates are truth times ``error_factor * lognormal(0, error_sigma)``."""
    if n_jobs < 1:
        raise ValueError("n_jobs must be at least 1")
    rng = np.random.default_rng(seed)
    samples = [_sample_job(template, rng) for _ in range(n_jobs)]
    err_rng = np.random.default_rng([seed, 1])
    f, s = template.error_factor, template.error_sigma
    batch, truth_rows = [], []
    for j, smp in enumerate(samples):
        truth_rows.append((tuple(smp.private), tuple(smp.public), tuple(smp.upload), tuple(smp.download)))
        batch.append(Job(
            j,
            _perturb(smp.private, err_rng, f, s, MIN_LATENCY_MS),
            _perturb(smp.public, err_rng, f, s, MIN_LATENCY_MS),
            _perturb(smp.upload, err_rng, f, s, 0.0),
            _perturb(smp.download, err_rng, f, s, 0.0),
            features=tuple(smp.inputs),
        ))
    truth = TruthTable(*(tuple(r[i] for r in truth_rows) for i in range(4)))
    return Workload(template.dag, batch, truth, TruthTable.from_jobs(batch))


def generate_trace(template: WorkloadTemplate, n_jobs: int, seed: int = 0) -> List[TraceRow]:
    """Training trace: every job runs every stage once privately and once publicly."""
    rng = np.random.default_rng(seed)
    rows = []
    for j in range(n_jobs):
        smp = _sample_job(template, rng)
        for k in template.dag.stages:
            out = smp.outputs[k] if template.dag.successors(k) else ()
            rows.append(TraceRow(j, k, "private", smp.inputs[k], smp.private[k], out, template.overhead_ms))
            rows.append(TraceRow(j, k, "public", smp.inputs[k], smp.public[k], out))
    return rows


# -- sweeps -------------------------------------------------------------------

BASELINES = ("all-public", "all-private")
POLICIES = ("spt", "hcf", "fifo") + BASELINES


@dataclass(frozen=True)
class SweepSpec:
    c_max: Tuple[float, ...]
    policies: Tuple[str, ...] = ("spt", "hcf", "all-public", "all-private")
    repetitions: int = 1
    seed: int = 0
    # lognormal jitter applied to the truth on repetitions after the first
    jitter_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "c_max", tuple(float(c) for c in self.c_max))
        object.__setattr__(self, "policies", tuple(str(p).lower() for p in self.policies))
        if not self.c_max or not self.policies:
            raise ValueError("sweep needs at least one c_max and one policy")
        if any(not c > 0 for c in self.c_max):
            raise ValueError("every c_max must be positive")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise ValueError(f"unknown policies {bad}; expected a subset of {list(POLICIES)}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")


SWEEP_COLUMNS = ("c_max_ms", "policy", "repetition", "makespan_ms", "cost_usd", "offloaded_count",
                 "offloaded_fraction", "deadline_missed")


def _jittered(truth: TruthTable, sigma: float, seed: int, rep: int) -> TruthTable:
    if rep == 0 or sigma == 0:
        return truth
    rng = np.random.default_rng([seed, rep])
    rows = []
    for table, floor in ((truth.p_private, MIN_LATENCY_MS), (truth.p_public, MIN_LATENCY_MS),
                         (truth.upload_ms, 0.0), (truth.download_ms, 0.0)):
        rows.append(tuple(_perturb(r, rng, 1.0, sigma, floor) for r in table))
    return TruthTable(*rows)


def sweep(dag: AppDag, batch: Sequence[Job], truth: TruthTable, estimates: Optional[TruthTable],
          spec: SweepSpec, cost_model: CostModel = DEFAULT_COST_MODEL) -> List[Dict[str, object]]:
    """One row per (c_max, policy, repetition), c_max ascending then in spec order."""
    sched_batch = estimates.apply(batch) if estimates is not None else list(batch)
    rows = []
    for c in sorted(set(spec.c_max)):
        for policy in spec.policies:
            for rep in range(spec.repetitions):
                t = _jittered(truth, spec.jitter_sigma, spec.seed, rep)
                if policy == "all-public":
                    r = run_all_public(dag, sched_batch, t, cost_model)
                elif policy == "all-private":
                    r = run_all_private(dag, sched_batch, t, cost_model=cost_model)
                else:
                    r = run_greedy(dag, sched_batch, t, PriorityOrder(policy), c, cost_model)
                rows.append({
                    "c_max_ms": c,
                    "policy": policy,
                    "repetition": rep,
                    "makespan_ms": r.makespan_ms,
                    "cost_usd": r.total_cost_usd,
                    "offloaded_count": r.offloaded_stage_count,
                    "offloaded_fraction": r.offloaded_fraction,
                    "deadline_missed": r.makespan_ms > c,
                })
    return rows


def count_inversions(values: Sequence[float]) -> int:
    """Adjacent increases in a sequence that should be non-increasing."""
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


# -- comparison with the optimum ----------------------------------------------

@dataclass
class MethodResult:
    cost_usd: float
    makespan_ms: float
    deadline_missed: bool


@dataclass
class Comparison:
    c_max_ms: float
    methods: Dict[str, MethodResult]
    optimal_feasible: bool
    optimal_proven: bool
    nodes_explored: int
    ratios: Dict[str, float] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, object]]:
        out = []
        for name, m in self.methods.items():
            out.append({"method": name, "cost_usd": m.cost_usd, "makespan_ms": m.makespan_ms,
                        "deadline_missed": m.deadline_missed, "cost_ratio": self.ratios.get(name, math.nan)})
        return out


def _ratio(cost: float, optimum: float) -> float:
    if optimum > 0:
        return cost / optimum
    return 1.0 if cost == 0 else math.inf


def greedy_incumbents(dag: AppDag, batch: Sequence[Job], c_max: float,
                      cost_model: CostModel = DEFAULT_COST_MODEL) -> List[Schedule]:
    """SPT and HCF schedules that meet the deadline, as starting points for the exact solver."""
    runs = (run_greedy(dag, batch, None, p, c_max, cost_model) for p in (PriorityOrder.SPT, PriorityOrder.HCF))
    return [r.to_schedule() for r in runs if not r.deadline_missed]


def compare_with_optimal(dag: AppDag, batch: Sequence[Job], truth: Optional[TruthTable], c_max: float,
                         node_budget: int = 1_000_000, cost_model: CostModel = DEFAULT_COST_MODEL) -> Comparison:
    """SPT, HCF, all-public and the exact optimum on one instance.

    The exact solver plans on the estimates in ``batch``; its schedule is then
    replayed against ``truth`` like every other method.
    """
    methods: Dict[str, MethodResult] = {}
    greedy = {}
    for policy in (PriorityOrder.SPT, PriorityOrder.HCF):
        r = run_greedy(dag, batch, truth, policy, c_max, cost_model)
        greedy[policy.value] = r
        methods[policy.value] = MethodResult(r.total_cost_usd, r.makespan_ms, r.deadline_missed)
    r = run_all_public(dag, batch, truth, cost_model)
    methods["all-public"] = MethodResult(r.total_cost_usd, r.makespan_ms, r.makespan_ms > c_max)

    inst = MilpInstance(dag, list(batch), c_max, cost_model)
    if truth is None:
        seeds = [g.to_schedule() for g in greedy.values() if not g.deadline_missed]
    else:
        seeds = greedy_incumbents(dag, batch, c_max, cost_model)
    sol = solve_exact(inst, node_budget, incumbents=seeds)
    comp = Comparison(c_max, methods, sol.feasible, sol.optimal, sol.nodes_explored)
    if sol.feasible:
        r = execute_fixed(dag, batch, truth, sol.schedule, c_max, cost_model, policy="optimal")
        methods["optimal"] = MethodResult(r.total_cost_usd, r.makespan_ms, r.deadline_missed)
        for name, m in methods.items():
            comp.ratios[name] = _ratio(m.cost_usd, methods["optimal"].cost_usd)
    return comp
