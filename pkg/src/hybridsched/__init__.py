"""Deadline-aware scheduling of serverless DAG batches across a private and a public cloud."""

from .bench import (SweepSpec, WorkloadTemplate, compare_with_optimal, generate_trace, generate_workload,
                    greedy_incumbents, sweep)
from .exact import (ExactScheduler, ExactSolution, MilpInstance, Violation, enumerate_exhaustive, solve_exact,
                    verify_schedule)
from .model import (AppDag, CostModel, DagError, Job, Placement, Schedule, cost_of_execution,
                    validate_dag)
from .predict import RidgeLatencyModel, fit_ridge, fit_stage_models, mape
from .sched import PriorityOrder, SchedulerState
from .sim import HybridScheduler, SimReport, TruthTable, execute_fixed, run_all_private, run_all_public, run_greedy

__version__ = "0.1.0"
