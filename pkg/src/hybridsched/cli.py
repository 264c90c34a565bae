"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 verification found
violations, 4 no feasible schedule exists.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional, Sequence

from . import bench, formats
from .exact import InstanceTooLarge, MilpInstance, solve_exact, verify_schedule
from .model import DagError, Job
from .predict import ModelConfigError, chain_predict, dump_models, fit_stage_models, load_models
from .sim import HybridScheduler, TruthTable

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_VIOLATIONS, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=100, max_help_position=32)


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _float_list(text: str) -> List[float]:
    try:
        vals = [_positive(t) for t in text.split(",") if t.strip()]
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(f"expected comma-separated positive numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybridsched", description="Deadline-aware scheduling of serverless DAG batches "
                "across a private and a public cloud.", formatter_class=_formatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, formatter_class=_formatter)

    def instance(sp, truth=True):
        sp.add_argument("--dag", required=True, help="application DAG file")
        sp.add_argument("--workload", required=True, help="workload CSV with the scheduler's estimates")
        if truth:
            sp.add_argument("--truth", help="workload CSV with true latencies (default: the estimates)")

    def out(sp):
        sp.add_argument("--out", default=".", help="output directory (default: current directory)")

    g = add("generate", "Generate a synthetic workload and DAG file.")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--template", choices=("matrix", "video", "image"), help="built-in application shape")
    src.add_argument("--dag", help="custom DAG file; latencies come from the generic profile")
    g.add_argument("--jobs", type=int, default=20, help="number of jobs in the batch (default: 20)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    g.add_argument("--error-factor", type=_positive, default=1.0,
                   help="multiplicative bias of the estimates (default: 1.0)")
    g.add_argument("--error-sigma", type=float, default=0.0,
                   help="log-normal sigma of the estimate error (default: 0.0, perfect models)")
    g.add_argument("--trace-jobs", type=int, default=0,
                   help="also write a training trace with this many jobs (default: 0, none)")
    out(g)

    t = add("train", "Fit per-stage latency models from a training trace.")
    t.add_argument("--dag", required=True, help="application DAG file")
    t.add_argument("--trace", required=True, help="training trace CSV")
    t.add_argument("--lambda", dest="lam", type=float, default=1.0, help="ridge penalty (default: 1.0)")
    t.add_argument("--grid", type=_float_list, help="comma-separated penalties to choose from by cross-validation")
    t.add_argument("--seed", type=int, default=0, help="cross-validation shuffle seed (default: 0)")
    out(t)

    s = add("simulate", "Run the greedy scheduler or a baseline against a workload.")
    instance(s)
    s.add_argument("--models", help="model file; estimates are predicted from the workload features")
    s.add_argument("--policy", choices=("spt", "hcf", "fifo", "all-public", "all-private"), default="spt",
                   help="queue order or baseline (default: spt)")
    s.add_argument("--cmax", type=_positive, required=True, help="deadline in milliseconds")
    out(s)

    so = add("solve", "Compute a cost-optimal schedule with branch and bound, seeded with the greedy schedules.")
    instance(so, truth=False)
    so.add_argument("--cmax", type=_positive, required=True, help="deadline in milliseconds")
    so.add_argument("--node-budget", type=int, default=1_000_000, help="search node limit (default: 1000000)")
    so.add_argument("--free-placement", action="store_true",
                    help="allow private stages after public ones (default: public stages stay public)")
    out(so)

    v = add("verify", "Check a schedule against every constraint family.")
    instance(v, truth=False)
    v.add_argument("--schedule", required=True, help="schedule CSV to check")
    v.add_argument("--cmax", type=_positive, required=True, help="makespan limit in milliseconds")

    sw = add("sweep", "Sweep deadlines and policies over one workload.")
    instance(sw)
    sw.add_argument("--cmax", type=_float_list, required=True, help="comma-separated deadlines in milliseconds")
    sw.add_argument("--policies", default="spt,hcf,all-public,all-private",
                    help="comma-separated subset of spt,hcf,fifo,all-public,all-private")
    sw.add_argument("--repetitions", type=int, default=1, help="runs per (deadline, policy) (default: 1)")
    sw.add_argument("--jitter-sigma", type=float, default=0.0,
                    help="log-normal jitter of the truth on repetitions after the first (default: 0.0)")
    sw.add_argument("--seed", type=int, default=0, help="jitter seed (default: 0)")
    out(sw)

    c = add("compare", "Compare SPT, HCF and all-public with the exact optimum.")
    instance(c)
    c.add_argument("--cmax", type=_positive, required=True, help="deadline in milliseconds")
    c.add_argument("--node-budget", type=int, default=1_000_000, help="search node limit (default: 1000000)")
    out(c)
    return p


# -- helpers ------------------------------------------------------------------

def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(directory: str, name: str, text: str) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _load_instance(args):
    dag = formats.parse_dag(_read(args.dag))
    batch = formats.parse_workload(dag, _read(args.workload))
    if not batch:
        raise ValueError("workload has no jobs")
    batch = [Job(j.id, j.p_private, j.p_public, j.upload_ms, j.download_ms, dag.must_private, j.features)
             for j in batch]
    truth = None
    if getattr(args, "truth", None):
        t = formats.parse_workload(dag, _read(args.truth))
        if len(t) != len(batch):
            raise ValueError("truth and workload list different numbers of jobs")
        truth = TruthTable.from_jobs(t)
    return dag, batch, truth


def _predicted(dag, batch, models_path) -> List[Job]:
    models = load_models(_read(models_path))
    out = []
    for j in batch:
        src = dag.sources[0]
        if not j.features or not j.features[src]:
            raise ValueError(f"job {j.id} has no features for the source stage")
        est = chain_predict(dag, models, j.features[src])
        out.append(Job(j.id, tuple(e[0] for e in est), tuple(e[1] for e in est), j.upload_ms, j.download_ms,
                       j.must_private, j.features))
    return out


# -- subcommands --------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.jobs < 1 or args.trace_jobs < 0 or args.error_sigma < 0:
        raise ValueError("--jobs must be >= 1; --trace-jobs and --error-sigma must be >= 0")
    if args.template:
        tmpl = bench.WorkloadTemplate.named(args.template)
    else:
        tmpl = bench.WorkloadTemplate.custom(formats.parse_dag(_read(args.dag)))
    tmpl = tmpl.with_error(args.error_factor, args.error_sigma)
    w = bench.generate_workload(tmpl, args.jobs, args.seed)
    truth_jobs = w.truth.apply(w.batch)
    paths = [
        _write(args.out, "app.dag", formats.dump_dag(w.dag)),
        _write(args.out, "workload.csv", formats.dump_workload(w.dag, w.batch)),
        _write(args.out, "truth.csv", formats.dump_workload(w.dag, truth_jobs)),
    ]
    if args.trace_jobs:
        rows = bench.generate_trace(tmpl, args.trace_jobs, args.seed + 1)
        paths.append(_write(args.out, "trace.csv", formats.dump_trace_rows(rows)))
    sys.stdout.write(formats.dump_kv({"template": tmpl.name, "jobs": args.jobs, "seed": args.seed,
                                      "files": " ".join(os.path.basename(p) for p in paths)}))
    return EXIT_OK


def cmd_train(args) -> int:
    dag = formats.parse_dag(_read(args.dag))
    rows = formats.parse_trace_rows(dag, _read(args.trace))
    models, report = fit_stage_models(dag, rows, args.lam, args.grid, args.seed)
    _write(args.out, "models.txt", dump_models(dag, models))
    text = formats.dump_kv({f"mape.{k}": v for k, v in sorted(report.items())})
    _write(args.out, "mape.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    dag, batch, truth = _load_instance(args)
    if args.models:
        if truth is None:
            truth = TruthTable.from_jobs(batch)
        batch = _predicted(dag, batch, args.models)
    est = HybridScheduler(args.policy, args.cmax).fit(dag, batch, truth)
    rep = est.report_
    summary = rep.summary()
    summary["c_max_ms"] = args.cmax
    summary["deadline_missed"] = rep.makespan_ms > args.cmax
    _write(args.out, "report.txt", formats.dump_kv(summary))
    _write(args.out, "report_row.csv", formats.dump_csv([summary]))
    _write(args.out, "trace.txt", formats.dump_events(rep.trace))
    _write(args.out, "offload_log.csv", formats.dump_offload_log(rep.offload_log))
    _write(args.out, "schedule.csv", formats.dump_schedule(est.schedule_))
    sys.stdout.write(formats.dump_kv(summary))
    return EXIT_OK


def cmd_solve(args) -> int:
    dag, batch, _ = _load_instance(args)
    inst = MilpInstance(dag, batch, args.cmax)
    seeds = bench.greedy_incumbents(dag, batch, args.cmax)
    sol = solve_exact(inst, args.node_budget, args.free_placement, seeds)
    summary = {"z_usd": sol.savings_usd, **sol.summary()}
    del summary["savings_usd"]
    _write(args.out, "summary.txt", formats.dump_kv(summary))
    sys.stdout.write(formats.dump_kv(summary))
    if not sol.feasible:
        if sol.optimal:
            sys.stderr.write("no schedule meets the deadline\n")
            return EXIT_INFEASIBLE
        sys.stderr.write("node budget exhausted before a feasible schedule was found\n")
        return EXIT_INFEASIBLE
    _write(args.out, "schedule.csv", formats.dump_schedule(sol.schedule))
    return EXIT_OK


def cmd_verify(args) -> int:
    dag, batch, _ = _load_instance(args)
    sched = formats.parse_schedule(_read(args.schedule))
    violations = verify_schedule(MilpInstance(dag, batch, args.cmax), sched)
    for v in violations:
        sys.stdout.write(f"{v}\n")
    sys.stdout.write(f"violations = {len(violations)}\n")
    return EXIT_VIOLATIONS if violations else EXIT_OK


def cmd_sweep(args) -> int:
    dag, batch, truth = _load_instance(args)
    spec = bench.SweepSpec(tuple(args.cmax), tuple(p.strip() for p in args.policies.split(",") if p.strip()),
                           args.repetitions, args.seed, args.jitter_sigma)
    rows = bench.sweep(dag, batch, truth if truth is not None else TruthTable.from_jobs(batch), None, spec)
    text = formats.dump_csv(rows, bench.SWEEP_COLUMNS)
    _write(args.out, "sweep.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    dag, batch, truth = _load_instance(args)
    comp = bench.compare_with_optimal(dag, batch, truth, args.cmax, args.node_budget)
    text = formats.dump_csv(comp.rows(), ("method", "cost_usd", "makespan_ms", "deadline_missed", "cost_ratio"))
    _write(args.out, "compare.csv", text)
    sys.stdout.write(text)
    sys.stdout.write(formats.dump_kv({"optimal_feasible": comp.optimal_feasible,
                                      "optimal_proven": comp.optimal_proven,
                                      "nodes_explored": comp.nodes_explored}))
    return EXIT_OK if comp.optimal_feasible else EXIT_INFEASIBLE


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (formats.FormatError, DagError, ModelConfigError, InstanceTooLarge, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
