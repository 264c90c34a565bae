"""Text and CSV formats for DAGs, workloads, traces, schedules and reports.

Floats are written with ``repr`` so every file round-trips exactly and is
byte-identical across runs with the same inputs.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .model import AppDag, DagError, Job, Placement, Schedule
from .predict import TraceRow
from .sched import OffloadRecord
from .sim import SimEvent


class FormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _float(text: str, line: int, what: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise FormatError(line, f"{what} is not a number: {text!r}") from None
    if math.isnan(v):
        raise FormatError(line, f"{what} is NaN")
    return v


def _int(text: str, line: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise FormatError(line, f"{what} is not an integer: {text!r}") from None


# -- DAG files ----------------------------------------------------------------

def parse_dag(text: str) -> AppDag:
    """Parse ``stage``/``edge``/``must_private`` lines; ``#`` starts a comment."""
    names: List[str] = []
    replicas: List[int] = []
    memory: List[float] = []
    edges: List[Tuple[int, int]] = []
    private: List[int] = []
    index: Dict[str, int] = {}
    section = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        kw = words[0]
        if kw == "stage":
            if section > 0:
                raise FormatError(lineno, "stage lines must come before edge and must_private lines")
            if len(words) != 4:
                raise FormatError(lineno, "expected 'stage <name> replicas=<int> mem_mb=<num>'")
            opts = {}
            for w in words[2:]:
                key, sep, value = w.partition("=")
                if not sep:
                    raise FormatError(lineno, f"expected key=value, got {w!r}")
                opts[key] = value
            if set(opts) != {"replicas", "mem_mb"}:
                raise FormatError(lineno, "stage needs exactly replicas= and mem_mb=")
            name = words[1]
            if name in index:
                raise FormatError(lineno, f"duplicate stage name {name!r}")
            index[name] = len(names)
            names.append(name)
            replicas.append(_int(opts["replicas"], lineno, "replicas"))
            memory.append(_float(opts["mem_mb"], lineno, "mem_mb"))
        elif kw in ("edge", "must_private"):
            want = 3 if kw == "edge" else 2
            if len(words) != want:
                raise FormatError(lineno, f"expected {'edge <src> <dst>' if kw == 'edge' else 'must_private <stage>'}")
            if kw == "edge" and section > 1:
                raise FormatError(lineno, "edge lines must come before must_private lines")
            for w in words[1:]:
                if w not in index:
                    raise FormatError(lineno, f"unknown stage {w!r}")
            if kw == "edge":
                section = 1
                edges.append((index[words[1]], index[words[2]]))
            else:
                section = 2
                private.append(index[words[1]])
        else:
            raise FormatError(lineno, f"unknown directive {kw!r}")
    try:
        return AppDag(tuple(names), tuple(edges), tuple(replicas), tuple(memory), frozenset(private))
    except DagError as exc:
        raise FormatError(0, f"invalid DAG ({exc.rule}): {exc}") from exc


def dump_dag(dag: AppDag) -> str:
    lines = [f"stage {n} replicas={r} mem_mb={fmt(float(m))}"
             for n, r, m in zip(dag.names, dag.replicas, dag.memory_mb)]
    lines += [f"edge {dag.names[a]} {dag.names[b]}" for a, b in sorted(dag.edges)]
    lines += [f"must_private {dag.names[k]}" for k in sorted(dag.must_private)]
    return "\n".join(lines) + "\n"


# -- workload CSV -------------------------------------------------------------

WORKLOAD_BASE = ("job_id", "stage", "p_private_ms", "p_public_ms", "upload_ms", "download_ms")


def dump_workload(dag: AppDag, jobs: Sequence[Job]) -> str:
    width = max((len(f) for j in jobs for f in j.features), default=0)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(WORKLOAD_BASE + tuple(f"feature_{i}" for i in range(width)))
    for j in jobs:
        for k in dag.stages:
            feats = j.features[k] if j.features else ()
            w.writerow([j.id, dag.names[k], fmt(j.p_private[k]), fmt(j.p_public[k]), fmt(j.upload_ms[k]),
                        fmt(j.download_ms[k])] + [fmt(x) for x in feats] + [""] * (width - len(feats)))
    return out.getvalue()


def _stage_ref(dag: AppDag, text: str, line: int) -> int:
    if text in dag.names:
        return dag.names.index(text)
    if text.isdigit() and int(text) < dag.stage_count:
        return int(text)
    raise FormatError(line, f"unknown stage {text!r}")


def parse_workload(dag: AppDag, text: str) -> List[Job]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0][:len(WORKLOAD_BASE)]) != WORKLOAD_BASE:
        raise FormatError(1, "workload header must start with " + ",".join(WORKLOAD_BASE))
    K = dag.stage_count
    cells: Dict[int, Dict[int, tuple]] = {}
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise FormatError(lineno, f"expected {len(rows[0])} columns, got {len(row)}")
        j = _int(row[0], lineno, "job_id")
        k = _stage_ref(dag, row[1], lineno)
        vals = tuple(_float(v, lineno, c) for v, c in zip(row[2:6], WORKLOAD_BASE[2:]))
        if vals[0] <= 0 or vals[1] <= 0 or vals[2] < 0 or vals[3] < 0:
            raise FormatError(lineno, "latencies must be positive and transfers non-negative")
        feats = tuple(_float(v, lineno, "feature") for v in row[6:] if v != "")
        if k in cells.setdefault(j, {}):
            raise FormatError(lineno, f"job {j} stage {dag.names[k]} listed twice")
        cells[j][k] = vals + (feats,)
    if sorted(cells) != list(range(len(cells))):
        raise FormatError(0, "job ids must be 0..J-1 without gaps")
    jobs = []
    for j in range(len(cells)):
        if len(cells[j]) != K:
            raise FormatError(0, f"job {j} has {len(cells[j])} stages, expected {K}")
        c = [cells[j][k] for k in range(K)]
        jobs.append(Job(j, tuple(x[0] for x in c), tuple(x[1] for x in c), tuple(x[2] for x in c),
                        tuple(x[3] for x in c), features=tuple(x[4] for x in c)))
    return jobs


# -- training traces ----------------------------------------------------------

def dump_trace_rows(rows: Sequence[TraceRow]) -> str:
    nf = max((len(r.features) for r in rows), default=0)
    no = max((len(r.output_features) for r in rows), default=0)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["job_id", "stage", "location"] + [f"feature_{i}" for i in range(nf)] + ["latency_ms"]
               + [f"output_feature_{i}" for i in range(no)] + ["overhead_ms"])
    for r in rows:
        w.writerow([r.job_id, r.stage, r.location] + [fmt(x) for x in r.features] + [""] * (nf - len(r.features))
                   + [fmt(r.latency_ms)] + [fmt(x) for x in r.output_features] + [""] * (no - len(r.output_features))
                   + ["" if r.overhead_ms is None else fmt(r.overhead_ms)])
    return out.getvalue()


def parse_trace_rows(dag: AppDag, text: str) -> List[TraceRow]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError(1, "empty trace: header is mandatory")
    header = rows[0]
    if header[:3] != ["job_id", "stage", "location"] or "latency_ms" not in header:
        raise FormatError(1, "trace header must be job_id,stage,location,feature_*,latency_ms,output_feature_*")
    feat_cols = [i for i, h in enumerate(header) if h.startswith("feature_")]
    out_cols = [i for i, h in enumerate(header) if h.startswith("output_feature_")]
    lat = header.index("latency_ms")
    over = header.index("overhead_ms") if "overhead_ms" in header else None
    result = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(lineno, f"expected {len(header)} columns, got {len(row)}")
        if row[2] not in ("private", "public"):
            raise FormatError(lineno, f"location must be private or public, got {row[2]!r}")
        result.append(TraceRow(
            _int(row[0], lineno, "job_id"), _stage_ref(dag, row[1], lineno), row[2],
            tuple(_float(row[i], lineno, header[i]) for i in feat_cols if row[i] != ""),
            _float(row[lat], lineno, "latency_ms"),
            tuple(_float(row[i], lineno, header[i]) for i in out_cols if row[i] != ""),
            None if over is None or row[over] == "" else _float(row[over], lineno, "overhead_ms"),
        ))
    return result


# -- simulator output ---------------------------------------------------------

def dump_events(events: Iterable[SimEvent]) -> str:
    return "".join(f"{fmt(e.time_ms)} {e.kind.name} {e.job} {e.stage} {e.placement} {e.replica}\n"
                   for e in events)


def dump_offload_log(log: Iterable[OffloadRecord]) -> str:
    lines = ["time_ms,job_id,stage,reason"]
    lines += [f"{fmt(r.time_ms)},{r.job},{r.stage},{r.reason}" for r in log]
    return "\n".join(lines) + "\n"


def dump_kv(block: Mapping[str, object]) -> str:
    return "".join(f"{k} = {fmt(v)}\n" for k, v in block.items())


def dump_csv(rows: Sequence[Mapping[str, object]], columns: Optional[Sequence[str]] = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    return out.getvalue()


# -- schedules ----------------------------------------------------------------

SCHEDULE_COLUMNS = ("job", "stage", "placement", "replica", "start_ms", "release_ms")


def dump_schedule(sched: Schedule) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SCHEDULE_COLUMNS)
    for (j, k), run in sched:
        pub = run.placement.is_public
        w.writerow([j, k, "public" if pub else "private", "" if pub else run.placement.replica,
                    fmt(run.start_ms), fmt(run.release_ms)])
    return out.getvalue()


def parse_schedule(text: str) -> Schedule:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0][:5]) != SCHEDULE_COLUMNS[:5]:
        raise FormatError(1, "schedule header must start with " + ",".join(SCHEDULE_COLUMNS[:5]))
    has_release = len(rows[0]) > 5 and rows[0][5] == "release_ms"
    sched = Schedule()
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise FormatError(lineno, f"expected {len(rows[0])} columns, got {len(row)}")
        j, k = _int(row[0], lineno, "job"), _int(row[1], lineno, "stage")
        if (j, k) in sched:
            raise FormatError(lineno, f"job {j} stage {k} listed twice")
        if row[2] == "public":
            placement = Placement(None)
        elif row[2] == "private":
            placement = Placement.private(_int(row[3], lineno, "replica"))
        else:
            raise FormatError(lineno, f"placement must be private or public, got {row[2]!r}")
        release = _float(row[5], lineno, "release_ms") if has_release and row[5] else 0.0
        sched.set(j, k, placement, _float(row[4], lineno, "start_ms"), release)
    return sched
