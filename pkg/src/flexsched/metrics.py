"""Run collectors, aggregate measures, CSV reports, and the trace auditor.

The collector is an append-only sink owned by the simulation loop; the
summary and all reports are pure functions of the collected data.  Every
time is carried as integer microseconds until formatted, so two runs of
the same scenario render byte-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .rms import Action, ActionKind

USEC_PER_SEC = 1_000_000


def _fmt(us: int) -> str:
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // USEC_PER_SEC}.{us % USEC_PER_SEC:06d}"


def _fmt_f(value: float) -> str:
    return f"{value:.6f}"


class MetricsError(ValueError):
    pass


@dataclass
class JobRecord:
    id: int
    app: str
    flexible: bool
    arrival_us: int
    start_us: int | None = None
    finish_us: int | None = None
    resizes: int = 0
    unschedulable: bool = False

    @property
    def wait_us(self) -> int | None:
        if self.start_us is None:
            return None
        return self.start_us - self.arrival_us

    @property
    def exec_us(self) -> int | None:
        if self.finish_us is None or self.start_us is None:
            return None
        return self.finish_us - self.start_us

    @property
    def completion_us(self) -> int | None:
        if self.finish_us is None:
            return None
        return self.finish_us - self.arrival_us


@dataclass
class ActionRecord:
    job_id: int
    kind: ActionKind
    target: int | None
    reason: str
    decided_us: int
    applied_us: int
    end_us: int
    outcome: str  # done | aborted | none
    free_at_apply: int

    @property
    def duration_us(self) -> int:
        return self.end_us - self.applied_us


@dataclass
class ActionStats:
    count: int
    actions_per_job: float
    min_s: float
    max_s: float
    avg_s: float
    std_s: float


@dataclass
class RunSummary:
    total_nodes: int
    mode: str
    fingerprint: str
    makespan_us: int
    first_arrival_us: int | None
    last_completion_us: int | None
    utilization_avg: float | None
    utilization_std: float | None
    jobs: list[JobRecord]
    timeline: list[tuple[int, int, int, int]]  # time, allocated, running, completed
    actions: list[ActionRecord]
    decisions: int
    events_processed: int
    events_skipped: int

    @property
    def makespan(self) -> float:
        return self.makespan_us / USEC_PER_SEC

    def completed_jobs(self) -> list[JobRecord]:
        return [j for j in self.jobs if j.finish_us is not None]

    def mean_us(self, attr: str) -> float | None:
        vals = [getattr(j, attr) for j in self.completed_jobs()]
        vals = [v for v in vals if v is not None]
        if not vals:
            return None
        return sum(vals) / len(vals)

    def action_stats(self) -> dict[ActionKind, ActionStats]:
        out: dict[ActionKind, ActionStats] = {}
        njobs = max(len(self.jobs), 1)
        for kind in ActionKind:
            durs = [a.duration_us / USEC_PER_SEC
                    for a in self.actions if a.kind is kind]
            if not durs:
                continue
            avg = sum(durs) / len(durs)
            var = sum((d - avg) ** 2 for d in durs) / len(durs)
            out[kind] = ActionStats(len(durs), len(durs) / njobs,
                                    min(durs), max(durs), avg, math.sqrt(var))
        return out


class Collector:
    """Append-only event sink feeding the summary and the trace."""

    def __init__(self, total_nodes: int, mode: str, fingerprint: str):
        self.total_nodes = total_nodes
        self.mode = mode
        self.fingerprint = fingerprint
        self.jobs: dict[int, JobRecord] = {}
        self.timeline: list[tuple[int, int, int, int]] = []
        self.actions: list[ActionRecord] = []
        self.decisions = 0
        self.trace: list[str] = []
        self._running = 0
        self._completed = 0

    # -- trace ---------------------------------------------------------------

    def trace_line(self, text: str) -> None:
        self.trace.append(text)

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n" if self.trace else ""

    # -- lifecycle -----------------------------------------------------------

    def job_submitted(self, desc, unschedulable: bool) -> None:
        self.jobs[desc.id] = JobRecord(desc.id, desc.app, desc.flexible,
                                       desc.arrival_us,
                                       unschedulable=unschedulable)

    def job_started(self, job_id: int, now: int) -> None:
        self.jobs[job_id].start_us = now
        self._running += 1

    def job_finished(self, job_id: int, now: int) -> None:
        self.jobs[job_id].finish_us = now
        self._running -= 1
        self._completed += 1

    def job_resized(self, job_id: int) -> None:
        self.jobs[job_id].resizes += 1

    @property
    def running_count(self) -> int:
        return self._running

    @property
    def completed_count(self) -> int:
        return self._completed

    def allocation_changed(self, now: int, allocated: int) -> None:
        point = (now, allocated, self._running, self._completed)
        if self.timeline and self.timeline[-1][0] == now:
            self.timeline[-1] = point
        elif self.timeline and self.timeline[-1][1:] == point[1:]:
            return  # nothing changed
        else:
            self.timeline.append(point)

    def decision(self, action: Action) -> None:
        self.decisions += 1

    def action_finished(self, record: ActionRecord) -> None:
        self.actions.append(record)

    # -- summary ---------------------------------------------------------------

    def summarize(self, events_processed: int, events_skipped: int) -> RunSummary:
        arrivals = [j.arrival_us for j in self.jobs.values()]
        finishes = [j.finish_us for j in self.jobs.values() if j.finish_us is not None]
        first = min(arrivals) if arrivals else None
        last = max(finishes) if finishes else None
        makespan = (last - first) if (first is not None and last is not None) else 0
        if makespan > 0:
            avg, std = utilization(self.timeline, first, last, self.total_nodes)
        else:
            avg = std = None
        return RunSummary(
            total_nodes=self.total_nodes, mode=self.mode,
            fingerprint=self.fingerprint, makespan_us=makespan,
            first_arrival_us=first, last_completion_us=last,
            utilization_avg=avg, utilization_std=std,
            jobs=sorted(self.jobs.values(), key=lambda j: j.id),
            timeline=list(self.timeline), actions=list(self.actions),
            decisions=self.decisions, events_processed=events_processed,
            events_skipped=events_skipped)


def utilization(timeline: list[tuple[int, int, int, int]],
                start_us: int, end_us: int,
                total_nodes: int) -> tuple[float, float]:
    """Time-weighted mean and standard deviation of the allocated fraction.

    The timeline is a step function sampled at its change points; the
    window outside any recorded point counts as zero allocation.
    """
    if end_us <= start_us:
        raise MetricsError("utilization window must have positive length")
    span = end_us - start_us
    points = [(t, alloc) for t, alloc, _, _ in timeline]
    mean_acc = 0.0
    sq_acc = 0.0
    level = 0
    prev = start_us
    for t, alloc in points:
        if t <= start_us:
            level = alloc
            continue
        t = min(t, end_us)
        frac = level / total_nodes
        mean_acc += frac * (t - prev)
        sq_acc += frac * frac * (t - prev)
        prev = t
        level = alloc
        if t >= end_us:
            break
    if prev < end_us:
        frac = level / total_nodes
        mean_acc += frac * (end_us - prev)
        sq_acc += frac * frac * (end_us - prev)
    mean = mean_acc / span
    var = max(sq_acc / span - mean * mean, 0.0)
    return mean * 100.0, math.sqrt(var) * 100.0


# -- gain reports ---------------------------------------------------------------


@dataclass
class GainReport:
    makespan_gain: float
    wait_gain: float | None
    exec_gain: float | None
    completion_gain: float | None
    per_job: list[tuple[int, int, int, int]]  # id, wait/exec/completion diffs (us)


def _gain(fixed: float | None, flexible: float | None) -> float | None:
    if fixed is None or flexible is None or fixed == 0:
        return None
    return (fixed - flexible) / fixed * 100.0


def gain_report(fixed: RunSummary, flexible: RunSummary) -> GainReport:
    """Relative gains of the flexible run over the fixed run.

    Both runs must come from the identical workload; per-job rows pair the
    jobs completed in both runs.
    """
    if fixed.fingerprint != flexible.fingerprint:
        raise MetricsError("gain report requires runs over the identical workload")
    per_job = []
    flex_jobs = {j.id: j for j in flexible.jobs}
    for jf in fixed.jobs:
        jx = flex_jobs.get(jf.id)
        if jx is None or jf.finish_us is None or jx.finish_us is None:
            continue
        per_job.append((jf.id,
                        jf.wait_us - jx.wait_us,
                        jf.exec_us - jx.exec_us,
                        jf.completion_us - jx.completion_us))
    return GainReport(
        makespan_gain=_gain(fixed.makespan_us, flexible.makespan_us),
        wait_gain=_gain(fixed.mean_us("wait_us"), flexible.mean_us("wait_us")),
        exec_gain=_gain(fixed.mean_us("exec_us"), flexible.mean_us("exec_us")),
        completion_gain=_gain(fixed.mean_us("completion_us"),
                              flexible.mean_us("completion_us")),
        per_job=per_job)


# -- CSV rendering ----------------------------------------------------------------


def jobs_csv(summary: RunSummary) -> str:
    rows = ["id,app,flexible,arrival,start,finish,wait,exec,completion,resizes"]
    for j in summary.jobs:
        opt = lambda v: _fmt(v) if v is not None else ""
        rows.append(f"{j.id},{j.app},{int(j.flexible)},{_fmt(j.arrival_us)},"
                    f"{opt(j.start_us)},{opt(j.finish_us)},{opt(j.wait_us)},"
                    f"{opt(j.exec_us)},{opt(j.completion_us)},{j.resizes}")
    return "\n".join(rows) + "\n"


def timeline_csv(summary: RunSummary) -> str:
    rows = ["time,allocated,running,completed"]
    for t, alloc, running, completed in summary.timeline:
        rows.append(f"{_fmt(t)},{alloc},{running},{completed}")
    return "\n".join(rows) + "\n"


def actions_csv(summary: RunSummary) -> str:
    rows = ["time,job,kind,target,duration,reason,outcome"]
    for a in summary.actions:
        target = "" if a.target is None else str(a.target)
        rows.append(f"{_fmt(a.applied_us)},{a.job_id},{a.kind.value},{target},"
                    f"{_fmt(a.duration_us)},{a.reason},{a.outcome}")
    return "\n".join(rows) + "\n"


def summary_csv(summary: RunSummary) -> str:
    rows = ["key,value"]

    def put(key, value):
        rows.append(f"{key},{value}")

    put("mode", summary.mode)
    put("total_nodes", summary.total_nodes)
    put("jobs", len(summary.jobs))
    put("completed", len(summary.completed_jobs()))
    put("unschedulable", sum(1 for j in summary.jobs if j.unschedulable))
    put("makespan", _fmt(summary.makespan_us))
    put("utilization_avg",
        "" if summary.utilization_avg is None else _fmt_f(summary.utilization_avg))
    put("utilization_std",
        "" if summary.utilization_std is None else _fmt_f(summary.utilization_std))
    for name in ("wait_us", "exec_us", "completion_us"):
        mean = summary.mean_us(name)
        put("mean_" + name.removesuffix("_us"),
            "" if mean is None else _fmt_f(mean / USEC_PER_SEC))
    put("decisions", summary.decisions)
    for kind, st in summary.action_stats().items():
        key = f"action_{kind.value}"
        put(key + "_count", st.count)
        put(key + "_per_job", _fmt_f(st.actions_per_job))
        put(key + "_min", _fmt_f(st.min_s))
        put(key + "_max", _fmt_f(st.max_s))
        put(key + "_avg", _fmt_f(st.avg_s))
        put(key + "_std", _fmt_f(st.std_s))
    return "\n".join(rows) + "\n"


def gains_csv(report: GainReport) -> str:
    rows = ["metric,gain_pct"]
    for name, value in (("makespan", report.makespan_gain),
                        ("wait", report.wait_gain),
                        ("exec", report.exec_gain),
                        ("completion", report.completion_gain)):
        rows.append(f"{name},{'' if value is None else _fmt_f(value)}")
    return "\n".join(rows) + "\n"


def gains_jobs_csv(report: GainReport) -> str:
    rows = ["id,wait_diff,exec_diff,completion_diff"]
    for job_id, dw, de, dc in report.per_job:
        rows.append(f"{job_id},{_fmt(dw)},{_fmt(de)},{_fmt(dc)}")
    return "\n".join(rows) + "\n"


# -- trace auditor ------------------------------------------------------------------


def audit_trace(trace_text: str, total_nodes: int) -> list[str]:
    """Re-check policy justifications and node conservation from a trace.

    Returns human-readable violations; an empty list means the trace is
    consistent.  The auditor only trusts the per-line snapshots, not the
    simulator's conclusions: shrink eligibility and expand emptiness are
    recomputed from the recorded queue sizes.
    """
    violations: list[str] = []
    for lineno, line in enumerate(trace_text.splitlines(), start=1):
        fields = dict(part.split("=", 1) for part in line.split()[1:]
                      if "=" in part)
        if line.startswith("STATE "):
            free = int(fields["free"])
            alloc = int(fields["alloc"])
            if free + alloc != total_nodes:
                violations.append(
                    f"line {lineno}: conservation broken free={free} alloc={alloc}")
        elif line.startswith("DECISION "):
            queue = [int(s) for s in fields["queue"].split(",") if s]
            free = int(fields["free"])
            cur = int(fields["cur"])
            kind = fields["kind"]
            reason = fields["reason"]
            if kind == "shrink" and reason == "WideOptShrink":
                target = int(fields["target"])
                boosted = fields.get("boost", "-")
                freed = cur - target
                eligible = [s for s in queue
                            if s <= total_nodes and free < s <= free + freed]
                if not eligible:
                    violations.append(
                        f"line {lineno}: shrink without an eligible queued job")
                if boosted == "-":
                    violations.append(f"line {lineno}: shrink without a boost")
            elif kind == "expand" and reason == "WideOptExpand":
                startable = [s for s in queue if s <= total_nodes]
                if startable and min(startable) <= free:
                    violations.append(
                        f"line {lineno}: expand while a queued job fits in "
                        f"{free} free nodes")
    return violations
