"""Deterministic discrete-event engine and the simulation loop.

Simulated time is an integer count of microseconds, which removes any
platform dependence from event ordering.  Events at equal timestamps are
processed by kind priority -- completions first, so freed nodes are
visible to arrivals and checks at the same instant -- then by insertion
sequence.  Cancellation is done by tombstoning: each job carries a
generation counter and events from an older generation are skipped.

The :class:`Simulation` wires the workload, the resource manager, the
runtime check layer and the metrics collector into one run.  A run is
single threaded; concurrent runs share nothing.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

from . import dmr
from .appmodel import (AppModel, CostModelParams, default_apps, resize_cost,
                       scheduling_overhead, step_time_us)
from .metrics import ActionRecord, Collector, RunSummary
from .rms import (Action, ActionKind, JobPhase, ResizerGrant, ResizerState,
                  ResourceManager, StartGrant, JobState)
from .workload import JobDescriptor, workload_fingerprint

USEC_PER_SEC = 1_000_000


def usec(seconds: float) -> int:
    return round(seconds * USEC_PER_SEC)


def seconds(us: int) -> float:
    return us / USEC_PER_SEC


def _fmt(us: int) -> str:
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // USEC_PER_SEC}.{us % USEC_PER_SEC:06d}"


class CausalityError(ValueError):
    """An event was scheduled in the past."""


class EventKind(enum.IntEnum):
    """Event kinds in their tie-breaking order at equal timestamps."""

    STEP_COMPLETE = 0
    JOB_ARRIVAL = 1
    CHECK_POINT = 2
    RESIZE_COMPLETE = 3
    RESIZER_TIMEOUT = 4
    SIMULATION_END = 5


@dataclass(frozen=True)
class Event:
    time: int  # microseconds
    kind: EventKind
    job: int | None
    gen: int
    seq: int


@dataclass
class Clock:
    now: int = 0


class EventQueue:
    """Priority queue ordered by (time, kind, seq)."""

    def __init__(self, clock: Clock):
        self._clock = clock
        self._heap: list[tuple[int, int, int, Event]] = []
        self._seq = 0

    def schedule(self, time: int, kind: EventKind, job: int | None = None,
                 gen: int = 0) -> Event:
        if time < self._clock.now:
            raise CausalityError(
                f"event at {time} scheduled before clock {self._clock.now}")
        ev = Event(time, kind, job, gen, self._seq)
        heapq.heappush(self._heap, (time, int(kind), self._seq, ev))
        self._seq += 1
        return ev

    def pop(self) -> Event | None:
        if not self._heap:
            return None
        return heapq.heappop(self._heap)[3]

    def scheduled_total(self) -> int:
        return self._seq

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class _ActiveResize:
    kind: ActionKind
    target: int
    old_procs: int
    reason: str
    decided_us: int
    applied_us: int
    free_at_apply: int


class Simulation:
    """One deterministic run of a workload on a simulated cluster."""

    def __init__(self, total_nodes: int, jobs: list[JobDescriptor],
                 apps: dict[str, AppModel] | None = None, *,
                 mode: str = "sync", cost: CostModelParams | None = None,
                 expand_timeout: float = 40.0,
                 inhibitor: float | str | None = "app",
                 backfill: bool = True, trace_plans: bool = False,
                 requested_mode: bool = True, preferred_mode: bool = True,
                 wide_mode: bool = True):
        if mode not in ("sync", "async"):
            raise ValueError(f"mode must be sync or async, got {mode!r}")
        self.mode = mode
        self.apps = apps if apps is not None else default_apps()
        self.cost = cost if cost is not None else CostModelParams()
        self.cost.validate()
        self.inhibitor = inhibitor
        self.trace_plans = trace_plans
        self.clock = Clock()
        self.queue = EventQueue(self.clock)
        self.rms = ResourceManager(total_nodes, self.apps,
                                   backfill=backfill,
                                   expand_timeout=expand_timeout,
                                   requested_mode=requested_mode,
                                   preferred_mode=preferred_mode,
                                   wide_mode=wide_mode)
        self.descs = {d.id: d for d in jobs}
        if len(self.descs) != len(jobs):
            raise ValueError("duplicate job ids in workload")
        for d in jobs:
            d.validate()
            if d.app not in self.apps:
                raise ValueError(f"job {d.id}: unknown application {d.app!r}")
        self.collector = Collector(total_nodes, mode, workload_fingerprint(jobs))
        self._order = [d.id for d in jobs]

    # -- helpers ---------------------------------------------------------------

    def _trace(self, line: str) -> None:
        self.collector.trace_line(line)

    def _period_us(self, js: JobState) -> int | None:
        if self.inhibitor == "app":
            period = self.apps[js.desc.app].period
        else:
            period = self.inhibitor
        return None if period is None else usec(float(period))

    def _step_us(self, js: JobState) -> int:
        d = js.desc
        return step_time_us(self.apps[d.app], d.base_step_us,
                            d.initial_size, js.procs)

    # -- run loop ---------------------------------------------------------------

    def run(self, until: float | None = None) -> RunSummary:
        self._trace("# flexsched trace v1")
        self._trace(f"# nodes={self.rms.total_nodes} mode={self.mode} "
                    f"jobs={len(self.descs)}")
        for job_id in self._order:
            self.queue.schedule(self.descs[job_id].arrival_us,
                                EventKind.JOB_ARRIVAL, job_id)
        if until is not None:
            self.queue.schedule(usec(until), EventKind.SIMULATION_END)

        processed = 0
        skipped = 0
        while (ev := self.queue.pop()) is not None:
            self.clock.now = ev.time
            if ev.kind is EventKind.SIMULATION_END:
                processed += 1
                break
            js = None
            if ev.kind is not EventKind.JOB_ARRIVAL:
                js = self.rms.jobs.get(ev.job)
                if js is None or js.gen != ev.gen:
                    skipped += 1  # tombstoned by a cancellation
                    continue
            self._trace(f"EVENT seq={ev.seq} t={_fmt(ev.time)} "
                        f"kind={ev.kind.name} job={ev.job}")
            self._dispatch(ev, js)
            processed += 1
            alloc = self.rms.allocated_nodes()
            self.rms.assert_conservation()
            self.collector.allocation_changed(ev.time, alloc)
            self._trace(f"STATE t={_fmt(ev.time)} free={self.rms.free_nodes} "
                        f"alloc={alloc} running={self.collector.running_count} "
                        f"queued={len(self.rms.queued_ids())} "
                        f"done={self.collector.completed_count}")
        self._trace(f"END t={_fmt(self.clock.now)} processed={processed} "
                    f"skipped={skipped}")
        return self.collector.summarize(processed, skipped)

    def _dispatch(self, ev: Event, js: JobState | None) -> None:
        if ev.kind is EventKind.JOB_ARRIVAL:
            self._on_arrival(ev)
        elif ev.kind is EventKind.STEP_COMPLETE:
            self._on_step_complete(js)
        elif ev.kind is EventKind.CHECK_POINT:
            self._on_check_point(js)
        elif ev.kind is EventKind.RESIZE_COMPLETE:
            self._on_resize_complete(js)
        elif ev.kind is EventKind.RESIZER_TIMEOUT:
            self._on_resizer_timeout(js)

    # -- handlers -----------------------------------------------------------------

    def _on_arrival(self, ev: Event) -> None:
        now = self.clock.now
        desc = self.descs[ev.job]
        js = self.rms.submit(desc, now)
        self.collector.job_submitted(desc, js.unschedulable)
        if js.unschedulable:
            self._trace(f"NOTE t={_fmt(now)} job={desc.id} unschedulable "
                        f"size={desc.initial_size} total={self.rms.total_nodes}")
        self._run_queue(now)

    def _run_queue(self, now: int) -> None:
        for grant in self.rms.schedule_queue(now):
            if isinstance(grant, StartGrant):
                js = self.rms.jobs[grant.job_id]
                self.collector.job_started(js.id, now)
                self._trace(f"START t={_fmt(now)} job={js.id} "
                            f"nodes={grant.nodes} "
                            f"wait={_fmt(now - js.desc.arrival_us)}")
                self._continue_steps(js, now)
            else:
                self._resume_granted_expand(grant, now)

    def _plan_trace(self, js: JobState, old: int, new: int, now: int) -> None:
        """Compute the symbolic redistribution plan; dump it when asked."""
        plan = dmr.plan_resize(old, new, js.desc.data_volume)
        if self.trace_plans:
            self._trace(f"PLAN t={_fmt(now)} job={js.id} {dmr.format_plan(plan)}")

    def _resume_granted_expand(self, grant: ResizerGrant, now: int) -> None:
        js = self.rms.jobs[grant.job_id]
        js.gen += 1  # cancels the pending timeout event
        js.phase = JobPhase.RUNNING
        self._plan_trace(js, grant.old_procs, grant.target, now)
        cost_us = usec(resize_cost(js.desc.data_volume, grant.old_procs,
                                   grant.target, self.cost))
        js.busy_until_us = now + cost_us
        self.queue.schedule(js.busy_until_us, EventKind.RESIZE_COMPLETE,
                            js.id, js.gen)
        self._trace(f"GRANT t={_fmt(now)} job={js.id} target={grant.target} "
                    f"from={grant.old_procs}")

    def _continue_steps(self, js: JobState, now: int) -> None:
        """Schedule the next run segment, batching inhibited boundaries."""
        desc = js.desc
        remaining = desc.iterations - js.steps_done
        assert remaining > 0
        step = self._step_us(js)
        if not desc.flexible:
            k = remaining
        elif js.pending is not None:
            k = 1  # the pending action applies at the next boundary
        else:
            period = self._period_us(js)
            last = js.last_forward_us
            if period is None or last is None:
                k = 1
            else:
                need = last + period - now
                k = 1 if need <= step else -(-need // step)
        k = max(1, min(k, remaining))
        js.steps_in_flight = k
        js.busy_until_us = now + k * step
        self.queue.schedule(js.busy_until_us, EventKind.STEP_COMPLETE,
                            js.id, js.gen)

    def _on_step_complete(self, js: JobState) -> None:
        now = self.clock.now
        js.steps_done += js.steps_in_flight
        js.steps_in_flight = 0
        if js.steps_done >= js.desc.iterations:
            self._finish(js, now)
            return
        if js.desc.flexible:
            self.queue.schedule(now, EventKind.CHECK_POINT, js.id, js.gen)
        else:
            self._continue_steps(js, now)

    def _finish(self, js: JobState, now: int) -> None:
        if js.pending is not None:
            # a decision that never got applied: close it out for the books
            self.collector.action_finished(ActionRecord(
                js.id, js.pending.kind, js.pending.target,
                js.pending.reason.value, js.pending.decided_us,
                now, now, "discarded", self.rms.free_nodes))
        self.rms.complete_job(js, now)
        js.gen += 1
        self.collector.job_finished(js.id, now)
        self._trace(f"FINISH t={_fmt(now)} job={js.id} "
                    f"exec={_fmt(now - js.start_us)}")
        self._run_queue(now)

    def _on_check_point(self, js: JobState) -> None:
        now = self.clock.now
        request = dmr.DmrRequest.for_job(js.desc)
        period = self._period_us(js)
        if self.mode == "sync":
            action = dmr.check_status(js, request, now, self.rms, period)
            if action is None:
                self._continue_steps(js, now)
                return
            self._log_decision(action)
            self._apply_action(js, action, now, charge=True)
        else:
            pending = js.pending
            js.pending = None
            if pending is None:
                self._resume(js, now)
            else:
                self._apply_action(js, pending, now, charge=False)

    def _resume(self, js: JobState, now: int) -> None:
        """Back to stepping; in asynchronous mode decide for the next point."""
        if self.mode == "async":
            request = dmr.DmrRequest.for_job(js.desc)
            action = dmr.icheck_status(js, request, now, self.rms,
                                       self._period_us(js))
            if action is not None:
                self._log_decision(action)
        self._continue_steps(js, now)

    def _log_decision(self, action: Action) -> None:
        self.collector.decision(action)
        queue = ",".join(str(s) for s in action.queue_sizes)
        target = "-" if action.target is None else str(action.target)
        boost = "-" if action.boosted_job is None else str(action.boosted_job)
        self._trace(f"DECISION t={_fmt(action.decided_us)} job={action.job_id} "
                    f"kind={action.kind.value} cur={action.cur} target={target} "
                    f"reason={action.reason.value} free={action.free_at_decision} "
                    f"queue={queue} boost={boost}")

    def _apply_action(self, js: JobState, action: Action, now: int,
                      charge: bool) -> None:
        """Realize a decision at a reconfiguring point.

        ``charge`` reflects the synchronous mode, where the decision
        latency delays the job; asynchronously it overlapped the last step.
        """
        volume = js.desc.data_volume
        if action.kind is ActionKind.NONE:
            oh_us = usec(scheduling_overhead(0, self.cost))
            self.collector.action_finished(ActionRecord(
                js.id, ActionKind.NONE, None, action.reason.value,
                action.decided_us, now, now + oh_us, "none",
                self.rms.free_nodes))
            self._resume(js, now + (oh_us if charge else 0))
            return

        target = action.target
        oh_us = usec(scheduling_overhead(max(js.procs, target), self.cost)) \
            if charge else 0
        if action.kind is ActionKind.SHRINK:
            self._plan_trace(js, js.procs, target, now)
            cost_us = usec(resize_cost(volume, js.procs, target, self.cost))
            js.active_resize = _ActiveResize(
                ActionKind.SHRINK, target, js.procs, action.reason.value,
                action.decided_us, now, self.rms.free_nodes)
            js.busy_until_us = now + oh_us + cost_us
            self.queue.schedule(js.busy_until_us, EventKind.RESIZE_COMPLETE,
                                js.id, js.gen)
            return

        free_before = self.rms.free_nodes
        resizer = self.rms.begin_expand(js, target, now)
        js.active_resize = _ActiveResize(
            ActionKind.EXPAND, target, resizer.old_procs, action.reason.value,
            action.decided_us, now, free_before)
        if resizer.state is ResizerState.GRANTED:
            self._plan_trace(js, resizer.old_procs, target, now)
            cost_us = usec(resize_cost(volume, resizer.old_procs, target,
                                       self.cost))
            js.busy_until_us = now + oh_us + cost_us
            self.queue.schedule(js.busy_until_us, EventKind.RESIZE_COMPLETE,
                                js.id, js.gen)
        else:
            js.phase = JobPhase.STALLED
            js.busy_until_us = resizer.deadline_us
            self.queue.schedule(resizer.deadline_us, EventKind.RESIZER_TIMEOUT,
                                js.id, js.gen)
            self._trace(f"STALL t={_fmt(now)} job={js.id} target={target} "
                        f"need={resizer.extra} free={free_before}")

    def _on_resize_complete(self, js: JobState) -> None:
        now = self.clock.now
        ar: _ActiveResize = js.active_resize
        js.active_resize = None
        js.resize_count += 1
        self.collector.job_resized(js.id)
        if ar.kind is ActionKind.SHRINK:
            freed = self.rms.complete_shrink(js, ar.target)
            self._trace(f"ACTION t={_fmt(now)} job={js.id} kind=shrink "
                        f"target={ar.target} from={ar.old_procs} "
                        f"freed={freed} duration={_fmt(now - ar.applied_us)} "
                        f"outcome=done")
            self._record_action(js, ar, now, "done")
            self._run_queue(now)
        else:
            self._trace(f"ACTION t={_fmt(now)} job={js.id} kind=expand "
                        f"target={ar.target} from={ar.old_procs} "
                        f"duration={_fmt(now - ar.applied_us)} outcome=done "
                        f"free_at_apply={ar.free_at_apply}")
            self._record_action(js, ar, now, "done")
        self._resume(js, now)

    def _on_resizer_timeout(self, js: JobState) -> None:
        now = self.clock.now
        self.rms.cancel_resizer(js)
        js.phase = JobPhase.RUNNING
        ar: _ActiveResize = js.active_resize
        js.active_resize = None
        self._trace(f"ACTION t={_fmt(now)} job={js.id} kind=expand "
                    f"target={ar.target} from={ar.old_procs} "
                    f"duration={_fmt(now - ar.applied_us)} outcome=aborted")
        self._record_action(js, ar, now, "aborted")
        self._run_queue(now)
        self._resume(js, now)

    def _record_action(self, js: JobState, ar: _ActiveResize, end: int,
                       outcome: str) -> None:
        self.collector.action_finished(ActionRecord(
            js.id, ar.kind, ar.target, ar.reason, ar.decided_us,
            ar.applied_us, end, outcome, ar.free_at_apply))
