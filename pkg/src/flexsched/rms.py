"""Resource-manager model: queue, start scheduling, reconfiguration policy.

The manager owns the node pool and the per-job dynamic state.  Job starts
follow FCFS by priority with EASY backfilling (a single reservation for
the blocked queue head).  Running flexible jobs consult ``decide_action``
at their reconfiguring points; the decision policy has three modes in
strict precedence:

1. requested action -- a demanded minimum above the current allocation is
   an expand demand, granted only if free nodes suffice;
2. preferred size -- matching the preference returns no action, otherwise
   the job moves toward it (growing past it, up to the maximum, only while
   the queue is empty);
3. wide optimization -- grow into idle nodes when no queued job could use
   them, or shrink so that a queued job can start, boosting that job to
   the maximum priority.

Expansions go through an auxiliary resizer allocation: granted atomically
when the extra nodes are free, otherwise queued at maximum priority until
nodes appear or a timeout cancels it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .appmodel import AppModel, step_time_us
from .workload import JobDescriptor

INFINITE_US = 1 << 62


class SchedulerError(ValueError):
    """Contract violation inside the resource manager."""


class RequestError(ValueError):
    """Inconsistent resize request (e.g. minimum above maximum)."""


class JobPhase(enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    STALLED = "stalled"  # blocked waiting for a resizer grant
    DONE = "done"


class ActionKind(enum.Enum):
    EXPAND = "expand"
    SHRINK = "shrink"
    NONE = "none"


class ActionReason(enum.Enum):
    REQUESTED = "RequestedAction"
    PREFERRED = "PreferredMatch"
    WIDE_EXPAND = "WideOptExpand"
    WIDE_SHRINK = "WideOptShrink"
    NO_CHANGE = "NoChange"


@dataclass(frozen=True)
class Action:
    """Outcome of one reconfiguration decision, with its provenance.

    The justification fields snapshot what the manager saw when deciding,
    so a trace auditor can re-check the policy afterwards.
    """

    kind: ActionKind
    target: int | None
    reason: ActionReason
    job_id: int
    decided_us: int
    cur: int
    free_at_decision: int
    queue_sizes: tuple[int, ...]
    boosted_job: int | None = None


class ResizerState(enum.Enum):
    PENDING = "pending"
    GRANTED = "granted"
    CANCELLED = "cancelled"


@dataclass
class ResizerJob:
    parent_id: int
    extra: int
    submit_us: int
    deadline_us: int
    old_procs: int
    target: int
    state: ResizerState = ResizerState.PENDING
    seq: int = 0


@dataclass
class JobState:
    """Dynamic execution state of one job."""

    desc: JobDescriptor
    arrival_seq: int
    phase: JobPhase = JobPhase.QUEUED
    procs: int = 0
    steps_done: int = 0
    steps_in_flight: int = 0
    start_us: int | None = None
    finish_us: int | None = None
    busy_until_us: int = 0
    gen: int = 0  # generation counter; stale events are tombstoned
    boosted: bool = False
    unschedulable: bool = False
    resize_count: int = 0
    pending: Action | None = None  # asynchronous mode only
    last_forward_us: int | None = None  # checking-inhibitor state
    resizer: ResizerJob | None = None
    active_resize: object | None = None  # engine bookkeeping

    @property
    def id(self) -> int:
        return self.desc.id


@dataclass(frozen=True)
class StartGrant:
    job_id: int
    nodes: int


@dataclass(frozen=True)
class ResizerGrant:
    job_id: int
    old_procs: int
    target: int


def factor_reachable(initial: int, alloc: int, factor: int) -> bool:
    """True when ``alloc`` lies on the resize chain anchored at ``initial``."""
    if alloc == initial:
        return True
    if alloc > initial:
        while initial < alloc:
            initial *= factor
        return initial == alloc
    while initial > alloc and initial % factor == 0:
        initial //= factor
    return initial == alloc


def expand_targets(cur: int, factor: int, hi: int) -> list[int]:
    """Factor-reachable sizes strictly above ``cur``, at most ``hi``."""
    out = []
    t = cur * factor
    while t <= hi:
        out.append(t)
        t *= factor
    return out


def shrink_targets(cur: int, factor: int, lo: int) -> list[int]:
    """Factor-reachable sizes strictly below ``cur``, at least ``lo``.

    Shrinking requires exact divisibility at every level, so the chain
    stops at the first size not divisible by the factor.
    """
    out = []
    t = cur
    while t % factor == 0:
        t //= factor
        if t < lo:
            break
        out.append(t)
    return out


class ResourceManager:
    """Node pool, job table, queue, and the reconfiguration policy."""

    def __init__(self, total_nodes: int, apps: dict[str, AppModel], *,
                 backfill: bool = True, expand_timeout: float = 40.0,
                 requested_mode: bool = True, preferred_mode: bool = True,
                 wide_mode: bool = True):
        if total_nodes < 1:
            raise SchedulerError("total_nodes must be >= 1")
        self.total_nodes = total_nodes
        self.free_nodes = total_nodes
        self.apps = apps
        self.backfill = backfill
        self.requested_mode = requested_mode
        self.preferred_mode = preferred_mode
        self.wide_mode = wide_mode
        self.expand_timeout_us = round(expand_timeout * 1_000_000)
        self.jobs: dict[int, JobState] = {}
        self._queue: list[int] = []  # priority order, head first
        self._resizers: list[ResizerJob] = []
        self._arrival_seq = 0
        self._resizer_seq = 0

    # -- queue bookkeeping -------------------------------------------------

    def _priority_key(self, job_id: int) -> tuple[int, int]:
        js = self.jobs[job_id]
        return (0 if js.boosted else 1, js.arrival_seq)

    def _sort_queue(self) -> None:
        self._queue.sort(key=self._priority_key)

    def queued_ids(self) -> tuple[int, ...]:
        return tuple(self._queue)

    def queued_sizes(self) -> tuple[int, ...]:
        return tuple(self.jobs[j].desc.initial_size for j in self._queue)

    def boost(self, job_id: int) -> None:
        js = self.jobs[job_id]
        if not js.boosted:
            js.boosted = True
            self._sort_queue()

    # -- submission and starts ----------------------------------------------

    def submit(self, desc: JobDescriptor, now: int) -> JobState:
        if desc.id in self.jobs:
            raise SchedulerError(f"duplicate job id {desc.id}")
        js = JobState(desc=desc, arrival_seq=self._arrival_seq)
        self._arrival_seq += 1
        if desc.initial_size > self.total_nodes:
            js.unschedulable = True
        self.jobs[desc.id] = js
        self._queue.append(desc.id)
        self._sort_queue()
        return js

    def _start(self, js: JobState, now: int) -> StartGrant:
        size = js.desc.initial_size
        assert size <= self.free_nodes
        self.free_nodes -= size
        js.procs = size
        js.phase = JobPhase.RUNNING
        js.start_us = now
        self._queue.remove(js.id)
        return StartGrant(js.id, size)

    def _grant_resizer(self, rj: ResizerJob) -> ResizerGrant:
        js = self.jobs[rj.parent_id]
        assert rj.extra <= self.free_nodes
        self.free_nodes -= rj.extra
        js.procs = rj.target
        rj.state = ResizerState.GRANTED
        js.resizer = None
        return ResizerGrant(rj.parent_id, rj.old_procs, rj.target)

    def _estimate_end_us(self, js: JobState, now: int) -> int:
        step = step_time_us(self.apps[js.desc.app], js.desc.base_step_us,
                            js.desc.initial_size, max(js.procs, 1))
        left = js.desc.iterations - js.steps_done - js.steps_in_flight
        return max(js.busy_until_us, now) + max(left, 0) * step

    def _queued_runtime_us(self, js: JobState) -> int:
        return js.desc.iterations * js.desc.base_step_us

    def _reservation(self, need: int, now: int) -> tuple[int, int]:
        """Earliest time ``need`` nodes come free, and the spare nodes then.

        Uses the running jobs' remaining max-runtime estimates.  If the
        requirement can never be met the reservation is unconstrained.
        """
        if need > self.total_nodes:
            return INFINITE_US, self.total_nodes
        releases = sorted(
            ((self._estimate_end_us(js, now), js.procs)
             for js in self.jobs.values()
             if js.phase in (JobPhase.RUNNING, JobPhase.STALLED)),
        )
        acc = self.free_nodes
        for end_us, nodes in releases:
            acc += nodes
            if acc >= need:
                return end_us, acc - need
        return INFINITE_US, self.total_nodes

    def schedule_queue(self, now: int) -> list[StartGrant | ResizerGrant]:
        """Grant pending resizers and start queued jobs.

        Resizers outrank all queued jobs.  Jobs start FCFS while the head
        fits; once blocked, later jobs may only backfill without delaying
        the head's reservation.
        """
        grants: list[StartGrant | ResizerGrant] = []

        while self._resizers:
            rj = self._resizers[0]
            if rj.extra <= self.free_nodes:
                self._resizers.pop(0)
                grants.append(self._grant_resizer(rj))
            else:
                break

        blocked_need: int | None = None
        blocked_job: int | None = None
        if self._resizers:
            blocked_need = self._resizers[0].extra
        else:
            while self._queue:
                head = self.jobs[self._queue[0]]
                size = head.desc.initial_size
                if size <= self.free_nodes:
                    grants.append(self._start(head, now))
                    continue
                blocked_need = size
                blocked_job = head.id
                break

        if blocked_need is not None and self.backfill:
            shadow_us, extra = self._reservation(blocked_need, now)
            for job_id in list(self._queue):
                if job_id == blocked_job:
                    continue
                js = self.jobs[job_id]
                size = js.desc.initial_size
                if size > self.free_nodes:
                    continue
                ends_before = now + self._queued_runtime_us(js) <= shadow_us
                if ends_before or size <= extra:
                    grants.append(self._start(js, now))
                    if not ends_before:
                        extra -= size
        return grants

    # -- reconfiguration policy ----------------------------------------------

    def decide_action(self, js: JobState, request, now: int) -> Action:
        """One decision for a running flexible job at a reconfiguring point."""
        if request.min_procs > request.max_procs:
            raise RequestError(
                f"request minimum {request.min_procs} above maximum {request.max_procs}")
        if js.phase is not JobPhase.RUNNING:
            raise SchedulerError(f"job {js.id} is not running")
        cur = js.procs
        factor = request.factor
        ctx = dict(job_id=js.id, decided_us=now, cur=cur,
                   free_at_decision=self.free_nodes,
                   queue_sizes=self.queued_sizes())

        # 1. requested action: demanded minimum above the allocation
        if self.requested_mode and request.min_procs > cur:
            for t in expand_targets(cur, factor, request.max_procs):
                if t >= request.min_procs:
                    if t - cur <= self.free_nodes:
                        return Action(ActionKind.EXPAND, t,
                                      ActionReason.REQUESTED, **ctx)
                    break
            return Action(ActionKind.NONE, None, ActionReason.NO_CHANGE, **ctx)

        # 2. preferred size
        if self.preferred_mode and request.preferred is not None:
            pref = request.preferred
            if pref == cur:
                return Action(ActionKind.NONE, None, ActionReason.PREFERRED, **ctx)
            if pref > cur:
                cap = request.max_procs if not self._queue else min(pref, request.max_procs)
                best = None
                for t in expand_targets(cur, factor, cap):
                    if t - cur <= self.free_nodes:
                        best = t
                if best is not None:
                    return Action(ActionKind.EXPAND, best,
                                  ActionReason.PREFERRED, **ctx)
            else:
                lo = max(pref, request.min_procs)
                chain = shrink_targets(cur, factor, lo)
                if chain:
                    # land on the reachable size closest to the preference
                    return Action(ActionKind.SHRINK, min(chain),
                                  ActionReason.PREFERRED, **ctx)
            return Action(ActionKind.NONE, None, ActionReason.NO_CHANGE, **ctx)

        # 3. wide optimization
        if not self.wide_mode:
            return Action(ActionKind.NONE, None, ActionReason.NO_CHANGE, **ctx)
        startable = [s for s in self.queued_sizes() if s <= self.total_nodes]
        any_fits = any(s <= self.free_nodes for s in startable)
        if not self._queue or not any_fits:
            best = None
            for t in expand_targets(cur, factor, request.max_procs):
                if t - cur <= self.free_nodes:
                    best = t
            if best is not None:
                return Action(ActionKind.EXPAND, best,
                              ActionReason.WIDE_EXPAND, **ctx)
        for job_id in self._queue:
            q = self.jobs[job_id]
            size = q.desc.initial_size
            if size > self.total_nodes:
                continue
            need = size - self.free_nodes
            if need <= 0:
                continue  # already startable; freeing nodes would not help it
            for t in shrink_targets(cur, factor, request.min_procs):
                if cur - t >= need:
                    self.boost(job_id)
                    return Action(ActionKind.SHRINK, t, ActionReason.WIDE_SHRINK,
                                  boosted_job=job_id, **ctx)
            # chain is ordered largest first; nothing freed enough, try next job
        return Action(ActionKind.NONE, None, ActionReason.NO_CHANGE, **ctx)

    # -- resize mechanics -----------------------------------------------------

    def begin_expand(self, js: JobState, target: int, now: int) -> ResizerJob:
        if target <= js.procs:
            raise SchedulerError("expand target must exceed the allocation")
        rj = ResizerJob(parent_id=js.id, extra=target - js.procs,
                        submit_us=now, deadline_us=now + self.expand_timeout_us,
                        old_procs=js.procs, target=target, seq=self._resizer_seq)
        self._resizer_seq += 1
        if rj.extra <= self.free_nodes:
            self._grant_resizer(rj)
        else:
            js.resizer = rj
            self._resizers.append(rj)
        return rj

    def cancel_resizer(self, js: JobState) -> None:
        rj = js.resizer
        if rj is None or rj.state is not ResizerState.PENDING:
            return
        rj.state = ResizerState.CANCELLED
        self._resizers.remove(rj)
        js.resizer = None

    def complete_shrink(self, js: JobState, target: int) -> int:
        if not (js.desc.min_procs <= target < js.procs):
            raise SchedulerError(
                f"shrink target {target} invalid for allocation {js.procs}")
        freed = js.procs - target
        js.procs = target
        self.free_nodes += freed
        return freed

    def complete_job(self, js: JobState, now: int) -> None:
        self.cancel_resizer(js)
        self.free_nodes += js.procs
        js.procs = 0
        js.phase = JobPhase.DONE
        js.finish_us = now
        js.pending = None

    # -- invariants ------------------------------------------------------------

    def allocated_nodes(self) -> int:
        return sum(js.procs for js in self.jobs.values())

    def assert_conservation(self) -> None:
        allocated = self.allocated_nodes()
        if self.free_nodes + allocated != self.total_nodes:
            raise SchedulerError(
                f"node conservation violated: free={self.free_nodes} "
                f"allocated={allocated} total={self.total_nodes}")
        for js in self.jobs.values():
            if js.phase in (JobPhase.RUNNING, JobPhase.STALLED) and js.desc.flexible:
                if not js.desc.min_procs <= js.procs <= js.desc.max_procs:
                    raise SchedulerError(
                        f"job {js.id} allocated {js.procs} outside bounds")
                if not factor_reachable(js.desc.initial_size, js.procs,
                                        js.desc.factor):
                    raise SchedulerError(
                        f"job {js.id} allocation {js.procs} unreachable from "
                        f"{js.desc.initial_size} by factor {js.desc.factor}")
