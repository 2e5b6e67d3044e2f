"""Runtime-side resize layer: check calls, inhibitor, redistribution plans.

``check_status`` is the synchronous reconfiguring-point call: it contacts
the manager and returns the action to apply immediately.  The asynchronous
``icheck_status`` records the decision instead; it is applied verbatim at
the next reconfiguring point, whatever the cluster looks like by then.

Both calls pass through the checking inhibitor: within the configured
period of the last forwarded check the call is ignored outright, so
short-step applications do not flood the manager.

``plan_expand`` / ``plan_shrink`` compute the homogeneous redistribution
plans between old and new process worlds.  On expand every rank splits its
block into ``factor`` chunks for ranks ``r * factor + i``; on shrink the
ranks whose index is ``factor - 1`` within their group collect the chunks
of their group (sources send to ``factor * (r // factor + 1) - 1``) and
continue as new rank ``r // factor``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .rms import Action, JobPhase


class DmrContractError(ValueError):
    """A check call that violates the API contract (e.g. from a fixed job)."""


class PlanError(ValueError):
    """Redistribution plan preconditions violated."""


@dataclass(frozen=True)
class DmrRequest:
    """Arguments a job passes with every check call."""

    min_procs: int
    max_procs: int
    factor: int
    preferred: int | None = None

    @staticmethod
    def for_job(desc) -> "DmrRequest":
        return DmrRequest(desc.min_procs, desc.max_procs, desc.factor,
                          desc.preferred_procs)


def inhibitor_gate(js, now_us: int, period_us: int | None) -> bool:
    """True when the check may be forwarded to the manager.

    A forwarded check stamps the job, starting the next inhibition window.
    """
    if period_us is not None:
        last = js.last_forward_us
        if last is not None and now_us - last < period_us:
            return False
    js.last_forward_us = now_us
    return True


def _validated(js, request: DmrRequest) -> None:
    if not js.desc.flexible:
        raise DmrContractError(f"fixed job {js.id} made a check call")
    if js.phase is not JobPhase.RUNNING:
        raise DmrContractError(f"job {js.id} checked outside a reconfiguring point")
    if request.min_procs > request.max_procs:
        raise DmrContractError("request minimum above maximum")
    if request.preferred is not None and not (
            request.min_procs <= request.preferred <= request.max_procs):
        raise DmrContractError("request preferred outside [min, max]")


def check_status(js, request: DmrRequest, now_us: int, rms,
                 period_us: int | None = None) -> Action | None:
    """Synchronous check: decide now, apply now.

    Returns ``None`` without contacting the manager when inhibited.
    """
    _validated(js, request)
    if not inhibitor_gate(js, now_us, period_us):
        return None
    return rms.decide_action(js, request, now_us)


def icheck_status(js, request: DmrRequest, now_us: int, rms,
                  period_us: int | None = None) -> Action | None:
    """Asynchronous check: decide against the current state, apply next step.

    The stored decision replaces nothing: a new one is only taken after the
    previous pending action has been consumed.
    """
    _validated(js, request)
    if js.pending is not None:
        raise DmrContractError(f"job {js.id} already has a pending action")
    if not inhibitor_gate(js, now_us, period_us):
        return None
    action = rms.decide_action(js, request, now_us)
    js.pending = action
    return action


class PlanDirection(enum.Enum):
    EXPAND = "expand"
    SHRINK = "shrink"
    IDENTITY = "identity"


@dataclass(frozen=True)
class Transfer:
    src_old_rank: int
    dst_new_rank: int
    nbytes: int


@dataclass(frozen=True)
class RedistributionPlan:
    old_world: int
    new_world: int
    direction: PlanDirection
    transfers: tuple[Transfer, ...]
    rank_map: dict[int, tuple[int, ...]]  # new rank -> originating old rank(s)

    def total_transferred(self) -> int:
        return sum(t.nbytes for t in self.transfers)


def block_ranges(n_chunks: int, total: int) -> list[tuple[int, int]]:
    """Balanced contiguous partition of ``[0, total)`` into ``n_chunks``."""
    base, rem = divmod(total, n_chunks)
    ranges = []
    start = 0
    for i in range(n_chunks):
        size = base + (1 if i < rem else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def _identity_plan(world: int) -> RedistributionPlan:
    return RedistributionPlan(world, world, PlanDirection.IDENTITY, (),
                              {r: (r,) for r in range(world)})


def plan_expand(old_world: int, factor: int, volume: int) -> RedistributionPlan:
    """Plan an expansion ``old_world -> old_world * factor``.

    Every old rank partitions its block into ``factor`` chunks and sends
    chunk ``i`` to new rank ``r * factor + i``; the whole dataset moves to
    the new world.
    """
    if old_world < 1 or factor < 1:
        raise PlanError("old_world and factor must be >= 1")
    if volume < 0:
        raise PlanError("volume must be non-negative")
    if factor == 1:
        return _identity_plan(old_world)
    new_world = old_world * factor
    transfers = []
    rank_map: dict[int, tuple[int, ...]] = {}
    for r, (start, end) in enumerate(block_ranges(old_world, volume)):
        for i, (s, e) in enumerate(block_ranges(factor, end - start)):
            dst = r * factor + i
            transfers.append(Transfer(r, dst, e - s))
            rank_map[dst] = (r,)
    return RedistributionPlan(old_world, new_world, PlanDirection.EXPAND,
                              tuple(transfers), rank_map)


def plan_shrink(old_world: int, factor: int, volume: int) -> RedistributionPlan:
    """Plan a shrink ``old_world -> old_world / factor``.

    Rank ``r`` is a receiver iff ``r % factor == factor - 1``; every other
    rank sends its whole block to the receiver of its group, and each
    receiver carries the merged group block on as new rank ``r // factor``.
    """
    if old_world < 1 or factor < 1:
        raise PlanError("old_world and factor must be >= 1")
    if volume < 0:
        raise PlanError("volume must be non-negative")
    if old_world % factor != 0:
        raise PlanError(f"old world {old_world} not divisible by factor {factor}")
    if factor == 1:
        return _identity_plan(old_world)
    ranges = block_ranges(old_world, volume)
    transfers = []
    rank_map: dict[int, tuple[int, ...]] = {}
    for r in range(old_world):
        if r % factor == factor - 1:
            rank_map[r // factor] = tuple(range(r - factor + 1, r + 1))
        else:
            receiver = factor * (r // factor + 1) - 1  # old rank of the collector
            start, end = ranges[r]
            transfers.append(Transfer(r, receiver // factor, end - start))
    return RedistributionPlan(old_world, old_world // factor,
                              PlanDirection.SHRINK, tuple(transfers), rank_map)


def format_plan(plan: RedistributionPlan) -> str:
    """Stable one-line rendering of a plan, suitable for golden traces."""
    edges = ",".join(f"{t.src_old_rank}>{t.dst_new_rank}:{t.nbytes}"
                     for t in plan.transfers)
    return (f"{plan.direction.value} {plan.old_world}->{plan.new_world}"
            f" edges={edges or '-'}")


def plan_resize(old_world: int, new_world: int, volume: int) -> RedistributionPlan:
    """Plan between arbitrary factor-related worlds (one combined level)."""
    if new_world == old_world:
        return _identity_plan(old_world)
    if new_world > old_world:
        if new_world % old_world != 0:
            raise PlanError("expansion target not a multiple of the old world")
        return plan_expand(old_world, new_world // old_world, volume)
    if old_world % new_world != 0:
        raise PlanError("shrink target not a divisor of the old world")
    return plan_shrink(old_world, old_world // new_world, volume)
