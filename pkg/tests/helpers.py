"""Shared builders for the test suite."""

from __future__ import annotations

from flexsched.workload import JobDescriptor

USEC = 1_000_000


def make_desc(job_id=0, arrival=0.0, size=1, min_procs=1, max_procs=20,
              preferred=None, factor=2, flexible=True, app="FS",
              iterations=1, step=60.0, volume=1 << 30) -> JobDescriptor:
    return JobDescriptor(
        id=job_id,
        arrival_us=round(arrival * USEC),
        initial_size=size,
        min_procs=min_procs,
        max_procs=max_procs,
        preferred_procs=preferred,
        factor=factor,
        flexible=flexible,
        app=app,
        iterations=iterations,
        base_step_us=round(step * USEC),
        data_volume=volume,
    )
