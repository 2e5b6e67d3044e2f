"""Synthetic workload generation and replay files.

Jobs are drawn from a statistical model of rigid cluster workloads:
Poisson arrivals, a discrete size distribution skewed toward small jobs
and powers of two, and hyperexponential step runtimes correlated with the
job size.  A fraction of jobs is tagged flexible.

All randomness flows through named substreams (arrivals, sizes, runtimes,
tagging, apps) derived from one 64-bit seed, so adding a sampler to one
stream never perturbs the others and identical seeds give identical
workloads on every platform.

Generated workloads serialize to a line-oriented text format that replays
byte-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .appmodel import AppModel, default_apps

USEC_PER_SEC = 1_000_000

STREAM_NAMES = ("arrivals", "sizes", "runtimes", "tagging", "apps")

# Probability that a sampled size snaps to the nearest power of two.
POW2_SNAP_PROB = 0.3
# Step-runtime scale: branch-1 mean as a fraction of the runtime cap,
# growing linearly with the sampled job size.
RUNTIME_SCALE_BASE = 0.04
RUNTIME_SCALE_PER_SIZE = 0.12

MAGIC = "# flexsched workload v1"


class WorkloadError(ValueError):
    """Invalid workload parameters or replay file."""


@dataclass(frozen=True)
class JobDescriptor:
    """Static submission record of one job.

    Times are integer microseconds.  ``base_step_us`` is the per-step
    runtime at the submitted size ``initial_size``; ``data_volume`` is the
    number of bytes redistributed whenever the job is resized.
    """

    id: int
    arrival_us: int
    initial_size: int
    min_procs: int
    max_procs: int
    preferred_procs: int | None
    factor: int
    flexible: bool
    app: str
    iterations: int
    base_step_us: int
    data_volume: int

    def validate(self) -> None:
        if not self.min_procs <= self.initial_size <= self.max_procs:
            raise WorkloadError(
                f"job {self.id}: size {self.initial_size} outside "
                f"[{self.min_procs}, {self.max_procs}]")
        if self.preferred_procs is not None and not (
                self.min_procs <= self.preferred_procs <= self.max_procs):
            raise WorkloadError(f"job {self.id}: preferred outside bounds")
        if self.factor < 2:
            raise WorkloadError(f"job {self.id}: factor must be >= 2")
        if self.iterations < 1 or self.base_step_us < 1 or self.data_volume < 0:
            raise WorkloadError(f"job {self.id}: invalid runtime fields")

    @property
    def arrival(self) -> float:
        return self.arrival_us / USEC_PER_SEC

    @property
    def base_step(self) -> float:
        return self.base_step_us / USEC_PER_SEC


@dataclass
class WorkloadParams:
    jobs: int
    max_job_size: int = 20
    mean_interarrival: float = 10.0
    max_step_runtime: float = 60.0
    iterations: int | None = None  # None: per-app default
    flexible_ratio: float = 1.0
    app_mix: dict[str, float] = field(default_factory=lambda: {"FS": 1.0})
    seed: int = 0
    factor: int = 2
    data_volume: int = 1 << 30
    fixed_step_runtime: float | None = None  # bypass the runtime sampler
    hyper_branch_prob: float = 0.7
    hyper_mean_ratio: float = 4.0

    def validate(self) -> None:
        if self.jobs < 0:
            raise WorkloadError("jobs must be >= 0")
        if self.max_job_size < 1:
            raise WorkloadError("max_job_size must be >= 1")
        if self.mean_interarrival <= 0:
            raise WorkloadError("mean_interarrival must be positive")
        if self.max_step_runtime <= 0:
            raise WorkloadError("max_step_runtime must be positive")
        if not 0.0 <= self.flexible_ratio <= 1.0:
            raise WorkloadError("flexible_ratio must be in [0, 1]")
        if self.factor < 2:
            raise WorkloadError("factor must be >= 2")
        if self.iterations is not None and self.iterations < 1:
            raise WorkloadError("iterations must be >= 1 when set")
        if self.data_volume < 0:
            raise WorkloadError("data_volume must be non-negative")
        if self.fixed_step_runtime is not None and self.fixed_step_runtime <= 0:
            raise WorkloadError("fixed_step_runtime must be positive")
        if not self.app_mix:
            raise WorkloadError("app_mix must not be empty")
        if any(w < 0 for w in self.app_mix.values()):
            raise WorkloadError("app_mix weights must be non-negative")
        if abs(sum(self.app_mix.values()) - 1.0) > 1e-9:
            raise WorkloadError("app_mix weights must sum to 1")
        if not 0.0 < self.hyper_branch_prob <= 1.0:
            raise WorkloadError("hyper_branch_prob must be in (0, 1]")
        if self.hyper_mean_ratio < 1.0:
            raise WorkloadError("hyper_mean_ratio must be >= 1")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named, independent substreams derived from one seed."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(STREAM_NAMES))
    return {name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(STREAM_NAMES, children)}


def sample_job_size(rng: np.random.Generator, max_job_size: int,
                    pow2_prob: float = POW2_SNAP_PROB) -> int:
    """Node count in [1, max_job_size], log-uniform with a power-of-two bias.

    Always consumes exactly two draws so the stream shape is independent of
    the outcome.
    """
    if max_job_size < 1:
        raise WorkloadError("max_job_size must be >= 1")
    u = rng.uniform(0.0, math.log2(max_job_size) if max_job_size > 1 else 0.0)
    size = int(round(2.0 ** u))
    size = min(max(size, 1), max_job_size)
    snap = rng.random()
    if snap < pow2_prob:
        size = 2 ** round(math.log2(size))
        size = min(max(size, 1), max_job_size)
    return size


def sample_step_runtime(rng: np.random.Generator, size: int,
                        max_step_runtime: float, max_job_size: int,
                        branch_prob: float = 0.7,
                        mean_ratio: float = 4.0) -> float:
    """Step runtime in seconds: two-branch hyperexponential, clamped.

    The short branch mean grows linearly with the job size, so larger jobs
    trend longer; the long branch mean is ``mean_ratio`` times larger.
    With ``mean_ratio == 1`` the mix degenerates to a plain exponential.
    Consumes exactly two draws.
    """
    if size < 1:
        raise WorkloadError("size must be >= 1")
    m1 = max_step_runtime * (RUNTIME_SCALE_BASE
                             + RUNTIME_SCALE_PER_SIZE * size / max_job_size)
    mean = m1 if rng.random() < branch_prob else m1 * mean_ratio
    value = rng.exponential(mean)
    return min(max(value, 1e-6), max_step_runtime)


def _pick_app(rng: np.random.Generator, mix: Mapping[str, float]) -> str:
    u = rng.random()
    acc = 0.0
    names = list(mix)
    for name in names:
        acc += mix[name]
        if u < acc:
            return name
    return names[-1]


def generate_workload(params: WorkloadParams,
                      apps: Mapping[str, AppModel] | None = None) -> list[JobDescriptor]:
    """Generate ``params.jobs`` descriptors, deterministic under the seed.

    Arrival times are the cumulative sums of exponential inter-arrivals and
    strictly increase.  Flexibility is one Bernoulli draw per job against
    ``flexible_ratio``, coupled across ratios: the flexible set at a lower
    ratio is a subset of the set at a higher ratio for the same seed.
    """
    params.validate()
    if apps is None:
        apps = default_apps(params.max_job_size)
    for name in params.app_mix:
        if name not in apps:
            raise WorkloadError(f"unknown application {name!r} in app_mix")

    rngs = make_streams(params.seed)
    jobs: list[JobDescriptor] = []
    clock = 0.0
    prev_us = 0
    for i in range(params.jobs):
        clock += float(rngs["arrivals"].exponential(params.mean_interarrival))
        arrival_us = max(prev_us + 1, round(clock * USEC_PER_SEC))
        prev_us = arrival_us

        size = sample_job_size(rngs["sizes"], params.max_job_size)
        app_name = _pick_app(rngs["apps"], params.app_mix)
        app = apps[app_name]

        cap = params.max_step_runtime if app.step_cap is None else app.step_cap
        step_s = sample_step_runtime(
            rngs["runtimes"], size, cap, params.max_job_size,
            params.hyper_branch_prob, params.hyper_mean_ratio)
        if params.fixed_step_runtime is not None:
            step_s = params.fixed_step_runtime

        flexible = float(rngs["tagging"].random()) < params.flexible_ratio

        if app.submit_at_max:
            initial = app.max_procs
        else:
            initial = min(max(size, app.min_procs), app.max_procs)
        desc = JobDescriptor(
            id=i,
            arrival_us=arrival_us,
            initial_size=initial,
            min_procs=app.min_procs,
            max_procs=app.max_procs,
            preferred_procs=app.preferred_procs,
            factor=params.factor,
            flexible=flexible,
            app=app_name,
            iterations=params.iterations or app.iterations,
            base_step_us=max(1, round(step_s * USEC_PER_SEC)),
            data_volume=params.data_volume,
        )
        desc.validate()
        jobs.append(desc)
    return jobs


def as_fixed(jobs: Iterable[JobDescriptor]) -> list[JobDescriptor]:
    """The rigid twin of a workload: same jobs, no flexibility."""
    return [replace(j, flexible=False) for j in jobs]


def serialize_workload(jobs: Iterable[JobDescriptor]) -> str:
    """One job per line; times written with microsecond-exact precision."""
    lines = [MAGIC,
             "# id arrival size min max preferred factor flexible app"
             " iterations step_time data_volume"]
    for j in jobs:
        pref = "-" if j.preferred_procs is None else str(j.preferred_procs)
        lines.append(
            f"{j.id} {j.arrival_us / USEC_PER_SEC:.6f} {j.initial_size}"
            f" {j.min_procs} {j.max_procs} {pref} {j.factor}"
            f" {int(j.flexible)} {j.app} {j.iterations}"
            f" {j.base_step_us / USEC_PER_SEC:.6f} {j.data_volume}")
    return "\n".join(lines) + "\n"


def parse_workload(text: str) -> list[JobDescriptor]:
    jobs: list[JobDescriptor] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 12:
            raise WorkloadError(f"line {lineno}: expected 12 fields, got {len(fields)}")
        try:
            desc = JobDescriptor(
                id=int(fields[0]),
                arrival_us=round(float(fields[1]) * USEC_PER_SEC),
                initial_size=int(fields[2]),
                min_procs=int(fields[3]),
                max_procs=int(fields[4]),
                preferred_procs=None if fields[5] == "-" else int(fields[5]),
                factor=int(fields[6]),
                flexible=bool(int(fields[7])),
                app=fields[8],
                iterations=int(fields[9]),
                base_step_us=round(float(fields[10]) * USEC_PER_SEC),
                data_volume=int(fields[11]),
            )
        except ValueError as exc:
            raise WorkloadError(f"line {lineno}: {exc}") from exc
        desc.validate()
        jobs.append(desc)
    ids = [j.id for j in jobs]
    if len(set(ids)) != len(ids):
        raise WorkloadError("duplicate job ids in workload file")
    return jobs


def workload_fingerprint(jobs: Iterable[JobDescriptor]) -> str:
    """Stable identity of a workload, ignoring flexibility tags.

    Paired fixed/flexible runs of the same workload share a fingerprint.
    """
    import hashlib

    h = hashlib.sha256()
    for j in jobs:
        h.update(f"{j.id},{j.arrival_us},{j.initial_size},{j.min_procs},"
                 f"{j.max_procs},{j.preferred_procs},{j.factor},{j.app},"
                 f"{j.iterations},{j.base_step_us},{j.data_volume};".encode())
    return h.hexdigest()
