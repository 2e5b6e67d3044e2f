"""Scenario configuration, presets, and the command-line runner.

A scenario is a flat sectioned key=value text file.  Minimal example::

    [workload]
    jobs = 100
    seed = 1

Everything else falls back to documented defaults (20 nodes, mean
inter-arrival 10 s, resize factor 2, synchronous mode, 40 s expand
timeout).  ``--print-defaults`` lists them all.  Paired scenarios run the
rigid and the flexible twin of the same workload and report the gains.

The ``FLEXSCHED_INHIBITOR_PERIOD`` environment variable overrides the
checking-inhibitor period (``app``, ``none``, or seconds), matching the
runtime knob it models.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .appmodel import AppModel, CostModelParams, default_apps
from .metrics import (actions_csv, gain_report, gains_csv, gains_jobs_csv,
                      jobs_csv, summary_csv, timeline_csv)
from .simcore import Simulation
from .workload import (WorkloadParams, as_fixed, generate_workload,
                       parse_workload, serialize_workload)

ENV_INHIBITOR = "FLEXSCHED_INHIBITOR_PERIOD"

DEFAULTS = {
    "nodes": 20,
    "mean_interarrival": 10.0,
    "max_job_size": 20,
    "max_step_runtime": 60.0,
    "flexible_ratio": 1.0,
    "factor": 2,
    "data_volume": 1 << 30,
    "mode": "sync",
    "expand_timeout": 40.0,
    "inhibitor": "app",
    "backfill": "on",
}


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    nodes: int = 20
    workload: WorkloadParams | None = None
    replay: str | None = None
    mode: str = "sync"
    expand_timeout: float = 40.0
    inhibitor: float | str | None = "app"
    backfill: bool = True
    trace_plans: bool = False
    requested_mode: bool = True
    preferred_mode: bool = True
    wide_mode: bool = True
    cost: CostModelParams = field(default_factory=CostModelParams)
    app_overrides: dict[str, dict[str, object]] = field(default_factory=dict)
    out_dir: str = "out"
    paired: bool = False

    def validate(self) -> None:
        if (self.workload is None) == (self.replay is None):
            raise ConfigError(
                "exactly one of workload jobs or a replay file is required")
        if self.mode not in ("sync", "async"):
            raise ConfigError(f"mode must be sync or async, got {self.mode!r}")
        if self.expand_timeout <= 0:
            raise ConfigError("expand_timeout must be positive")
        if self.workload is not None:
            self.workload.validate()
        self.cost.validate()


def _parse_bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_inhibitor(value: str) -> float | str | None:
    if value == "app":
        return "app"
    if value in ("none", "off"):
        return None
    return float(value)


def _parse_app_mix(value: str) -> dict[str, float]:
    mix = {}
    for part in value.split(","):
        name, _, weight = part.strip().partition("=")
        if not weight:
            raise ValueError(f"app_mix entry {part!r} must be name=weight")
        mix[name.strip()] = float(weight)
    return mix


def parse_config(text: str) -> Scenario:
    """Parse a scenario; every diagnostic carries its line number."""
    scenario = Scenario()
    wl: dict[str, object] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("cluster", "workload", "policy", "costs",
                               "apps", "output"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            _apply_key(scenario, wl, section, key, value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        except KeyError:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} in [{section}]") from None
    if wl.get("jobs") is not None:
        if scenario.replay is not None:
            raise ConfigError("workload jobs and replay are mutually exclusive")
        scenario.workload = WorkloadParams(**wl)
    if scenario.workload is None and scenario.replay is None:
        raise ConfigError("missing required field: [workload] jobs (or replay)")
    scenario.validate()
    return scenario


def _apply_key(scenario: Scenario, wl: dict, section: str, key: str,
               value: str) -> None:
    if section == "cluster":
        if key != "nodes":
            raise KeyError(key)
        scenario.nodes = int(value)
        if scenario.nodes < 1:
            raise ValueError("nodes must be >= 1")
    elif section == "workload":
        if key == "replay":
            scenario.replay = value or None
        elif key == "jobs":
            wl["jobs"] = int(value)
        elif key in ("max_job_size", "seed", "factor", "data_volume"):
            wl[key] = int(value)
        elif key in ("mean_interarrival", "max_step_runtime",
                     "hyper_branch_prob", "hyper_mean_ratio"):
            wl[key] = float(value)
        elif key == "iterations":
            wl["iterations"] = int(value) if value else None
        elif key == "fixed_step_runtime":
            wl["fixed_step_runtime"] = float(value) if value else None
        elif key == "flexible_ratio":
            ratio = float(value)
            if not 0.0 <= ratio <= 1.0:
                raise ValueError("must be in [0, 1]")
            wl["flexible_ratio"] = ratio
        elif key == "app_mix":
            wl["app_mix"] = _parse_app_mix(value)
        else:
            raise KeyError(key)
    elif section == "policy":
        if key == "mode":
            if value not in ("sync", "async"):
                raise ValueError("must be sync or async")
            scenario.mode = value
        elif key == "expand_timeout":
            scenario.expand_timeout = float(value)
        elif key == "inhibitor":
            scenario.inhibitor = _parse_inhibitor(value)
        elif key == "backfill":
            scenario.backfill = _parse_bool(value)
        elif key == "trace_plans":
            scenario.trace_plans = _parse_bool(value)
        elif key in ("requested_mode", "preferred_mode", "wide_mode"):
            setattr(scenario, key, _parse_bool(value))
        else:
            raise KeyError(key)
    elif section == "costs":
        if key not in ("bandwidth", "shrink_sync_base", "shrink_sync_per_ratio",
                       "sched_base", "sched_per_node"):
            raise KeyError(key)
        scenario.cost = dataclasses.replace(scenario.cost, **{key: float(value)})
    elif section == "apps":
        app, _, attr = key.partition(".")
        if attr not in ("period", "parallel_fraction", "iterations",
                        "min_procs", "max_procs", "preferred_procs",
                        "step_cap"):
            raise KeyError(key)
        if attr in ("iterations", "min_procs", "max_procs", "preferred_procs"):
            parsed: object = int(value) if value else None
        else:
            parsed = float(value) if value not in ("", "none") else None
        scenario.app_overrides.setdefault(app, {})[attr] = parsed
    elif section == "output":
        if key == "dir":
            scenario.out_dir = value
        elif key == "paired":
            scenario.paired = _parse_bool(value)
        else:
            raise KeyError(key)


def build_apps(scenario: Scenario) -> dict[str, AppModel]:
    size = scenario.workload.max_job_size if scenario.workload else scenario.nodes
    apps = default_apps(size)
    for name, changes in scenario.app_overrides.items():
        if name not in apps:
            raise ConfigError(f"unknown application {name!r} in [apps]")
        apps[name] = dataclasses.replace(apps[name], **changes)
    return apps


def default_config_text() -> str:
    lines = ["# flexsched defaults"]
    for key, value in DEFAULTS.items():
        lines.append(f"{key} = {value}")
    cost = CostModelParams()
    for f in dataclasses.fields(cost):
        lines.append(f"{f.name} = {getattr(cost, f.name)}")
    return "\n".join(lines) + "\n"


# -- presets -------------------------------------------------------------------


def _paired_fs_config(jobs: int, mode: str, *, ratio: float = 1.0,
                      inhibitor: str = "app", max_step_runtime: float = 60.0,
                      seed: int = 1, sched_base: float | None = None) -> str:
    costs = f"[costs]\nsched_base = {sched_base}\n" if sched_base else ""
    return (
        "[cluster]\n"
        "nodes = 20\n"
        "[workload]\n"
        f"jobs = {jobs}\n"
        f"seed = {seed}\n"
        f"flexible_ratio = {ratio}\n"
        "app_mix = FS=1.0\n"
        f"max_step_runtime = {max_step_runtime}\n"
        "[policy]\n"
        f"mode = {mode}\n"
        f"inhibitor = {inhibitor}\n"
        + costs +
        "[output]\n"
        "paired = true\n"
    )


def _microbench_replay() -> str:
    # isolated two-step jobs covering the expand/shrink ladder 1..64
    rows = []
    job_id = 0
    arrival = 0.0
    for p in (1, 2, 4, 8, 16, 32):  # expands p -> 2p
        rows.append(f"{job_id} {arrival:.6f} {p} 1 {2 * p} {2 * p} 2 1 FS 2"
                    f" 60.000000 1073741824")
        job_id += 1
        arrival += 3000.0
    for p in (2, 4, 8, 16, 32, 64):  # shrinks p -> p/2
        rows.append(f"{job_id} {arrival:.6f} {p} 1 {p} {p // 2} 2 1 FS 2"
                    f" 60.000000 1073741824")
        job_id += 1
        arrival += 3000.0
    return "# flexsched workload v1\n" + "\n".join(rows) + "\n"


MICROBENCH_CONFIG = (
    "[cluster]\n"
    "nodes = 64\n"
    "[workload]\n"
    "replay = __REPLAY__\n"
    "[policy]\n"
    "mode = sync\n"
    "[output]\n"
    "paired = false\n"
)


def presets() -> dict[str, tuple[str, str | None]]:
    """Name -> (config text, optional replay text)."""
    grid: dict[str, tuple[str, str | None]] = {}
    for jobs in (10, 25, 50, 100, 200, 400):
        grid[f"sync{jobs}"] = (_paired_fs_config(jobs, "sync"), None)
        grid[f"async{jobs}"] = (_paired_fs_config(jobs, "async"), None)
    for pct in (0, 25, 50, 75, 100):
        grid[f"heter{pct}"] = (
            _paired_fs_config(100, "sync", ratio=pct / 100), None)
    # micro-step regime: ~2 s steps make the per-check cost significant;
    # the cost uses the worst observed no-action decision time
    for period in ("none", "2", "5", "10", "20"):
        grid[f"inhibitor-{period}"] = (
            _paired_fs_config(100, "sync", inhibitor=period,
                              max_step_runtime=10.0, sched_base=0.2078), None)
    grid["microbench"] = (MICROBENCH_CONFIG, _microbench_replay())
    return grid


def preset_scenario(name: str, out_dir: str | Path) -> Scenario:
    grid = presets()
    if name not in grid:
        raise ConfigError(f"unknown preset {name!r}; see --list-presets")
    config, replay = grid[name]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if replay is not None:
        replay_path = out / "replay.txt"
        replay_path.write_text(replay)
        config = config.replace("__REPLAY__", str(replay_path))
    scenario = parse_config(config)
    scenario.out_dir = str(out)
    return scenario


# -- runner ---------------------------------------------------------------------


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def run_scenario(scenario: Scenario) -> int:
    scenario.validate()
    apps = build_apps(scenario)
    if scenario.replay is not None:
        jobs = parse_workload(Path(scenario.replay).read_text())
    else:
        jobs = generate_workload(scenario.workload, apps)

    out = Path(scenario.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "workload.txt", serialize_workload(jobs))

    variants = ([("fixed", as_fixed(jobs)), ("flexible", jobs)]
                if scenario.paired else [("run", jobs)])
    summaries = {}
    for variant, descs in variants:
        sim = Simulation(scenario.nodes, descs, apps, mode=scenario.mode,
                         cost=scenario.cost,
                         expand_timeout=scenario.expand_timeout,
                         inhibitor=scenario.inhibitor,
                         backfill=scenario.backfill,
                         trace_plans=scenario.trace_plans,
                         requested_mode=scenario.requested_mode,
                         preferred_mode=scenario.preferred_mode,
                         wide_mode=scenario.wide_mode)
        summary = sim.run()
        summaries[variant] = summary
        base = out / variant
        _write(base / "trace.txt", sim.collector.trace_text())
        _write(base / "jobs.csv", jobs_csv(summary))
        _write(base / "timeline.csv", timeline_csv(summary))
        _write(base / "actions.csv", actions_csv(summary))
        _write(base / "summary.csv", summary_csv(summary))

    if scenario.paired:
        report = gain_report(summaries["fixed"], summaries["flexible"])
        _write(out / "gains.csv", gains_csv(report))
        _write(out / "gains_jobs.csv", gains_jobs_csv(report))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="flexsched",
        description="Simulate fixed and flexible workloads on a cluster.")
    parser.add_argument("--config", metavar="PATH", help="scenario file")
    parser.add_argument("--preset", metavar="NAME", help="built-in scenario")
    parser.add_argument("--replay", metavar="PATH",
                        help="run a serialized workload file")
    parser.add_argument("--seed", type=int, help="override the workload seed")
    parser.add_argument("--mode", choices=("sync", "async"))
    parser.add_argument("--paired", action="store_true",
                        help="run the fixed twin alongside and report gains")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--print-defaults", action="store_true")
    parser.add_argument("--list-presets", action="store_true")
    args = parser.parse_args(argv)

    if args.print_defaults:
        sys.stdout.write(default_config_text())
        return 0
    if args.list_presets:
        sys.stdout.write("\n".join(sorted(presets())) + "\n")
        return 0

    try:
        if args.preset:
            scenario = preset_scenario(args.preset, args.out or f"out-{args.preset}")
        elif args.config:
            scenario = parse_config(Path(args.config).read_text())
        elif args.replay:
            scenario = Scenario(replay=args.replay)
        else:
            parser.error("one of --config, --preset, --replay is required")

        if args.replay and not scenario.replay:
            scenario.replay = args.replay
            scenario.workload = None
        if args.seed is not None:
            if scenario.workload is None:
                raise ConfigError("--seed has no effect on a replayed workload")
            scenario.workload.seed = args.seed
        if args.mode:
            scenario.mode = args.mode
        if args.paired:
            scenario.paired = True
        if args.out:
            scenario.out_dir = args.out
        env_period = os.environ.get(ENV_INHIBITOR)
        if env_period:
            scenario.inhibitor = _parse_inhibitor(env_period)
        return run_scenario(scenario)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"flexsched: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
