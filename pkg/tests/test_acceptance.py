"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict
lines as the criteria complete.  All runs use fixed seeds.
"""

from statistics import median

import pytest

from helpers import make_desc
from flexsched.appmodel import CostModelParams, resize_cost, scheduling_overhead
from flexsched.cli import parse_config, preset_scenario, presets, run_scenario
from flexsched.dmr import PlanDirection, block_ranges, plan_expand, plan_shrink
from flexsched.metrics import audit_trace, gain_report
from flexsched.rms import ActionKind
from flexsched.simcore import Simulation, usec
from flexsched.workload import WorkloadParams, as_fixed, generate_workload

SEEDS = range(10)


def verdict(criterion: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\n[acceptance] criterion {criterion:02d} {status}: {detail}")
    assert passed, f"criterion {criterion:02d}: {detail}"


def paired_gain(jobs, nodes=20, mode="sync"):
    fixed = Simulation(nodes, as_fixed(jobs), mode=mode).run()
    flexible = Simulation(nodes, jobs, mode=mode).run()
    return gain_report(fixed, flexible), fixed, flexible


@pytest.fixture(scope="module")
def fs400_runs():
    jobs = generate_workload(WorkloadParams(jobs=400, seed=1))
    fixed = Simulation(20, as_fixed(jobs)).run()
    sync = Simulation(20, jobs, mode="sync").run()
    async_ = Simulation(20, jobs, mode="async").run()
    return fixed, sync, async_


def test_criterion_01_flexible_beats_fixed():
    medians = {}
    for size in (25, 50, 100):
        gains = []
        for seed in SEEDS:
            jobs = generate_workload(WorkloadParams(jobs=size, seed=seed))
            report, _, _ = paired_gain(jobs)
            gains.append(report.makespan_gain)
        medians[size] = median(gains)
    all_positive = all(m > 0 for m in medians.values())
    big_enough = sum(1 for m in medians.values() if m >= 5.0) >= 2
    detail = ", ".join(f"{s} jobs: median {m:.2f}%" for s, m in medians.items())
    verdict(1, all_positive and big_enough, detail)


def test_criterion_02_mode_utilization_ordering(fs400_runs):
    fixed, sync, async_ = fs400_runs
    ordering = (sync.utilization_avg > async_.utilization_avg
                > fixed.utilization_avg)
    spread = sync.utilization_std < async_.utilization_std
    detail = (f"util sync {sync.utilization_avg:.3f} > "
              f"async {async_.utilization_avg:.3f} > "
              f"fixed {fixed.utilization_avg:.3f}; "
              f"std sync {sync.utilization_std:.3f} < "
              f"async {async_.utilization_std:.3f}")
    verdict(2, ordering and spread, detail)


def test_criterion_03_timing_gain_signs(fs400_runs):
    fixed, sync, async_ = fs400_runs
    rep_sync = gain_report(fixed, sync)
    rep_async = gain_report(fixed, async_)
    ok = (rep_sync.wait_gain > 0 and rep_async.wait_gain > 0
          and rep_sync.exec_gain < 0 and rep_async.exec_gain < 0
          and rep_sync.completion_gain > 0)
    detail = (f"wait {rep_sync.wait_gain:.1f}/{rep_async.wait_gain:.1f} > 0, "
              f"exec {rep_sync.exec_gain:.1f}/{rep_async.exec_gain:.1f} < 0, "
              f"completion sync {rep_sync.completion_gain:.1f} > 0")
    verdict(3, ok, detail)


def test_criterion_04_async_staleness_golden_trace():
    descs = [
        make_desc(job_id=0, size=16, flexible=False, iterations=1, step=100.0),
        make_desc(job_id=1, size=2, flexible=False, iterations=10, step=100.0),
        make_desc(job_id=2, size=1, iterations=5, step=60.0),
    ]
    sim = Simulation(20, descs, mode="async")
    summary = sim.run()
    applied = [a for a in summary.actions
               if a.job_id == 2 and a.kind is ActionKind.EXPAND]
    first = applied[0] if applied else None
    golden = (first is not None and first.target == 2
              and first.free_at_apply >= 16
              and first.applied_us == usec(120.0))
    # the synchronous run of the same instant would have taken 16 nodes
    sync_optimal = 16
    detail = (f"pending expand applied to {first.target if first else '?'} "
              f"with {first.free_at_apply if first else '?'} nodes free "
              f"(synchronous optimum {sync_optimal})")
    verdict(4, golden and first.target != sync_optimal, detail)


def test_criterion_05_heterogeneous_monotone_trend():
    medians = {}
    for pct in (0, 25, 50, 75, 100):
        spans = []
        for seed in SEEDS:
            jobs = generate_workload(WorkloadParams(jobs=100, seed=seed,
                                                    flexible_ratio=pct / 100))
            spans.append(Simulation(20, jobs, mode="sync").run().makespan_us)
        medians[pct] = median(spans)
    levels = [medians[p] for p in (0, 25, 50, 75, 100)]
    non_increasing = all(a >= b for a, b in zip(levels, levels[1:]))
    strict = medians[0] > medians[100]
    detail = ", ".join(f"{p}%: {medians[p] / 1e6:.0f}s" for p in medians)
    verdict(5, non_increasing and strict, detail)


def test_criterion_06_inhibitor_effectiveness():
    runs = {}
    for name in ("inhibitor-none", "inhibitor-2", "inhibitor-5"):
        config, _ = presets()[name]
        scenario = parse_config(config)
        jobs = generate_workload(scenario.workload)
        runs[name] = Simulation(scenario.nodes, jobs, mode=scenario.mode,
                                cost=scenario.cost,
                                inhibitor=scenario.inhibitor).run()
    counts = {name: run.decisions for name, run in runs.items()}
    ordering = (counts["inhibitor-5"] < counts["inhibitor-2"]
                < counts["inhibitor-none"])
    tolerance_ok = (runs["inhibitor-5"].makespan_us
                    <= 1.01 * runs["inhibitor-none"].makespan_us)
    detail = (f"forwarded checks {counts['inhibitor-5']} < "
              f"{counts['inhibitor-2']} < {counts['inhibitor-none']}; "
              f"makespan P5 {runs['inhibitor-5'].makespan:.0f}s vs "
              f"none {runs['inhibitor-none'].makespan:.0f}s")
    verdict(6, ordering and tolerance_ok, detail)


def _oracle_expand_owner(element: int, old_world: int, factor: int,
                         volume: int) -> int:
    # independent, element-wise application of the published mappings
    old_ranges = block_ranges(old_world, volume)
    rank = next(r for r, (s, e) in enumerate(old_ranges) if s <= element < e)
    start, end = old_ranges[rank]
    sub = block_ranges(factor, end - start)
    offset = element - start
    i = next(i for i, (s, e) in enumerate(sub) if s <= offset < e)
    return rank * factor + i


def _plan_ownership(plan, volume):
    holding = {r: list(range(s, e))
               for r, (s, e) in enumerate(block_ranges(plan.old_world, volume))}
    owned = {r: [] for r in range(plan.new_world)}
    if plan.direction is PlanDirection.SHRINK:
        for t in plan.transfers:
            owned[t.dst_new_rank].extend(holding[t.src_old_rank])
            holding[t.src_old_rank] = []
        for new_rank, group in plan.rank_map.items():
            owned[new_rank].extend(holding[group[-1]])
    elif plan.direction is PlanDirection.EXPAND:
        for t in plan.transfers:
            chunk = holding[t.src_old_rank][:t.nbytes]
            holding[t.src_old_rank] = holding[t.src_old_rank][t.nbytes:]
            owned[t.dst_new_rank].extend(chunk)
    else:
        owned = holding
    return owned


def test_criterion_07_redistribution_properties():
    volume = 1024
    checked = 0
    for old_world in range(1, 65):
        for factor in (2, 4):
            plan = plan_expand(old_world, factor, volume)
            owned = _plan_ownership(plan, volume)
            flat = sorted(e for chunk in owned.values() for e in chunk)
            assert flat == list(range(volume)), "expand must partition the data"
            assert plan.total_transferred() == volume
            for rank, chunk in owned.items():
                for e in chunk:
                    assert _oracle_expand_owner(e, old_world, factor, volume) == rank
            checked += 1

            if old_world % factor == 0:
                plan = plan_shrink(old_world, factor, volume)
                owned = _plan_ownership(plan, volume)
                flat = sorted(e for chunk in owned.values() for e in chunk)
                assert flat == list(range(volume)), "shrink must partition the data"
                old_ranges = block_ranges(old_world, volume)
                for new_rank, group in plan.rank_map.items():
                    expected = [e for r in group
                                for e in range(*old_ranges[r])]
                    assert sorted(owned[new_rank]) == expected
                # shrinking an expanded world restores the original owners
                grown = _plan_ownership(
                    plan_expand(old_world // factor, factor, volume), volume)
                merged = {n: sorted(sum((grown[r] for r in g), []))
                          for n, g in plan.rank_map.items()}
                original = {r: list(range(s, e))
                            for r, (s, e) in enumerate(
                                block_ranges(old_world // factor, volume))}
                assert merged == original
                checked += 1
    verdict(7, True, f"{checked} plans validated against the element oracle")


def test_criterion_08_cost_model_laws():
    params = CostModelParams()
    volume = 1 << 30
    worlds = [1, 2, 4, 8, 16, 32, 64]
    # expands: strictly decreasing in the smaller world across all pairs
    expands = [(min(a, b), resize_cost(volume, a, b, params))
               for a in worlds for b in worlds if b > a]
    expands.sort()
    for (m1, c1), (m2, c2) in zip(expands, expands[1:]):
        if m1 < m2:
            assert c1 > c2, f"expand cost not decreasing: {m1}->{m2}"
    # shrinks: strictly decreasing in the smaller world at fixed ratio
    for ratio in (2, 4, 8):
        costs = [resize_cost(volume, p * ratio, p, params)
                 for p in worlds if p * ratio <= 64]
        assert all(a > b for a, b in zip(costs, costs[1:]))
    # the synchronization term grows strictly with the contraction ratio
    sync_terms = [resize_cost(0, ratio, 1, params) for ratio in (2, 4, 8, 16, 32, 64)]
    assert all(a < b for a, b in zip(sync_terms, sync_terms[1:]))
    overheads = [scheduling_overhead(p, params) for p in range(0, 65)]
    assert all(a <= b for a, b in zip(overheads, overheads[1:]))
    verdict(8, True, "transfer, synchronization and scheduling laws hold on [1, 64]")


def test_criterion_09_determinism(tmp_path):
    from flexsched.cli import Scenario

    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        scenario = preset_scenario("sync25", out)
        assert run_scenario(scenario) == 0
        outputs.append({p.relative_to(out).as_posix(): p.read_bytes()
                        for p in sorted(out.rglob("*")) if p.is_file()})
    identical = outputs[0] == outputs[1]

    # replaying the serialized workload reproduces the flexible run exactly
    replay_out = tmp_path / "replay"
    replayed = Scenario(replay=str(tmp_path / "a" / "workload.txt"),
                        out_dir=str(replay_out))
    assert run_scenario(replayed) == 0
    replay_same = all(
        (replay_out / "run" / name).read_bytes()
        == (tmp_path / "a" / "flexible" / name).read_bytes()
        for name in ("summary.csv", "jobs.csv", "trace.txt", "actions.csv"))
    verdict(9, identical and replay_same,
            f"{len(outputs[0])} files byte-identical; replay reproduces the run")


def test_criterion_10_policy_justification_audit(tmp_path):
    total_violations = []
    audited = 0
    for name in sorted(presets()):
        out = tmp_path / name
        scenario = preset_scenario(name, out)
        assert run_scenario(scenario) == 0
        for trace in sorted(out.rglob("trace.txt")):
            nodes = scenario.nodes
            violations = audit_trace(trace.read_text(), nodes)
            total_violations.extend(f"{name}: {v}" for v in violations)
            audited += 1
    verdict(10, not total_violations,
            f"{audited} traces audited across {len(presets())} presets; "
            f"violations: {total_violations[:3] if total_violations else 'none'}")
