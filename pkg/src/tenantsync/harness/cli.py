"""Command-line entry points for running harness experiments."""

from __future__ import annotations

import dataclasses

import click

from .report import dumps_report, write_json, write_report_bundle
from .runner import run_fairness_experiment, run_scenario, run_throughput_sweep
from .scenario import (
    breakdown_scenario,
    fairness_scenario,
    load_scenario,
    uniform_scenario,
)


def _echo_summary(report: dict) -> None:
    pods = report.get("pods", {})
    lat = report.get("latency", {})
    if lat.get("count"):
        click.echo(
            f"pods {pods.get('completed')}/{pods.get('expected')}  "
            f"latency mean {lat['mean']:.3f}s  p50 {lat['p50']:.3f}s  "
            f"p99 {lat['p99']:.3f}s  max {lat['max']:.3f}s"
        )
    else:
        click.echo(f"pods {pods.get('completed', 0)}/{pods.get('expected', 0)} (no latency data)")
    tp = report.get("throughput", {})
    if tp.get("pods_per_second"):
        click.echo(
            f"throughput {tp['pods_per_second']:.1f} pods/s over {tp['makespan']:.2f}s"
        )
    phases = report.get("phases", {})
    if phases.get("means"):
        parts = "  ".join(
            f"{name}={value * 1000:.1f}ms" for name, value in phases["means"].items()
        )
        click.echo(f"phase means: {parts}")
        shares = phases.get("shares", {})
        if shares:
            queue_share = shares.get("dws_queue", 0.0) + shares.get("uws_queue", 0.0)
            click.echo(f"queue share of end-to-end: {queue_share:.1%}")
    iso = report.get("isolation", {})
    if iso:
        click.echo(
            f"isolation: {iso.get('checked', 0)} writes audited, "
            f"{len(iso.get('violations', []))} violations"
        )


def _finish(result, out: str | None, as_json: bool) -> None:
    if as_json:
        click.echo(dumps_report(result.report), nl=False)
    else:
        _echo_summary(result.report)
    if out:
        files = write_report_bundle(result.report, result.traces, out)
        click.echo(f"wrote {', '.join(files)} to {out}")


@click.group()
def main() -> None:
    """Multi-tenant synchronization simulator."""


@main.command("run")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), help="Scenario file.")
@click.option("--preset", type=click.Choice(["breakdown", "fairness", "uniform"]))
@click.option("--tenants", type=int, default=None, help="Tenant count (uniform/breakdown).")
@click.option("--pods", type=int, default=None, help="Pods per tenant (uniform/breakdown).")
@click.option("--seed", type=int, default=None)
@click.option("--clock", type=click.Choice(["sim", "realtime"]), default=None)
@click.option("--fair/--no-fair", "fair", default=None, help="Toggle fair queuing.")
@click.option("--baseline", is_flag=True, help="Skip the sync layer entirely.")
@click.option("--downward-workers", type=int, default=None)
@click.option("--upward-workers", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="Directory for report files.")
@click.option("--json", "as_json", is_flag=True, help="Print the full JSON report.")
def run_cmd(
    scenario_path,
    preset,
    tenants,
    pods,
    seed,
    clock,
    fair,
    baseline,
    downward_workers,
    upward_workers,
    out,
    as_json,
):
    """Run one scenario and print its summary."""
    if scenario_path:
        scenario = load_scenario(scenario_path)
    elif preset == "breakdown":
        scenario = breakdown_scenario(tenants=tenants or 100, pods=pods or 100)
    elif preset == "fairness":
        scenario = fairness_scenario()
    elif preset == "uniform":
        scenario = uniform_scenario(tenants or 10, pods or 50)
    else:
        raise click.UsageError("pass --scenario FILE or --preset NAME")
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if clock is not None:
        overrides["clock"] = clock
    if fair is not None:
        overrides["fair_queuing"] = fair
    if baseline:
        overrides["baseline"] = True
    if downward_workers is not None:
        overrides["downward_workers"] = downward_workers
    if upward_workers is not None:
        overrides["upward_workers"] = upward_workers
    if overrides:
        scenario = dataclasses.replace(scenario, **overrides)
    _finish(run_scenario(scenario), out, as_json)


@main.command("breakdown")
@click.option("--tenants", type=int, default=100)
@click.option("--pods", type=int, default=100)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def breakdown_cmd(tenants, pods, seed, out, as_json):
    """Latency-phase breakdown under an all-tenant burst."""
    result = run_scenario(breakdown_scenario(seed=seed, tenants=tenants, pods=pods))
    _finish(result, out, as_json)


@main.command("fairness")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
def fairness_cmd(seed, out):
    """Greedy-vs-regular tenants, with fair queuing on and then off."""
    outcome = run_fairness_experiment(seed=seed)
    for label in ("fair_on", "fair_off"):
        c = outcome["comparison"][label]
        click.echo(
            f"{label}: regular mean {c['regular_mean']:.3f}s "
            f"p99 {c['regular_p99']:.3f}s, greedy mean {c['greedy_mean']:.3f}s"
        )
    on = outcome["comparison"]["fair_on"]["regular_mean"]
    off = outcome["comparison"]["fair_off"]["regular_mean"]
    if on:
        click.echo(f"regular-tenant slowdown without fair queuing: {off / on:.1f}x")
    if out:
        import os

        os.makedirs(out, exist_ok=True)
        write_json(outcome["fair_on"], os.path.join(out, "fair_on.json"))
        write_json(outcome["fair_off"], os.path.join(out, "fair_off.json"))
        click.echo(f"wrote fair_on.json, fair_off.json to {out}")


@main.command("sweep")
@click.option("--tenants", default="25,50,100", help="Comma-separated tenant counts.")
@click.option("--total-pods", type=int, default=3000)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
def sweep_cmd(tenants, total_pods, seed, out):
    """Throughput across tenant-count splits of the same total load."""
    counts = tuple(int(part) for part in tenants.split(","))
    outcome = run_throughput_sweep(counts, total_pods=total_pods, seed=seed)
    for point in outcome["points"]:
        click.echo(
            f"tenants {point['tenants']:4d}: {point['pods']} pods, "
            f"{point['pods_per_second']:.1f} pods/s, p99 {point['p99']:.3f}s"
        )
    click.echo(f"relative throughput spread: {outcome['relative_spread']:.2%}")
    if out:
        import os

        os.makedirs(out, exist_ok=True)
        write_json(outcome, os.path.join(out, "sweep.json"))
        click.echo(f"wrote sweep.json to {out}")


if __name__ == "__main__":
    main()
