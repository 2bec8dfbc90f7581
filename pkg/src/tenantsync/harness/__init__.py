from .scenario import (
    GroupSpec,
    Scenario,
    baseline_of,
    breakdown_scenario,
    fairness_scenario,
    load_scenario,
    parse_scenario,
    scenario_text,
    uniform_scenario,
)
from .tracing import PHASE_NAMES, PodTrace, TraceRecorder
from .runner import (
    RunResult,
    World,
    build_world,
    run_breakdown,
    run_fairness_experiment,
    run_scenario,
    run_throughput_sweep,
    run_world,
)
from .report import (
    derive_stats,
    dumps_report,
    load_json,
    read_traces_csv,
    write_json,
    write_report_bundle,
    write_traces_csv,
)

__all__ = [
    "GroupSpec",
    "Scenario",
    "baseline_of",
    "breakdown_scenario",
    "fairness_scenario",
    "load_scenario",
    "parse_scenario",
    "scenario_text",
    "uniform_scenario",
    "PHASE_NAMES",
    "PodTrace",
    "TraceRecorder",
    "RunResult",
    "World",
    "build_world",
    "run_breakdown",
    "run_fairness_experiment",
    "run_scenario",
    "run_throughput_sweep",
    "run_world",
    "derive_stats",
    "dumps_report",
    "load_json",
    "read_traces_csv",
    "write_json",
    "write_report_bundle",
    "write_traces_csv",
]
