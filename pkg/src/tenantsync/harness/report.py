"""Report assembly and serialization (canonical JSON plus CSV exports).

Reports are plain dicts built only from engine-time quantities, so a
simulated run with a fixed seed serializes to byte-identical JSON. The
trace table CSV carries full float precision (``repr``) and the statistics
sections can be re-derived from it exactly.
"""

from __future__ import annotations

import csv
import json

from .metrics import bucket_index, histogram, summarize
from .tracing import PHASE_NAMES, TRACE_FIELDS, PodTrace

HISTOGRAM_WIDTH = 2.0
HISTOGRAM_BUCKETS = 5


def derive_stats(traces: list[PodTrace]) -> dict:
    """Latency, histogram and phase sections, purely from trace rows."""
    e2e = [t.end_to_end() for t in traces]
    e2e = [v for v in e2e if v is not None]
    out = {
        "latency": summarize(e2e),
        "histogram": histogram(e2e, HISTOGRAM_WIDTH, HISTOGRAM_BUCKETS),
    }
    phased = [(t, t.phases()) for t in traces]
    phased = [(t, p) for t, p in phased if p is not None]
    means = {}
    shares = {}
    if phased:
        for name in PHASE_NAMES:
            means[name] = sum(p[name] for _, p in phased) / len(phased)
        total = sum(means.values())
        if total > 0:
            shares = {name: means[name] / total for name in PHASE_NAMES}
    out["phases"] = {"count": len(phased), "means": means, "shares": shares}
    return out


def per_tenant_stats(traces: list[PodTrace]) -> dict:
    groups: dict[str, list[float]] = {}
    for t in traces:
        v = t.end_to_end()
        if v is not None:
            groups.setdefault(t.tenant_id, []).append(v)
    return {tid: summarize(vals) for tid, vals in sorted(groups.items())}


def per_group_stats(traces: list[PodTrace], group_names: list[str]) -> dict:
    """Tenant ids are '<group>-<nnnn>'; aggregate end-to-end per group."""
    out = {}
    for gname in group_names:
        prefix = f"{gname}-"
        vals = [
            v
            for t in traces
            if t.tenant_id.startswith(prefix) and (v := t.end_to_end()) is not None
        ]
        out[gname] = summarize(vals)
    return out


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_report(report))


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# -- CSV exports ---------------------------------------------------------


def write_traces_csv(traces: list[PodTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for t in traces:
            row = []
            for name in TRACE_FIELDS:
                value = getattr(t, name)
                row.append(repr(value) if isinstance(value, float) else (value or ""))
            writer.writerow(row)


def read_traces_csv(path) -> list[PodTrace]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            kwargs = {}
            for name in TRACE_FIELDS:
                raw = rec[name]
                if name.startswith("t_"):
                    kwargs[name] = float(raw) if raw else None
                else:
                    kwargs[name] = raw
            out.append(PodTrace(**kwargs))
    return out


def write_phases_csv(traces: list[PodTrace], path) -> None:
    """Phase means (milliseconds) broken down by end-to-end latency bucket."""
    rows: dict[int, list[dict]] = {}
    for t in traces:
        e2e = t.end_to_end()
        p = t.phases()
        if e2e is None or p is None:
            continue
        rows.setdefault(bucket_index(e2e, HISTOGRAM_WIDTH, HISTOGRAM_BUCKETS), []).append(p)
    labels = histogram([], HISTOGRAM_WIDTH, HISTOGRAM_BUCKETS)["labels"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket_seconds", "pods"] + [f"{n}_ms" for n in PHASE_NAMES])
        for idx, label in enumerate(labels):
            sample = rows.get(idx, [])
            row = [label, len(sample)]
            for name in PHASE_NAMES:
                mean_ms = (
                    sum(p[name] for p in sample) / len(sample) * 1000.0 if sample else 0.0
                )
                row.append(f"{mean_ms:.3f}")
            writer.writerow(row)


def write_tenants_csv(traces: list[PodTrace], path) -> None:
    stats = per_tenant_stats(traces)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tenant_id", "pods", "mean_s", "p50_s", "p99_s", "max_s"])
        for tid, s in stats.items():
            writer.writerow(
                [tid, s["count"], repr(s["mean"]), repr(s["p50"]), repr(s["p99"]), repr(s["max"])]
            )


def write_summary_csv(report: dict, path) -> None:
    flat: list[tuple[str, object]] = []

    def walk(prefix: str, value) -> None:
        if isinstance(value, dict):
            for k in sorted(value):
                walk(f"{prefix}.{k}" if prefix else str(k), value[k])
        elif isinstance(value, (list, tuple)):
            flat.append((prefix, json.dumps(value)))
        else:
            flat.append((prefix, value))

    walk("", report)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in flat:
            writer.writerow([key, value])


def write_report_bundle(report: dict, traces: list[PodTrace], outdir) -> list[str]:
    """JSON report plus the CSV views; returns the file names written."""
    import os

    os.makedirs(outdir, exist_ok=True)
    written = []
    for name, writer in (
        ("report.json", lambda p: write_json(report, p)),
        ("traces.csv", lambda p: write_traces_csv(traces, p)),
        ("phases.csv", lambda p: write_phases_csv(traces, p)),
        ("tenants.csv", lambda p: write_tenants_csv(traces, p)),
        ("summary.csv", lambda p: write_summary_csv(report, p)),
    ):
        path = os.path.join(outdir, name)
        writer(path)
        written.append(name)
    return written
