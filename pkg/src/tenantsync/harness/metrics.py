"""Small statistics helpers for latency reporting.

Percentiles use the nearest-rank method on a sorted copy, which keeps
results exact and stable for the deterministic report comparisons. The
histogram uses fixed-width buckets with one unbounded overflow bucket.
"""

from __future__ import annotations

import math
from typing import Sequence


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """p-th percentile (0 < p <= 100) of an ascending sequence."""
    if not sorted_values:
        raise ValueError("percentile of empty data")
    if not 0 < p <= 100:
        raise ValueError(f"percentile out of range: {p}")
    rank = math.ceil(p / 100.0 * len(sorted_values))
    return sorted_values[rank - 1]


def summarize(values: Sequence[float]) -> dict:
    if not values:
        return {"count": 0}
    ordered = sorted(values)
    return {
        "count": len(ordered),
        "mean": sum(ordered) / len(ordered),
        "min": ordered[0],
        "p50": nearest_rank(ordered, 50),
        "p90": nearest_rank(ordered, 90),
        "p99": nearest_rank(ordered, 99),
        "max": ordered[-1],
    }


def histogram(values: Sequence[float], width: float = 2.0, buckets: int = 5) -> dict:
    """Fixed-width buckets [0,w), [w,2w), ... plus an overflow bucket."""
    counts = [0] * (buckets + 1)
    for v in values:
        idx = int(v // width) if v >= 0 else 0
        counts[min(idx, buckets)] += 1
    labels = [f"{i * width:g}-{(i + 1) * width:g}" for i in range(buckets)]
    labels.append(f"{buckets * width:g}+")
    return {"width": width, "labels": labels, "counts": counts}


def bucket_index(value: float, width: float = 2.0, buckets: int = 5) -> int:
    return min(int(value // width) if value >= 0 else 0, buckets)
