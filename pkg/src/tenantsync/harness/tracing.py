"""Per-pod timestamp collection along the create-to-ready path.

Components mark named points as a pod moves through the pipeline; the
recorder keeps one row per pod and derives the five phase durations:

* dws_queue:   tenant create committed -> downward worker picks it up
* dws_process: downward worker work time until the super-store write
* super_sched: super-store write -> readiness observed coming back
* uws_queue:   readiness observed -> upward worker picks it up
* uws_process: upward worker work time until the tenant store write

The first three marks of a retried item move forward (last wins) so phases
describe the pass that actually completed; enqueue marks keep their first
value; and a finished row is frozen, so late echoes cannot smear it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, fields

from ..engine import Engine

PHASE_NAMES = ("dws_queue", "dws_process", "super_sched", "uws_queue", "uws_process")

_FIRST_WINS = {"create_tenant", "dws_enq", "uws_enq"}
_LAST_WINS = {"dws_deq", "dws_done", "uws_deq"}


@dataclass
class PodTrace:
    tenant_id: str
    namespace: str
    name: str
    t_create_tenant: float | None = None
    t_dws_enq: float | None = None
    t_dws_deq: float | None = None
    t_dws_done: float | None = None
    t_super_ready: float | None = None
    t_uws_enq: float | None = None
    t_uws_deq: float | None = None
    t_ready_tenant: float | None = None

    def end_to_end(self) -> float | None:
        if self.t_create_tenant is None or self.t_ready_tenant is None:
            return None
        return self.t_ready_tenant - self.t_create_tenant

    def phases(self) -> dict[str, float] | None:
        needed = (
            self.t_create_tenant,
            self.t_dws_deq,
            self.t_dws_done,
            self.t_uws_enq,
            self.t_uws_deq,
            self.t_ready_tenant,
        )
        if any(t is None for t in needed):
            return None
        create, dws_deq, dws_done, uws_enq, uws_deq, ready = needed
        return {
            "dws_queue": dws_deq - create,
            "dws_process": dws_done - dws_deq,
            "super_sched": uws_enq - dws_done,
            "uws_queue": uws_deq - uws_enq,
            "uws_process": ready - uws_deq,
        }


TRACE_FIELDS = [f.name for f in fields(PodTrace)]


class TraceRecorder:
    """Collects pod marks; completion is watchable through ``signal``."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.signal = engine.signal()
        self._lock = threading.Lock()
        self._rows: dict[tuple[str, str, str], PodTrace] = {}
        self.completed = 0
        self.expected = 0

    def mark(self, field: str, tenant_id: str, namespace: str, name: str, t: float) -> None:
        pod = (tenant_id, namespace, name)
        with self._lock:
            row = self._rows.get(pod)
            if row is None:
                row = PodTrace(tenant_id, namespace, name)
                self._rows[pod] = row
            if row.t_ready_tenant is not None:
                return  # frozen once complete
            attr = f"t_{field}"
            if field == "ready_tenant":
                row.t_ready_tenant = t
                self.completed += 1
            elif field in _FIRST_WINS:
                if getattr(row, attr) is None:
                    setattr(row, attr, t)
            elif field in _LAST_WINS:
                setattr(row, attr, t)
            else:
                raise ValueError(f"unknown trace mark {field!r}")
        if field == "ready_tenant":
            self.signal.notify_all()

    def set_super_ready(self, tenant_id: str, namespace: str, name: str, t: float) -> None:
        row = self._rows.get((tenant_id, namespace, name))
        if row is not None and row.t_super_ready is None:
            row.t_super_ready = t

    def is_ready(self, tenant_id: str, namespace: str, name: str) -> bool:
        row = self._rows.get((tenant_id, namespace, name))
        return row is not None and row.t_ready_tenant is not None

    def all_done(self) -> bool:
        return self.expected > 0 and self.completed >= self.expected

    def rows(self) -> list[PodTrace]:
        with self._lock:
            return [self._rows[k] for k in sorted(self._rows)]

    def row(self, tenant_id: str, namespace: str, name: str) -> PodTrace | None:
        return self._rows.get((tenant_id, namespace, name))

    def __len__(self) -> int:
        return len(self._rows)
