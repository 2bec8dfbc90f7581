"""Work queue with per-tenant sub-queues and weighted round-robin dispatch.

Dedup follows the usual controller workqueue contract: an item enqueued
while identical work is already pending coalesces with it, and an item
enqueued while a worker is processing it is parked and re-queued when the
worker calls :meth:`FairQueue.done`. Workers must therefore always pair a
successful :meth:`FairQueue.get` with ``done``.

Dispatch order interleaves tenants slot by slot instead of draining one
tenant's budget at a stretch: with weights 1, 2 and 4 the repeating cycle
is A B C B C C C. Weight changes take effect when the current cycle ends.
A tenant with an empty sub-queue forfeits its slots; unused capacity flows
to whoever has work.
"""

from __future__ import annotations

import threading
from collections import Counter, deque
from typing import Hashable, Iterable

from .engine import ActorGen, Engine, wait_until
from .errors import ValidationError

Item = tuple[str, Hashable]  # (tenant_id, work key)


class FairQueue:
    def __init__(self, engine: Engine, fair: bool = True, name: str = "queue"):
        self.engine = engine
        self.fair = fair
        self.name = name
        self.signal = engine.signal()
        self._lock = threading.Lock()
        self._weights: dict[str, int] = {}  # registration order preserved
        self._queues: dict[str, deque[Item]] = {}
        self._fifo: deque[Item] = deque()  # used when fair=False
        self._dirty: set[Item] = set()
        self._processing: set[Item] = set()
        self._order: list[str] = []  # tenant slot sequence for current cycle
        self._cursor = 0
        self.enqueued: Counter = Counter()
        self.dispatched: Counter = Counter()
        self.discarded = 0

    # -- tenant management -----------------------------------------------

    def register_tenant(self, tenant_id: str, weight: int = 1) -> None:
        if weight < 1:
            raise ValidationError(f"weight must be >= 1, got {weight}")
        with self._lock:
            if tenant_id in self._weights:
                raise ValidationError(f"tenant {tenant_id!r} already registered")
            self._weights[tenant_id] = weight
            self._queues[tenant_id] = deque()

    def set_weight(self, tenant_id: str, weight: int) -> None:
        if weight < 1:
            raise ValidationError(f"weight must be >= 1, got {weight}")
        with self._lock:
            if tenant_id not in self._weights:
                raise ValidationError(f"tenant {tenant_id!r} not registered")
            self._weights[tenant_id] = weight  # picked up at next cycle rebuild

    def remove_tenant(self, tenant_id: str) -> int:
        """Drop a tenant and its pending work; returns how many items died."""
        with self._lock:
            if tenant_id not in self._weights:
                return 0
            del self._weights[tenant_id]
            if self.fair:
                dropped = list(self._queues.pop(tenant_id))
            else:
                dropped = [i for i in self._fifo if i[0] == tenant_id]
                for item in dropped:
                    self._fifo.remove(item)
            # parked re-adds for in-flight items die too; done() drops them
            self._dirty = {i for i in self._dirty if i[0] != tenant_id}
            self.discarded += len(dropped)
            return len(dropped)

    def tenants(self) -> list[str]:
        with self._lock:
            return list(self._weights)

    # -- enqueue / dequeue -----------------------------------------------

    def add(self, tenant_id: str, key: Hashable) -> bool:
        """Queue work; returns False when it coalesced with pending work."""
        item = (tenant_id, key)
        with self._lock:
            if tenant_id not in self._weights:
                return False
            if item in self._dirty:
                return False
            self._dirty.add(item)
            self.enqueued[tenant_id] += 1
            if item in self._processing:
                return True  # parked; re-queued by done()
            self._push(item)
        self.signal.notify_all()
        return True

    def _push(self, item: Item) -> None:
        if self.fair:
            self._queues[item[0]].append(item)
        else:
            self._fifo.append(item)

    def get(self) -> Item | None:
        """Non-blocking dequeue; None when no dispatchable work exists."""
        with self._lock:
            item = self._dispatch_fair() if self.fair else self._dispatch_fifo()
            if item is not None:
                self._dirty.discard(item)
                self._processing.add(item)
                self.dispatched[item[0]] += 1
            return item

    def done(self, item: Item) -> None:
        """Finish processing; re-queues the item if it was re-added meanwhile."""
        requeued = False
        with self._lock:
            self._processing.discard(item)
            if item in self._dirty and item[0] in self._weights:
                self._push(item)
                requeued = True
            elif item in self._dirty:
                self._dirty.discard(item)  # tenant vanished while in flight
        if requeued:
            self.signal.notify_all()

    def _dispatch_fifo(self) -> Item | None:
        return self._fifo.popleft() if self._fifo else None

    def _rebuild_cycle(self) -> None:
        self._order = [
            tid
            for rnd in range(max(self._weights.values(), default=0))
            for tid, weight in self._weights.items()
            if weight > rnd
        ]
        self._cursor = 0

    def _dispatch_fair(self) -> Item | None:
        # Scan the remainder of this cycle, then at most one fresh cycle.
        for _ in range(2):
            while self._cursor < len(self._order):
                tid = self._order[self._cursor]
                self._cursor += 1
                queue = self._queues.get(tid)
                if queue:
                    return queue.popleft()
            self._rebuild_cycle()
            if not self._order:
                return None
        return None

    # -- introspection ---------------------------------------------------

    def has_pending(self) -> bool:
        with self._lock:
            if not self.fair:
                return bool(self._fifo)
            return any(self._queues.values())

    def pending(self) -> int:
        with self._lock:
            if not self.fair:
                return len(self._fifo)
            return sum(len(q) for q in self._queues.values())

    def depth(self, tenant_id: str) -> int:
        with self._lock:
            if not self.fair:
                return sum(1 for i in self._fifo if i[0] == tenant_id)
            queue = self._queues.get(tenant_id)
            return len(queue) if queue else 0

    def in_flight(self) -> int:
        with self._lock:
            return len(self._processing)

    def idle(self) -> bool:
        with self._lock:
            empty = not self._fifo if not self.fair else not any(self._queues.values())
            return empty and not self._processing and not self._dirty


def wait_for_item(queue: FairQueue) -> ActorGen:
    """Actor helper: park until the queue reports dispatchable work."""
    yield from wait_until(queue.signal, queue.has_pending)


def drain_order(queue: FairQueue, limit: int | None = None) -> list[Item]:
    """Dequeue-and-complete until empty (or ``limit``); returns the order."""
    out: list[Item] = []
    while limit is None or len(out) < limit:
        item = queue.get()
        if item is None:
            break
        queue.done(item)
        out.append(item)
    return out
