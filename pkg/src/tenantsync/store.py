"""Versioned, watchable in-memory object store.

One instance backs each tenant control plane and one backs the super
cluster. Semantics mirror an apiserver: a single total commit order per
store, optimistic concurrency on update, ordered watch streams with bounded
buffers and history compaction, and an optional token-bucket write limiter
that rejects (never silently drops) over-limit requests.
"""

from __future__ import annotations

import random
import threading
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

from .engine import Engine, Signal, TokenBucket
from .errors import (
    AlreadyExistsError,
    ConflictError,
    NotFoundError,
    RateLimitedError,
    ValidationError,
    VersionTooOldError,
)
from .model import Kind, ObjectKey, VersionedObject

_UNSET = object()


class EventType(Enum):
    ADDED = "Added"
    UPDATED = "Updated"
    DELETED = "Deleted"


@dataclass(frozen=True)
class WatchEvent:
    event_type: EventType
    object: VersionedObject
    store_version: int
    at: float  # commit time


@dataclass(frozen=True)
class RateLimitPolicy:
    sustained_rate: float  # requests/second
    burst: int

    def __post_init__(self):
        if self.sustained_rate <= 0:
            raise ValidationError("sustained_rate must be > 0")
        if self.burst < 1:
            raise ValidationError("burst must be >= 1")


@dataclass
class AuditEntry:
    """One committed write, tagged with who performed it."""

    store: str
    version: int
    op: str
    key: ObjectKey
    provenance: str | None


class WatchFaultInjector:
    """Drops watch deliveries and snaps streams, for resilience scenarios."""

    def __init__(self, rng: random.Random, drop_rate: float = 0.0, break_every: int = 0):
        self.rng = rng
        self.drop_rate = drop_rate
        self.break_every = break_every
        self._delivered = 0
        self.dropped = 0

    def on_deliver(self, stream: "WatchStream") -> bool:
        """Returns False to drop the event; may break the stream instead."""
        self._delivered += 1
        if self.break_every and self._delivered % self.break_every == 0:
            stream.invalidate()
            return False
        if self.drop_rate and self.rng.random() < self.drop_rate:
            self.dropped += 1
            return False
        return True


class WatchStream:
    """Ordered event feed for one watcher; overflow cancels the stream."""

    def __init__(self, engine: Engine, kinds: frozenset[Kind], buffer_limit: int):
        self.kinds = kinds
        self.signal = engine.signal()
        self._events: deque[WatchEvent] = deque()
        self._buffer_limit = buffer_limit
        self._lock = threading.Lock()
        self.broken = False
        self.closed = False

    def _push(self, event: WatchEvent) -> None:
        with self._lock:
            if self.closed or self.broken:
                return
            if len(self._events) >= self._buffer_limit:
                self.broken = True  # slow watcher: cancel, consumer must relist
                self._events.clear()
            else:
                self._events.append(event)
        self.signal.notify_all()

    def try_next(self) -> WatchEvent | None:
        with self._lock:
            return self._events.popleft() if self._events else None

    def pending(self) -> int:
        return len(self._events)

    def invalidate(self) -> None:
        """Force the consumer onto the relist path (fault injection / compaction)."""
        with self._lock:
            self.broken = True
            self._events.clear()
        self.signal.notify_all()

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._events.clear()
        self.signal.notify_all()


class Store:
    """Linearizable per-instance object store with watch support."""

    def __init__(
        self,
        engine: Engine,
        name: str,
        rate_limit: RateLimitPolicy | None = None,
        history_limit: int = 10_000,
        stream_buffer: int = 50_000,
        audit_sink: Callable[[AuditEntry], None] | None = None,
    ):
        self.engine = engine
        self.name = name
        self._objects: dict[ObjectKey, VersionedObject] = {}
        self._version = 0
        self._lock = threading.RLock()
        self._history: dict[Kind, deque[WatchEvent]] = {k: deque() for k in Kind}
        self._history_limit = history_limit
        self._compacted_before: dict[Kind, int] = {k: 0 for k in Kind}
        self._streams: list[WatchStream] = []
        self._stream_buffer = stream_buffer
        self._uid_rng = engine.rng(f"uid:{name}")
        self._limiter = (
            TokenBucket(engine, rate_limit.sustained_rate, rate_limit.burst) if rate_limit else None
        )
        self._audit_sink = audit_sink
        self._fault_injector: WatchFaultInjector | None = None
        self.commit_log: list[tuple[int, str, ObjectKey, str]] = []
        self.list_calls: Counter = Counter()

    # -- helpers ---------------------------------------------------------

    @property
    def version(self) -> int:
        return self._version

    def set_watch_faults(self, injector: WatchFaultInjector | None) -> None:
        self._fault_injector = injector

    def break_streams(self, kind: Kind | None = None) -> int:
        """Invalidate live streams (all, or those watching ``kind``)."""
        with self._lock:
            targets = [
                s
                for s in self._streams
                if not s.closed and not s.broken and (kind is None or kind in s.kinds)
            ]
        for stream in targets:
            stream.invalidate()
        return len(targets)

    def _check_rate_limit(self) -> None:
        if self._limiter is not None:
            wait = self._limiter.try_acquire()
            if wait > 0:
                raise RateLimitedError(f"store {self.name!r} write rate exceeded", retry_after=wait)

    def _new_uid(self) -> str:
        return format(self._uid_rng.getrandbits(128), "032x")

    @staticmethod
    def _copy_payload(payload):
        return dict(payload) if isinstance(payload, dict) else payload

    def _commit(self, event_type: EventType, obj: VersionedObject, provenance: str | None) -> None:
        # caller holds the lock; self._version was already bumped
        now = self.engine.now()
        event = WatchEvent(event_type, obj, obj.resource_version, now)
        history = self._history[obj.key.kind]
        if len(history) >= self._history_limit:
            evicted = history.popleft()
            self._compacted_before[obj.key.kind] = evicted.store_version
        history.append(event)
        self.commit_log.append((obj.resource_version, event_type.value, obj.key, obj.uid))
        if self._audit_sink is not None:
            self._audit_sink(
                AuditEntry(self.name, obj.resource_version, event_type.value, obj.key, provenance)
            )
        dead = None
        for stream in self._streams:
            if obj.key.kind not in stream.kinds:
                continue
            if stream.closed or stream.broken:
                dead = True
                continue
            if self._fault_injector is not None and not self._fault_injector.on_deliver(stream):
                continue
            stream._push(event)
        if dead:
            self._streams = [s for s in self._streams if not s.closed and not s.broken]

    # -- CRUD ------------------------------------------------------------

    def create(
        self,
        key: ObjectKey,
        spec=None,
        status=None,
        labels: dict[str, str] | None = None,
        annotations: dict[str, str] | None = None,
        provenance: str | None = None,
    ) -> VersionedObject:
        with self._lock:
            self._check_rate_limit()
            if key in self._objects:
                raise AlreadyExistsError(f"{key.text()} already exists in {self.name!r}")
            self._version += 1
            obj = VersionedObject(
                key=key,
                uid=self._new_uid(),
                resource_version=self._version,
                spec=self._copy_payload(spec),
                status=self._copy_payload(status),
                labels=dict(labels or {}),
                annotations=dict(annotations or {}),
                created_at=self.engine.now(),
            )
            self._objects[key] = obj
            self._commit(EventType.ADDED, obj, provenance)
            return obj

    def update(
        self,
        key: ObjectKey,
        expected_version: int | None = None,
        spec=_UNSET,
        status=_UNSET,
        labels=_UNSET,
        annotations=_UNSET,
        deletion_marked=_UNSET,
        provenance: str | None = None,
    ) -> VersionedObject:
        with self._lock:
            self._check_rate_limit()
            current = self._objects.get(key)
            if current is None:
                raise NotFoundError(f"{key.text()} not found in {self.name!r}")
            if expected_version is not None and expected_version != current.resource_version:
                raise ConflictError(
                    f"{key.text()} at version {current.resource_version}, expected {expected_version}",
                    current_version=current.resource_version,
                )
            changes: dict = {}
            if spec is not _UNSET:
                changes["spec"] = self._copy_payload(spec)
            if status is not _UNSET:
                changes["status"] = self._copy_payload(status)
            if labels is not _UNSET:
                changes["labels"] = dict(labels or {})
            if annotations is not _UNSET:
                changes["annotations"] = dict(annotations or {})
            if deletion_marked is not _UNSET:
                changes["deletion_marked"] = bool(deletion_marked)
            self._version += 1
            obj = current.with_updates(resource_version=self._version, **changes)
            self._objects[key] = obj
            self._commit(EventType.UPDATED, obj, provenance)
            return obj

    def delete(self, key: ObjectKey, provenance: str | None = None) -> VersionedObject:
        with self._lock:
            self._check_rate_limit()
            current = self._objects.pop(key, None)
            if current is None:
                raise NotFoundError(f"{key.text()} not found in {self.name!r}")
            self._version += 1
            final = current.with_updates(resource_version=self._version, deletion_marked=True)
            self._commit(EventType.DELETED, final, provenance)
            return final

    # -- reads -----------------------------------------------------------

    def get(self, key: ObjectKey) -> VersionedObject:
        with self._lock:
            obj = self._objects.get(key)
            if obj is None:
                raise NotFoundError(f"{key.text()} not found in {self.name!r}")
            return obj

    def try_get(self, key: ObjectKey) -> VersionedObject | None:
        with self._lock:
            return self._objects.get(key)

    def list(
        self, kind: Kind, namespace: str | None = None
    ) -> tuple[list[VersionedObject], int]:
        """Snapshot-consistent listing: all objects as of the returned version."""
        with self._lock:
            self.list_calls[kind] += 1
            objs = [
                o
                for k, o in self._objects.items()
                if k.kind == kind and (namespace is None or k.namespace == namespace)
            ]
            return objs, self._version

    def list_all(
        self, kinds: Iterable[Kind]
    ) -> tuple[dict[Kind, list[VersionedObject]], int]:
        """List several kinds under one lock hold, so the version covers all."""
        with self._lock:
            out: dict[Kind, list[VersionedObject]] = {}
            for kind in kinds:
                self.list_calls[kind] += 1
                out[kind] = [o for k, o in self._objects.items() if k.kind == kind]
            return out, self._version

    def object_count(self, kind: Kind | None = None) -> int:
        with self._lock:
            if kind is None:
                return len(self._objects)
            return sum(1 for k in self._objects if k.kind == kind)

    # -- watch -----------------------------------------------------------

    def watch(self, kinds: Kind | Iterable[Kind], from_version: int = 0) -> WatchStream:
        kindset = frozenset([kinds] if isinstance(kinds, Kind) else kinds)
        with self._lock:
            if from_version > self._version:
                raise ValidationError(
                    f"watch from {from_version} ahead of store version {self._version}"
                )
            for kind in kindset:
                if from_version < self._compacted_before[kind]:
                    raise VersionTooOldError(
                        f"history for {kind.value} compacted beyond version {from_version}"
                    )
            stream = WatchStream(self.engine, kindset, self._stream_buffer)
            replay = [
                e
                for kind in kindset
                for e in self._history[kind]
                if e.store_version > from_version
            ]
            replay.sort(key=lambda e: e.store_version)
            for event in replay:
                stream._events.append(event)
            self._streams.append(stream)
            return stream

    # -- debugging -------------------------------------------------------

    def dump_commit_log(self, path) -> None:
        with open(path, "w") as fh:
            for version, event, key, _uid in self.commit_log:
                fh.write(f"{version} {event} {key.text()}\n")


def tenant_store(
    engine: Engine,
    name: str,
    audit_sink: Callable[[AuditEntry], None] | None = None,
    rate_limit: RateLimitPolicy | None = RateLimitPolicy(100.0, 200),
) -> Store:
    """A tenant control-plane store with the default write limiter."""
    return Store(engine, name, rate_limit=rate_limit, audit_sink=audit_sink)


def super_store(
    engine: Engine, audit_sink: Callable[[AuditEntry], None] | None = None
) -> Store:
    """The shared super-cluster store; unlimited, the syncer is its writer."""
    return Store(engine, "super", rate_limit=None, audit_sink=audit_sink)


def events_of(store: Store, kinds: Sequence[Kind] | None = None):
    """All commit-log rows, optionally filtered by kind (test helper)."""
    return [
        row for row in store.commit_log if kinds is None or row[2].kind in kinds
    ]
