"""Cache-and-notify layer between a store and its consumers.

An informer lists once, then follows a watch stream, maintaining a local
cache of every tracked kind and fanning events out to registered handlers.
Delivery lags commit by a configurable amount to model propagation delay.
When a stream is cancelled (slow consumer, fault injection) or its start
version has been compacted away, the informer relists and synthesizes the
add/update/delete events a perfect stream would have carried.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Iterable

from .engine import ActorGen, Engine, Sleep, wait_until
from .errors import VersionTooOldError
from .model import Kind, ObjectKey, VersionedObject
from .store import EventType, Store, WatchEvent

Handler = Callable[[EventType, VersionedObject], None]


@dataclass(frozen=True)
class LagPolicy:
    """Delay between a commit and its observation, sampled per event."""

    min_ms: float = 1.0
    max_ms: float = 5.0

    @classmethod
    def fixed(cls, ms: float) -> "LagPolicy":
        return cls(ms, ms)

    @classmethod
    def none(cls) -> "LagPolicy":
        return cls(0.0, 0.0)

    def sample(self, rng: random.Random) -> float:
        if self.max_ms <= self.min_ms:
            return self.min_ms / 1000.0
        return rng.uniform(self.min_ms, self.max_ms) / 1000.0


class Informer:
    """Watches one store for a set of kinds and keeps a local cache."""

    def __init__(
        self,
        engine: Engine,
        store: Store,
        kinds: Iterable[Kind],
        lag: LagPolicy | None = None,
        name: str | None = None,
    ):
        self.engine = engine
        self.store = store
        self.kinds = tuple(kinds)
        self.lag = lag if lag is not None else LagPolicy()
        self.name = name or f"informer:{store.name}"
        self._rng = engine.rng(self.name)
        self._cache: dict[ObjectKey, VersionedObject] = {}
        self._handlers: dict[Kind, list[Handler]] = {k: [] for k in self.kinds}
        self._current_stream = None
        self.stopped = False
        self.last_seen_version = 0
        self.relists = 0
        self.events_applied = 0

    def stop(self) -> None:
        """Shut the watch loop down; the actor exits at its next wakeup."""
        self.stopped = True
        if self._current_stream is not None:
            self._current_stream.invalidate()

    def force_relist(self) -> None:
        """Break the live stream so the actor relists, as after a reconnect."""
        if self._current_stream is not None:
            self._current_stream.invalidate()

    def add_handler(self, kind: Kind, handler: Handler) -> None:
        self._handlers[kind].append(handler)

    # -- cache reads -----------------------------------------------------

    def cache_get(self, key: ObjectKey) -> VersionedObject | None:
        return self._cache.get(key)

    def cache_list(self, kind: Kind, namespace: str | None = None) -> list[VersionedObject]:
        return [
            o
            for k, o in self._cache.items()
            if k.kind == kind and (namespace is None or k.namespace == namespace)
        ]

    def cache_keys(self, kind: Kind | None = None) -> set[ObjectKey]:
        if kind is None:
            return set(self._cache)
        return {k for k in self._cache if k.kind == kind}

    # -- event plumbing --------------------------------------------------

    def _dispatch(self, event_type: EventType, obj: VersionedObject) -> None:
        self.events_applied += 1
        for handler in self._handlers[obj.key.kind]:
            handler(event_type, obj)

    def _apply(self, event: WatchEvent) -> None:
        obj = event.object
        if event.event_type is EventType.DELETED:
            self._cache.pop(obj.key, None)
        else:
            self._cache[obj.key] = obj
        self.last_seen_version = max(self.last_seen_version, event.store_version)
        self._dispatch(event.event_type, obj)

    def _relist(self) -> None:
        self.relists += 1
        by_kind, version = self.store.list_all(self.kinds)
        fresh: dict[ObjectKey, VersionedObject] = {}
        for objs in by_kind.values():
            for obj in objs:
                fresh[obj.key] = obj
        synthesized: list[tuple[EventType, VersionedObject]] = []
        for key, obj in sorted(fresh.items(), key=lambda kv: kv[1].resource_version):
            old = self._cache.get(key)
            if old is None:
                synthesized.append((EventType.ADDED, obj))
            elif old.resource_version != obj.resource_version:
                synthesized.append((EventType.UPDATED, obj))
        for key in list(self._cache):
            if key not in fresh:
                gone = self._cache[key].with_updates(deletion_marked=True)
                synthesized.append((EventType.DELETED, gone))
        self._cache = fresh
        self.last_seen_version = version
        for event_type, obj in synthesized:
            self._dispatch(event_type, obj)

    def run(self) -> ActorGen:
        """Actor: list once, then watch forever, relisting on invalidation."""
        self._relist()
        while not self.stopped:
            try:
                stream = self.store.watch(self.kinds, from_version=self.last_seen_version)
            except VersionTooOldError:
                self._relist()
                continue
            self._current_stream = stream
            while not self.stopped:
                event = stream.try_next()
                if event is None:
                    if stream.broken:
                        break
                    yield from wait_until(
                        stream.signal,
                        lambda: stream.pending() > 0 or stream.broken or self.stopped,
                    )
                    continue
                delay = (event.at + self.lag.sample(self._rng)) - self.engine.now()
                if delay > 0:
                    yield Sleep(delay)
                self._apply(event)
            self._current_stream = None
            stream.close()
            if not self.stopped:
                self._relist()
