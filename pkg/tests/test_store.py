"""Store semantics: versioning, concurrency, watches, limits."""

from __future__ import annotations

import random

import pytest

from tenantsync.engine import SimEngine, Sleep
from tenantsync.errors import (
    AlreadyExistsError,
    ConflictError,
    NotFoundError,
    RateLimitedError,
    ValidationError,
    VersionTooOldError,
)
from tenantsync.model import Kind, ObjectKey
from tenantsync.store import (
    AuditEntry,
    EventType,
    RateLimitPolicy,
    Store,
    WatchFaultInjector,
    events_of,
    super_store,
    tenant_store,
)


def pod(name: str, ns: str = "work") -> ObjectKey:
    return ObjectKey(Kind.POD, ns, name)


@pytest.fixture
def store():
    return Store(SimEngine(), "test")


# -- CRUD ------------------------------------------------------------------


def test_create_get_roundtrip(store):
    obj = store.create(pod("a"), spec={"x": 1}, labels={"app": "demo"})
    assert obj.resource_version == 1
    assert len(obj.uid) == 32
    assert store.get(pod("a")) is obj
    assert store.try_get(pod("missing")) is None
    with pytest.raises(NotFoundError):
        store.get(pod("missing"))


def test_create_duplicate_rejected(store):
    store.create(pod("a"))
    with pytest.raises(AlreadyExistsError):
        store.create(pod("a"))


def test_update_bumps_version_and_keeps_uid(store):
    first = store.create(pod("a"), spec={"x": 1})
    second = store.update(pod("a"), spec={"x": 2})
    assert second.resource_version == 2
    assert second.uid == first.uid
    assert second.spec == {"x": 2}
    assert store.get(pod("a")).spec == {"x": 2}


def test_update_only_touches_named_fields(store):
    store.create(pod("a"), spec={"x": 1}, labels={"k": "v"}, status={"s": 0})
    updated = store.update(pod("a"), status={"s": 1})
    assert updated.spec == {"x": 1}
    assert dict(updated.labels) == {"k": "v"}
    assert updated.status == {"s": 1}


def test_optimistic_concurrency(store):
    obj = store.create(pod("a"))
    store.update(pod("a"), expected_version=obj.resource_version, spec={"x": 1})
    with pytest.raises(ConflictError) as exc:
        store.update(pod("a"), expected_version=obj.resource_version, spec={"x": 2})
    assert exc.value.current_version == 2
    # unconditional update still works
    store.update(pod("a"), spec={"x": 3})
    assert store.get(pod("a")).spec == {"x": 3}


def test_delete_and_recreate_changes_uid(store):
    first = store.create(pod("a"))
    final = store.delete(pod("a"))
    assert final.deletion_marked
    assert store.try_get(pod("a")) is None
    with pytest.raises(NotFoundError):
        store.delete(pod("a"))
    again = store.create(pod("a"))
    assert again.uid != first.uid


def test_versions_are_a_single_total_order_across_kinds(store):
    store.create(pod("a"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    store.update(pod("a"), spec={"x": 1})
    store.create(ObjectKey(Kind.NAMESPACE, "", "work"))
    versions = [row[0] for row in store.commit_log]
    assert versions == [1, 2, 3, 4]
    assert store.version == 4


def test_payload_mutation_does_not_leak_into_store(store):
    payload = {"x": 1}
    store.create(pod("a"), spec=payload)
    payload["x"] = 99
    assert store.get(pod("a")).spec == {"x": 1}


# -- listing ---------------------------------------------------------------


def test_list_filters_by_kind_and_namespace(store):
    store.create(pod("a", "ns1"))
    store.create(pod("b", "ns2"))
    store.create(ObjectKey(Kind.SERVICE, "ns1", "svc"))
    objs, version = store.list(Kind.POD)
    assert {o.key.name for o in objs} == {"a", "b"}
    assert version == 3
    only_ns1, _ = store.list(Kind.POD, namespace="ns1")
    assert [o.key.name for o in only_ns1] == ["a"]


def test_list_all_snapshots_multiple_kinds_at_one_version(store):
    store.create(pod("a"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    by_kind, version = store.list_all([Kind.POD, Kind.SERVICE, Kind.SECRET])
    assert version == 2
    assert [o.key.name for o in by_kind[Kind.POD]] == ["a"]
    assert [o.key.name for o in by_kind[Kind.SERVICE]] == ["svc"]
    assert by_kind[Kind.SECRET] == []
    assert store.list_calls[Kind.POD] == 1
    assert store.list_calls[Kind.SECRET] == 1


def test_object_count(store):
    store.create(pod("a"))
    store.create(pod("b"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    assert store.object_count() == 3
    assert store.object_count(Kind.POD) == 2


# -- watch -----------------------------------------------------------------


def test_watch_replays_history_from_version(store):
    store.create(pod("a"))
    store.create(pod("b"))
    stream = store.watch(Kind.POD, from_version=1)
    replayed = []
    while (event := stream.try_next()) is not None:
        replayed.append((event.event_type, event.object.key.name))
    assert replayed == [(EventType.ADDED, "b")]


def test_watch_sees_live_events_in_commit_order(store):
    stream = store.watch([Kind.POD, Kind.SERVICE])
    store.create(pod("a"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    store.update(pod("a"), spec={"x": 1})
    store.delete(pod("a"))
    got = []
    while (event := stream.try_next()) is not None:
        got.append((event.event_type, event.object.key.name, event.store_version))
    assert got == [
        (EventType.ADDED, "a", 1),
        (EventType.ADDED, "svc", 2),
        (EventType.UPDATED, "a", 3),
        (EventType.DELETED, "a", 4),
    ]


def test_watch_ignores_untracked_kinds(store):
    stream = store.watch(Kind.POD)
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    assert stream.try_next() is None


def test_watch_from_future_version_rejected(store):
    with pytest.raises(ValidationError):
        store.watch(Kind.POD, from_version=5)


def test_watch_replay_merges_kinds_sorted_by_version(store):
    store.create(pod("a"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    store.create(pod("b"))
    stream = store.watch([Kind.POD, Kind.SERVICE], from_version=0)
    versions = []
    while (event := stream.try_next()) is not None:
        versions.append(event.store_version)
    assert versions == [1, 2, 3]


def test_compaction_forces_relist():
    store = Store(SimEngine(), "tiny", history_limit=5)
    for i in range(10):
        store.create(pod(f"p-{i}"))
    with pytest.raises(VersionTooOldError):
        store.watch(Kind.POD, from_version=0)
    # recent history is still watchable
    stream = store.watch(Kind.POD, from_version=store.version - 1)
    event = stream.try_next()
    assert event is not None and event.store_version == store.version


def test_stream_overflow_breaks_the_stream():
    store = Store(SimEngine(), "small", stream_buffer=3)
    stream = store.watch(Kind.POD)
    for i in range(5):
        store.create(pod(f"p-{i}"))
    assert stream.broken
    assert stream.pending() == 0  # buffered events were discarded wholesale


def test_break_streams_only_hits_matching_kinds(store):
    pods = store.watch(Kind.POD)
    services = store.watch(Kind.SERVICE)
    assert store.break_streams(Kind.SERVICE) == 1
    assert services.broken and not pods.broken
    assert store.break_streams() == 1
    assert pods.broken


def test_closed_stream_receives_nothing(store):
    stream = store.watch(Kind.POD)
    stream.close()
    store.create(pod("a"))
    assert stream.try_next() is None


def test_fault_injector_drops_and_breaks():
    store = Store(SimEngine(), "flaky")
    injector = WatchFaultInjector(random.Random(1), drop_rate=1.0)
    store.set_watch_faults(injector)
    stream = store.watch(Kind.POD)
    store.create(pod("a"))
    assert stream.try_next() is None
    assert injector.dropped == 1

    breaker = WatchFaultInjector(random.Random(1), break_every=2)
    store.set_watch_faults(breaker)
    fresh = store.watch(Kind.POD, from_version=store.version)
    store.create(pod("b"))
    store.create(pod("c"))  # second delivery snaps the stream
    assert fresh.broken


# -- rate limiting ---------------------------------------------------------


def test_rate_limit_rejects_after_burst():
    eng = SimEngine()
    store = Store(eng, "limited", rate_limit=RateLimitPolicy(10.0, 3))
    for i in range(3):
        store.create(pod(f"p-{i}"))
    with pytest.raises(RateLimitedError) as exc:
        store.create(pod("p-3"))
    assert exc.value.retry_after > 0
    assert store.try_get(pod("p-3")) is None  # rejected write left no trace


def test_rate_limit_recovers_as_time_passes():
    eng = SimEngine()
    store = Store(eng, "limited", rate_limit=RateLimitPolicy(10.0, 1))
    done = []

    def writer():
        store.create(pod("p-0"))
        with pytest.raises(RateLimitedError) as exc:
            store.create(pod("p-1"))
        yield Sleep(exc.value.retry_after)
        store.create(pod("p-1"))
        done.append(eng.now())

    eng.spawn(writer())
    eng.run()
    assert done and done[0] == pytest.approx(0.1, abs=1e-3)
    assert store.object_count(Kind.POD) == 2


def test_rate_limit_policy_validation():
    with pytest.raises(ValidationError):
        RateLimitPolicy(0.0, 1)
    with pytest.raises(ValidationError):
        RateLimitPolicy(1.0, 0)


def test_default_store_factories():
    eng = SimEngine()
    ts = tenant_store(eng, "tenant:a")
    for i in range(200):
        ts.create(pod(f"p-{i:03d}"))
    with pytest.raises(RateLimitedError):
        ts.create(pod("p-200"))  # default burst of 200 exhausted
    ss = super_store(eng)
    for i in range(500):
        ss.create(pod(f"p-{i:03d}"))  # the super store is never throttled


# -- audit and logs --------------------------------------------------------


def test_audit_sink_sees_every_commit():
    entries: list[AuditEntry] = []
    store = Store(SimEngine(), "audited", audit_sink=entries.append)
    store.create(pod("a"), provenance="writer-one")
    store.update(pod("a"), spec={"x": 1}, provenance="writer-two")
    store.delete(pod("a"))
    assert [(e.op, e.provenance) for e in entries] == [
        ("Added", "writer-one"),
        ("Updated", "writer-two"),
        ("Deleted", None),
    ]
    assert all(e.store == "audited" for e in entries)
    assert [e.version for e in entries] == [1, 2, 3]


def test_events_of_filters_commit_log(store):
    store.create(pod("a"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"))
    assert len(events_of(store)) == 2
    assert len(events_of(store, [Kind.POD])) == 1


def test_dump_commit_log(tmp_path, store):
    store.create(pod("a"))
    store.delete(pod("a"))
    out = tmp_path / "log.txt"
    store.dump_commit_log(out)
    lines = out.read_text().splitlines()
    assert lines == ["1 Added Pod/work/a", "2 Deleted Pod/work/a"]
