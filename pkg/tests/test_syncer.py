"""Downward/upward reconciliation, vNodes, scans, and proxy resolution."""

from __future__ import annotations

from dataclasses import replace

import pytest

from tenantsync.audit import IsolationAuditor, downward_provenance, upward_provenance
from tenantsync.engine import SimEngine
from tenantsync.errors import (
    AuthenticationUnknownError,
    ConflictError,
    NotFoundError,
    RateLimitedError,
)
from tenantsync.informer import Informer, LagPolicy
from tenantsync.model import (
    Kind,
    ObjectKey,
    PodSpec,
    PodStatus,
    TenantRecord,
    TenantRegistry,
)
from tenantsync.store import AuditEntry, RateLimitPolicy, Store, WatchFaultInjector
from tenantsync.syncer import (
    ORIGIN_NAME,
    ORIGIN_NAMESPACE,
    ORIGIN_TENANT,
    ORIGIN_UID,
    ProxyTarget,
    Syncer,
    SyncerConfig,
)

NO_LAG = LagPolicy.none()


class Rig:
    """A minimal deployment: super store, hub informer, syncer, no provider."""

    def __init__(self, downward_workers=4, upward_workers=4, scan_interval=60.0):
        self.engine = SimEngine(seed=1)
        self.registry = TenantRegistry()
        self.auditor = IsolationAuditor(self.registry)
        self.super_store = Store(self.engine, "super", audit_sink=self.auditor.record)
        self.hub = Informer(
            self.engine, self.super_store, tuple(Kind), lag=NO_LAG, name="informer:super"
        )
        self.syncer = Syncer(
            self.engine,
            self.super_store,
            self.hub,
            self.registry,
            SyncerConfig(
                downward_workers=downward_workers,
                upward_workers=upward_workers,
                scan_interval=scan_interval,
                downward_admission_rate=None,
                tenant_lag=NO_LAG,
            ),
        )
        self.engine.spawn(self.hub.run(), name=self.hub.name)
        self.syncer.start()
        self.stores: dict[str, Store] = {}

    def add_tenant(self, tenant_id: str, uid: str, weight=1, rate_limit=None) -> Store:
        store = Store(
            self.engine,
            f"tenant:{tenant_id}",
            rate_limit=rate_limit,
            audit_sink=self.auditor.record,
        )
        record = TenantRecord(tenant_id=tenant_id, vc_uid=uid, weight=weight)
        self.syncer.register_tenant(record, store)
        self.stores[tenant_id] = store
        return store

    def settle(self, seconds: float = 0.5) -> None:
        self.engine.run_for(seconds)

    def record(self, tenant_id: str) -> TenantRecord:
        return self.registry.get(tenant_id)

    def super_pod_key(self, tenant_id: str, ns: str, name: str) -> ObjectKey:
        prefix = self.record(tenant_id).prefix
        return ObjectKey(Kind.POD, f"{prefix}-{ns}", name)


@pytest.fixture
def rig():
    return Rig()


def seed_workload(rig: Rig, tenant_id: str = "ta", uid: str = "0" * 32) -> Store:
    store = rig.add_tenant(tenant_id, uid)
    store.create(ObjectKey(Kind.NAMESPACE, "", "work"))
    store.create(ObjectKey(Kind.POD, "work", "p1"), spec=PodSpec())
    rig.settle()
    return store


def bind_and_ready(rig: Rig, tenant_id: str, name: str = "p1", node: str = "node-3"):
    """Stand in for the scheduler and kubelet on the super side."""
    skey = rig.super_pod_key(tenant_id, "work", name)
    sup = rig.super_store.get(skey)
    rig.super_store.update(
        skey, spec=replace(sup.spec, node_name=node), provenance="scheduler"
    )
    rig.settle(0.1)
    rig.super_store.update(
        skey,
        status=PodStatus(phase="Running", ready=True, ready_at=rig.engine.now()),
        provenance=f"kubelet:{node}",
    )
    rig.settle()
    return skey


# -- downward --------------------------------------------------------------


def test_downward_create_mangles_namespace_and_stamps_origin(rig):
    store = seed_workload(rig)
    prefix = rig.record("ta").prefix
    assert prefix == "ta-f0c864"
    sup_ns = rig.super_store.get(ObjectKey(Kind.NAMESPACE, "", f"{prefix}-work"))
    assert sup_ns.annotations[ORIGIN_TENANT] == "ta"
    sup_pod = rig.super_store.get(rig.super_pod_key("ta", "work", "p1"))
    tenant_pod = store.get(ObjectKey(Kind.POD, "work", "p1"))
    assert sup_pod.annotations[ORIGIN_NAMESPACE] == "work"
    assert sup_pod.annotations[ORIGIN_NAME] == "p1"
    assert sup_pod.annotations[ORIGIN_UID] == tenant_pod.uid
    assert sup_pod.uid != tenant_pod.uid  # the copy is its own object
    assert rig.syncer.op_counts["down-created"] == 2


def test_downward_is_idempotent_once_converged(rig):
    seed_workload(rig)
    ops_before = dict(rig.syncer.op_counts)
    version_before = rig.super_store.version
    rig.syncer.down_q.add("ta", ObjectKey(Kind.POD, "work", "p1"))
    rig.settle()
    assert dict(rig.syncer.op_counts) == ops_before
    assert rig.super_store.version == version_before


def test_downward_propagates_updates(rig):
    store = seed_workload(rig)
    store.update(ObjectKey(Kind.POD, "work", "p1"), labels={"tier": "web"})
    rig.settle()
    sup_pod = rig.super_store.get(rig.super_pod_key("ta", "work", "p1"))
    assert dict(sup_pod.labels) == {"tier": "web"}
    assert rig.syncer.op_counts["down-updated"] >= 1


def test_downward_propagates_deletes(rig):
    store = seed_workload(rig)
    store.delete(ObjectKey(Kind.POD, "work", "p1"))
    rig.settle()
    assert rig.super_store.try_get(rig.super_pod_key("ta", "work", "p1")) is None
    assert rig.syncer.op_counts["down-deleted"] == 1


def test_downward_replaces_on_uid_change(rig):
    store = seed_workload(rig)
    key = ObjectKey(Kind.POD, "work", "p1")
    # cut event delivery so delete+recreate shows up as one silent swap
    store.set_watch_faults(WatchFaultInjector(rig.engine.rng("faults"), drop_rate=1.0))
    store.delete(key)
    new = store.create(key, spec=PodSpec())
    store.set_watch_faults(None)
    rig.syncer._tenants["ta"].informer.force_relist()
    rig.settle()
    sup_pod = rig.super_store.get(rig.super_pod_key("ta", "work", "p1"))
    assert sup_pod.annotations[ORIGIN_UID] == new.uid
    assert rig.syncer.op_counts["down-replaced"] == 1


def test_downward_preserves_provider_owned_pod_fields(rig):
    store = seed_workload(rig)
    skey = rig.super_pod_key("ta", "work", "p1")
    sup = rig.super_store.get(skey)
    rig.super_store.update(
        skey, spec=replace(sup.spec, node_name="node-7"), provenance="scheduler"
    )
    rig.settle(0.1)
    store.update(ObjectKey(Kind.POD, "work", "p1"), labels={"rev": "2"})
    rig.settle()
    sup = rig.super_store.get(skey)
    assert sup.spec.node_name == "node-7"  # binding survived the tenant update
    assert dict(sup.labels) == {"rev": "2"}


def test_downward_covers_all_tenant_sourced_kinds(rig):
    store = rig.add_tenant("ta", "0" * 32)
    store.create(ObjectKey(Kind.NAMESPACE, "", "work"))
    store.create(ObjectKey(Kind.SERVICE, "work", "svc"), spec={"port": 80})
    store.create(ObjectKey(Kind.ENDPOINTS, "work", "svc"), spec={"addresses": ("10.0.0.1",)})
    store.create(ObjectKey(Kind.SECRET, "work", "creds"), spec={"token": "x"})
    store.create(ObjectKey(Kind.CONFIGMAP, "work", "conf"), spec={"k": "v"})
    rig.settle()
    ns = f"{rig.record('ta').prefix}-work"
    for kind, name in [
        (Kind.SERVICE, "svc"),
        (Kind.ENDPOINTS, "svc"),
        (Kind.SECRET, "creds"),
        (Kind.CONFIGMAP, "conf"),
    ]:
        assert rig.super_store.try_get(ObjectKey(kind, ns, name)) is not None


# -- upward ----------------------------------------------------------------


def test_upward_status_flows_back_with_vnode_translation(rig):
    store = seed_workload(rig)
    bind_and_ready(rig, "ta", node="node-3")
    tenant_pod = store.get(ObjectKey(Kind.POD, "work", "p1"))
    assert tenant_pod.status is not None and tenant_pod.status.ready
    assert tenant_pod.spec.node_name == "vn-node-3"  # physical name stays hidden
    vnode = store.get(ObjectKey(Kind.NODE, "", "vn-node-3"))
    assert vnode.spec["physical"] == "node-3"
    assert rig.syncer.op_counts["vnode-created"] == 1
    assert rig.syncer.op_counts["up-status"] >= 1


def test_upward_ignores_stale_incarnations(rig):
    store = seed_workload(rig)
    skey = bind_and_ready(rig, "ta")
    # recreate the tenant pod; the super copy still carries the old uid
    store.delete(ObjectKey(Kind.POD, "work", "p1"))
    store.create(ObjectKey(Kind.POD, "work", "p1"), spec=PodSpec())
    marker = ("pod-status", skey)
    assert rig.syncer._apply_upward("ta", marker) in ("noop", "dropped")


def test_vnode_created_on_first_pod_and_gced_after_last(rig):
    store = seed_workload(rig)
    store.create(ObjectKey(Kind.POD, "work", "p2"), spec=PodSpec())
    rig.settle()
    bind_and_ready(rig, "ta", "p1", node="node-3")
    bind_and_ready(rig, "ta", "p2", node="node-3")
    assert rig.syncer.op_counts["vnode-created"] == 1  # shared by both pods
    store.delete(ObjectKey(Kind.POD, "work", "p1"))
    rig.settle()
    assert store.try_get(ObjectKey(Kind.NODE, "", "vn-node-3")) is not None
    store.delete(ObjectKey(Kind.POD, "work", "p2"))
    rig.settle()
    assert store.try_get(ObjectKey(Kind.NODE, "", "vn-node-3")) is None
    assert rig.syncer.op_counts["vnode-deleted"] == 1


def test_heartbeats_relay_to_tenant_vnodes(rig):
    rig.super_store.create(
        ObjectKey(Kind.NODE, "", "node-3"),
        spec={"capacity": 10},
        status={"beat": 0},
        provenance="node-provider",
    )
    store = seed_workload(rig)
    bind_and_ready(rig, "ta", node="node-3")
    vkey = ObjectKey(Kind.NODE, "", "vn-node-3")
    assert store.get(vkey).spec["capacity"] == 10  # vnode mirrors the physical spec
    rig.super_store.update(
        ObjectKey(Kind.NODE, "", "node-3"), status={"beat": 7}, provenance="node-provider"
    )
    rig.settle()
    assert store.get(vkey).status == {"beat": 7}
    assert rig.syncer.op_counts["beat-relayed"] >= 1


def test_heartbeats_are_best_effort_under_tenant_throttle():
    rig = Rig()
    rig.super_store.create(
        ObjectKey(Kind.NODE, "", "node-3"), spec={}, status={"beat": 0}
    )
    store = rig.add_tenant("ta", "0" * 32, rate_limit=RateLimitPolicy(5.0, 20))
    store.create(ObjectKey(Kind.NAMESPACE, "", "work"))
    store.create(ObjectKey(Kind.POD, "work", "p1"), spec=PodSpec())
    rig.settle()
    bind_and_ready(rig, "ta", node="node-3")
    nkey = ObjectKey(Kind.NAMESPACE, "", "work")
    while True:  # burn the remaining write budget
        try:
            store.update(nkey, labels={"drain": str(rig.engine.now())})
        except RateLimitedError:
            break
    for beat in range(1, 4):
        rig.super_store.update(ObjectKey(Kind.NODE, "", "node-3"), status={"beat": beat})
    rig.settle(0.05)
    assert rig.syncer.beats_dropped >= 1
    assert all(key[2][0] != "node-beat" for key in rig.syncer._attempts), (
        "dropped beats must not queue retries"
    )


# -- scans -----------------------------------------------------------------


def test_scan_repairs_out_of_band_super_deletion(rig):
    seed_workload(rig)
    skey = rig.super_pod_key("ta", "work", "p1")
    rig.super_store.delete(skey, provenance="chaos")
    rig.hub.force_relist()  # let caches notice the damage either way
    rig.settle(0.1)
    # patch anything event flow already fixed, then measure a clean pass
    assert rig.syncer.scan_tenant("ta") >= 0
    rig.settle()
    assert rig.super_store.try_get(skey) is not None
    assert rig.syncer.scan_tenant("ta") == 0  # converged: nothing left to find


def test_scan_removes_orphaned_super_objects(rig):
    seed_workload(rig)
    orphan = ObjectKey(Kind.POD, f"{rig.record('ta').prefix}-work", "stowaway")
    rig.super_store.create(orphan, spec=PodSpec(), provenance="chaos")
    found = rig.syncer.scan_tenant("ta")
    assert found >= 1
    rig.settle()
    assert rig.super_store.try_get(orphan) is None


def test_scan_reenqueues_missed_ready_status(rig):
    store = seed_workload(rig)
    skey = rig.super_pod_key("ta", "work", "p1")
    sup = rig.super_store.get(skey)
    # mark ready while the hub is deaf, so no upward event ever fires
    rig.super_store.set_watch_faults(
        WatchFaultInjector(rig.engine.rng("faults"), drop_rate=1.0)
    )
    rig.super_store.update(
        skey, spec=replace(sup.spec, node_name="node-9"), provenance="scheduler"
    )
    rig.super_store.update(
        skey, status=PodStatus(phase="Running", ready=True, ready_at=0.0),
        provenance="kubelet:node-9",
    )
    rig.super_store.set_watch_faults(None)
    rig.settle(0.1)
    tenant_pod = store.get(ObjectKey(Kind.POD, "work", "p1"))
    assert tenant_pod.status is None or not tenant_pod.status.ready
    assert rig.syncer.scan_tenant("ta") >= 1
    rig.settle()
    assert store.get(ObjectKey(Kind.POD, "work", "p1")).status.ready


def test_scan_loops_run_with_jitter():
    rig = Rig(scan_interval=2.0)
    seed_workload(rig)
    rig.settle(6.0)
    times = [t for t, tid, _ in rig.syncer.scan_log if tid == "ta"]
    assert len(times) >= 2
    assert 1.0 <= times[0] <= 3.0  # first pass lands inside the jitter window
    assert times[1] - times[0] == pytest.approx(2.0, abs=1e-6)


# -- restart and unregister ------------------------------------------------


def test_restart_relists_each_informer_once(rig):
    store = seed_workload(rig)
    rig.settle(1.0)
    sup_before = dict(rig.super_store.list_calls)
    ten_before = dict(store.list_calls)
    hub_relists = rig.hub.relists
    rig.syncer.restart()
    rig.settle(0.2)
    sup_delta = {
        kind: rig.super_store.list_calls[kind] - sup_before.get(kind, 0)
        for kind in rig.hub.kinds
    }
    ten_delta = {
        kind: store.list_calls[kind] - ten_before.get(kind, 0)
        for kind in rig.syncer._tenants["ta"].informer.kinds
    }
    assert set(sup_delta.values()) == {1}, "each super kind listed exactly once"
    assert set(ten_delta.values()) == {1}, "each tenant kind listed exactly once"
    assert rig.hub.relists == hub_relists + 1
    assert rig.syncer.restarts == 1


def test_unregister_garbage_collects_super_state(rig):
    seed_workload(rig, "ta", "0" * 32)
    tb = rig.add_tenant("tb", "1" * 32)
    tb.create(ObjectKey(Kind.NAMESPACE, "", "work"))
    tb.create(ObjectKey(Kind.POD, "work", "p1"), spec=PodSpec())
    rig.settle()
    prefix_a = rig.record("ta").prefix
    removed = rig.syncer.unregister_tenant("ta")
    assert removed == 2  # namespace and pod
    leftovers = [
        obj.key
        for kind in (Kind.NAMESPACE, Kind.POD)
        for obj in rig.super_store.list(kind)[0]
        if (obj.key.name if kind is Kind.NAMESPACE else obj.key.namespace).startswith(prefix_a)
    ]
    assert leftovers == []
    assert "ta" not in rig.registry
    assert rig.syncer.down_q.tenants() == ["tb"]
    # the other tenant's copies are untouched
    assert rig.super_store.try_get(rig.super_pod_key("tb", "work", "p1")) is not None
    with pytest.raises(NotFoundError):
        rig.syncer.unregister_tenant("ta")


def test_set_tenant_weight_reaches_queues_and_registry(rig):
    seed_workload(rig)
    rig.syncer.set_tenant_weight("ta", 5)
    assert rig.record("ta").weight == 5
    assert rig.syncer.down_q._weights["ta"] == 5
    assert rig.syncer.up_q._weights["ta"] == 5


# -- retries ---------------------------------------------------------------


def test_retry_backoff_doubles_and_caps():
    rig = Rig(downward_workers=0, upward_workers=0)
    rig.add_tenant("ta", "0" * 32)
    key = ObjectKey(Kind.POD, "work", "p1")
    syncer = rig.syncer
    for _ in range(12):
        syncer._schedule_retry("d", "ta", key, ConflictError("clash"))
    assert syncer._attempts[("d", "ta", key)] == 12
    assert syncer.op_counts["retry-d"] == 12
    cfg = syncer.config
    delays = [
        min(cfg.backoff_cap, cfg.backoff_base * cfg.backoff_factor ** n)
        for n in range(12)
    ]
    assert delays[0] == pytest.approx(0.010)
    assert delays[1] == pytest.approx(0.020)
    assert delays[-1] == cfg.backoff_cap  # growth stops at the cap


def test_retry_waits_out_rate_limit_hints():
    rig = Rig(downward_workers=0, upward_workers=0)
    rig.add_tenant("ta", "0" * 32)
    key = ObjectKey(Kind.POD, "work", "p1")
    rig.syncer._schedule_retry("d", "ta", key, RateLimitedError("slow", retry_after=1.0))
    rig.engine.run(until_time=0.9)
    assert rig.syncer.down_q.pending() == 0  # not re-queued before the hint
    rig.engine.run(until_time=1.1)
    assert rig.syncer.down_q.pending() == 1


def test_downward_worker_retries_conflicts_until_converged(rig):
    store = seed_workload(rig)
    skey = rig.super_pod_key("ta", "work", "p1")

    # an interloper keeps racing version bumps against the next syncer write
    meddle = {"left": 3}
    original_update = rig.super_store.update

    def racing_update(key, **kwargs):
        if key == skey and meddle["left"] > 0 and kwargs.get("expected_version"):
            meddle["left"] -= 1
            original_update(key, labels={"raced": str(meddle["left"])})
        return original_update(key, **kwargs)

    rig.super_store.update = racing_update
    store.update(ObjectKey(Kind.POD, "work", "p1"), labels={"want": "this"})
    rig.settle(2.0)
    rig.super_store.update = original_update
    assert dict(rig.super_store.get(skey).labels) == {"want": "this"}
    assert rig.syncer.op_counts["retry-d"] >= 1


# -- proxy resolution ------------------------------------------------------


def test_resolve_proxy_target_follows_the_binding(rig):
    seed_workload(rig)
    fingerprint = rig.record("ta").credential_fingerprint
    before = rig.syncer.resolve_proxy_target(fingerprint, "work", "p1")
    assert before == ProxyTarget("ta", rig.super_pod_key("ta", "work", "p1"), None)
    bind_and_ready(rig, "ta", node="node-3")
    after = rig.syncer.resolve_proxy_target(fingerprint, "work", "p1")
    assert after.node == "node-3"
    assert after.super_key.namespace == f"{rig.record('ta').prefix}-work"


def test_resolve_proxy_target_rejects_unknown_credentials(rig):
    seed_workload(rig)
    with pytest.raises(AuthenticationUnknownError):
        rig.syncer.resolve_proxy_target("f" * 64, "work", "p1")


# -- isolation auditing ----------------------------------------------------


def test_rig_workload_produces_no_isolation_violations(rig):
    store = seed_workload(rig, "ta", "0" * 32)
    tb = rig.add_tenant("tb", "1" * 32)
    tb.create(ObjectKey(Kind.NAMESPACE, "", "work"))
    tb.create(ObjectKey(Kind.POD, "work", "p1"), spec=PodSpec())
    rig.settle()
    bind_and_ready(rig, "ta")
    bind_and_ready(rig, "tb", node="node-5")
    store.delete(ObjectKey(Kind.POD, "work", "p1"))
    rig.settle()
    assert rig.auditor.checked > 0
    assert rig.auditor.violations == []


def test_auditor_flags_cross_tenant_writes():
    registry = TenantRegistry()
    registry.register(TenantRecord(tenant_id="ta", vc_uid="0" * 32))
    registry.register(TenantRecord(tenant_id="tb", vc_uid="1" * 32))
    auditor = IsolationAuditor(registry)
    pod_b = ObjectKey(Kind.POD, "tb-efc862-work", "p")

    # downward write into another tenant's namespace
    auditor.record(AuditEntry("super", 1, "Added", pod_b, downward_provenance("ta")))
    # upward write into another tenant's store
    auditor.record(
        AuditEntry("tenant:tb", 2, "Updated", ObjectKey(Kind.POD, "work", "p"),
                   upward_provenance("ta"))
    )
    # downward write touching cluster infrastructure
    auditor.record(
        AuditEntry("super", 3, "Added", ObjectKey(Kind.NODE, "", "node-1"),
                   downward_provenance("ta"))
    )
    assert len(auditor.violations) == 3
    # non-syncer writers are out of scope for the tenancy checks
    auditor.record(AuditEntry("super", 4, "Added", pod_b, "scheduler"))
    assert len(auditor.violations) == 3


def test_foreign_super_namespaces_are_ignored(rig):
    seed_workload(rig)
    infra = ObjectKey(Kind.POD, "infra", "agent")
    rig.super_store.create(infra, spec=PodSpec(node_name="node-1"), provenance="ops")
    rig.super_store.update(
        infra, status=PodStatus(phase="Running", ready=True, ready_at=0.0), provenance="ops"
    )
    rig.settle()
    rig.syncer.scan_tenant("ta")
    rig.settle()
    assert rig.super_store.try_get(infra) is not None  # never GCed as an orphan
    assert rig.auditor.violations == []
