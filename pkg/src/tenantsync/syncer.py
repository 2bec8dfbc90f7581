"""Central synchronization service between tenant stores and the super store.

Two reconciliation directions, each fed by a weighted fair queue:

* downward: tenant object specs are projected into the super store under
  mangled namespaces, with origin annotations for the reverse mapping. A
  shared admission bucket throttles writes, so under load the queue wait
  (not per-item work) dominates latency.
* upward: pod status and node heartbeats flow back to the owning tenant,
  with physical node names translated to per-tenant virtual node objects.

Reconcilers are level-based: each pass recomputes the desired outcome from
the authoritative stores, so duplicate or dropped notifications only affect
when work happens, never what state it converges to. A per-tenant periodic
scan re-enqueues any divergence that event delivery missed.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable

from .engine import ActorGen, Engine, Sleep, TokenBucket
from .errors import (
    AlreadyExistsError,
    ConflictError,
    NotFoundError,
    RateLimitedError,
)
from .fairqueue import FairQueue, wait_for_item
from .informer import Informer, LagPolicy
from .model import (
    DOWNWARD_KINDS,
    Kind,
    ObjectKey,
    TenantRecord,
    TenantRegistry,
    mangle_namespace,
)
from .audit import downward_provenance, upward_provenance
from .store import EventType, Store, VersionedObject

ORIGIN_TENANT = "origin-tenant"
ORIGIN_NAMESPACE = "origin-namespace"
ORIGIN_NAME = "origin-name"
ORIGIN_UID = "origin-uid"

# recorder mark fields used along the pod create path
MARK_DWS_ENQ = "dws_enq"
MARK_DWS_DEQ = "dws_deq"
MARK_DWS_DONE = "dws_done"
MARK_UWS_ENQ = "uws_enq"
MARK_UWS_DEQ = "uws_deq"
MARK_READY_TENANT = "ready_tenant"


@dataclass
class SyncerConfig:
    downward_workers: int = 20
    upward_workers: int = 100
    fair_queuing: bool = True
    scan_interval: float = 60.0
    backoff_base: float = 0.010
    backoff_factor: float = 2.0
    backoff_cap: float = 5.0
    downward_process_cost: float = 0.001
    upward_process_cost: float = 0.001
    # write admission toward the super store; None disables throttling
    downward_admission_rate: float | None = 410.0
    downward_admission_burst: int = 40
    tenant_lag: LagPolicy = field(default_factory=LagPolicy)


@dataclass
class TenantState:
    record: TenantRecord
    store: Store
    informer: Informer


@dataclass(frozen=True)
class ProxyTarget:
    """Where a tenant-facing node agent should forward a pod request."""

    tenant_id: str
    super_key: ObjectKey
    node: str | None


class Syncer:
    def __init__(
        self,
        engine: Engine,
        super_store: Store,
        hub: Informer,
        registry: TenantRegistry,
        config: SyncerConfig | None = None,
        recorder=None,
        service_epoch_provider: Callable[[str], int] | None = None,
    ):
        self.engine = engine
        self.super_store = super_store
        self.hub = hub
        self.registry = registry
        self.config = config or SyncerConfig()
        self.recorder = recorder
        self.service_epoch_provider = service_epoch_provider or (lambda tenant_id: 0)
        fair = self.config.fair_queuing
        self.down_q = FairQueue(engine, fair=fair, name="downward")
        self.up_q = FairQueue(engine, fair=fair, name="upward")
        self._admission = TokenBucket(
            engine, self.config.downward_admission_rate, self.config.downward_admission_burst
        )
        self._tenants: dict[str, TenantState] = {}
        self._vnodes: dict[str, dict[str, ObjectKey]] = {}  # tenant -> phys -> vnode key
        self._pod_refs: dict[tuple[str, str], set[ObjectKey]] = {}  # (tenant, phys) -> pods
        self._node_tenants: dict[str, set[str]] = {}  # phys -> tenants with pods there
        self._attempts: dict[tuple, int] = {}
        self.op_counts: Counter = Counter()
        self.dropped_foreign = 0
        self.beats_dropped = 0
        self.restarts = 0
        self.scan_log: list[tuple[float, str, int]] = []
        hub.add_handler(Kind.POD, self._on_super_pod)
        hub.add_handler(Kind.NODE, self._on_super_node)

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        """Spawn the worker pools (informers are spawned per tenant)."""
        for i in range(self.config.downward_workers):
            self.engine.spawn(self._downward_worker(), name=f"dws-{i}")
        for i in range(self.config.upward_workers):
            self.engine.spawn(self._upward_worker(), name=f"uws-{i}")

    def register_tenant(self, record: TenantRecord, store: Store) -> TenantState:
        self.registry.register(record)
        record.store_handle = store
        self.down_q.register_tenant(record.tenant_id, record.weight)
        self.up_q.register_tenant(record.tenant_id, record.weight)
        informer = Informer(
            self.engine,
            store,
            DOWNWARD_KINDS,
            lag=self.config.tenant_lag,
            name=f"informer:{store.name}",
        )
        for kind in DOWNWARD_KINDS:
            informer.add_handler(kind, self._tenant_handler(record.tenant_id))
        state = TenantState(record, store, informer)
        self._tenants[record.tenant_id] = state
        self.engine.spawn(informer.run(), name=informer.name)
        self.engine.spawn(self._scan_loop(record.tenant_id), name=f"scan:{record.tenant_id}")
        return state

    def unregister_tenant(self, tenant_id: str) -> int:
        """Detach a tenant and garbage-collect its super-store objects."""
        state = self._tenants.pop(tenant_id, None)
        if state is None:
            raise NotFoundError(f"tenant {tenant_id!r} not attached")
        state.informer.stop()
        self.down_q.remove_tenant(tenant_id)
        self.up_q.remove_tenant(tenant_id)
        removed = 0
        for kind in DOWNWARD_KINDS:
            objs, _ = self.super_store.list(kind)
            for obj in objs:
                if self._super_owner(obj.key) == tenant_id:
                    try:
                        self.super_store.delete(
                            obj.key, provenance=downward_provenance(tenant_id)
                        )
                        removed += 1
                    except NotFoundError:
                        pass
        # drop bookkeeping after GC so demangling still worked above
        self.registry.unregister(tenant_id)
        self._vnodes.pop(tenant_id, None)
        for key in [k for k in self._pod_refs if k[0] == tenant_id]:
            del self._pod_refs[key]
        for tenants in self._node_tenants.values():
            tenants.discard(tenant_id)
        self._attempts = {k: v for k, v in self._attempts.items() if k[1] != tenant_id}
        return removed

    def set_tenant_weight(self, tenant_id: str, weight: int) -> None:
        self.registry.get(tenant_id).weight = weight
        self.down_q.set_weight(tenant_id, weight)
        self.up_q.set_weight(tenant_id, weight)

    def restart(self) -> None:
        """Resync as after a process restart: one list per informer, then
        diff-driven reconciliation, without replaying the event history."""
        self.restarts += 1
        self.hub.force_relist()
        for state in self._tenants.values():
            state.informer.force_relist()

    # -- event handlers (run on informer actors) -------------------------

    def _tenant_handler(self, tenant_id: str):
        def handle(etype: EventType, obj: VersionedObject) -> None:
            if obj.key.kind is Kind.POD and etype is EventType.ADDED:
                self._mark(tenant_id, obj.key.namespace, obj.key.name, MARK_DWS_ENQ)
            self.down_q.add(tenant_id, obj.key)

        return handle

    def _on_super_pod(self, etype: EventType, obj: VersionedObject) -> None:
        owner = self.registry.try_demangle_namespace(obj.key.namespace)
        if owner is None:
            return  # not a synced pod (infrastructure or direct super usage)
        tenant_id = owner[0]
        phys = obj.spec.node_name if obj.spec else ""
        if etype is EventType.DELETED:
            if phys:
                self._ref_remove(tenant_id, phys, obj.key)
            return
        if phys:
            self._ref_add(tenant_id, phys, obj.key)
        if obj.status is not None and obj.status.ready:
            ns = obj.annotations.get(ORIGIN_NAMESPACE)
            name = obj.annotations.get(ORIGIN_NAME)
            if ns and name:
                self._mark(tenant_id, ns, name, MARK_UWS_ENQ)
            self.up_q.add(tenant_id, ("pod-status", obj.key))

    def _on_super_node(self, etype: EventType, obj: VersionedObject) -> None:
        if etype is EventType.DELETED:
            return
        phys = obj.key.name
        for tenant_id in self._node_tenants.get(phys, ()):
            self.up_q.add(tenant_id, ("node-beat", phys))

    def _ref_add(self, tenant_id: str, phys: str, key: ObjectKey) -> None:
        refs = self._pod_refs.setdefault((tenant_id, phys), set())
        if not refs:
            self._node_tenants.setdefault(phys, set()).add(tenant_id)
        refs.add(key)

    def _ref_remove(self, tenant_id: str, phys: str, key: ObjectKey) -> None:
        refs = self._pod_refs.get((tenant_id, phys))
        if refs is None:
            return
        refs.discard(key)
        if not refs:
            self._node_tenants.get(phys, set()).discard(tenant_id)
            self.up_q.add(tenant_id, ("vnode-gc", phys))

    # -- downward reconciliation -----------------------------------------

    def _mangled_key(self, record: TenantRecord, key: ObjectKey) -> ObjectKey:
        if key.kind is Kind.NAMESPACE:
            return ObjectKey(Kind.NAMESPACE, "", mangle_namespace(record, key.name))
        return ObjectKey(key.kind, mangle_namespace(record, key.namespace), key.name)

    def _super_owner(self, key: ObjectKey) -> str | None:
        mangled = key.name if key.kind is Kind.NAMESPACE else key.namespace
        owner = self.registry.try_demangle_namespace(mangled)
        return owner[0] if owner else None

    def _tenant_key_for(self, record: TenantRecord, super_key: ObjectKey) -> ObjectKey | None:
        owner = self.registry.try_demangle_namespace(
            super_key.name if super_key.kind is Kind.NAMESPACE else super_key.namespace
        )
        if owner is None or owner[0] != record.tenant_id:
            return None
        if super_key.kind is Kind.NAMESPACE:
            return ObjectKey(Kind.NAMESPACE, "", owner[1])
        return ObjectKey(super_key.kind, owner[1], super_key.name)

    def _project(
        self,
        record: TenantRecord,
        desired: VersionedObject,
        current: VersionedObject | None,
    ):
        """Desired super-side payload for a tenant object."""
        annotations = dict(desired.annotations)
        annotations[ORIGIN_TENANT] = record.tenant_id
        annotations[ORIGIN_NAMESPACE] = desired.key.namespace
        annotations[ORIGIN_NAME] = desired.key.name
        annotations[ORIGIN_UID] = desired.uid
        spec = desired.spec
        if desired.key.kind is Kind.POD:
            # placement and the admission epoch are owned by this side
            node = current.spec.node_name if current is not None else ""
            epoch = (
                current.spec.service_epoch_at_admission
                if current is not None
                else self.service_epoch_provider(record.tenant_id)
            )
            spec = replace(spec, node_name=node, service_epoch_at_admission=epoch)
        return spec, dict(desired.labels), annotations

    def _downward_plan(self, tenant_id: str, key: ObjectKey) -> str | None:
        """What a reconcile pass would do right now; None means nothing."""
        state = self._tenants.get(tenant_id)
        if state is None:
            return None
        desired = state.store.try_get(key)
        mkey = self._mangled_key(state.record, key)
        current = self.super_store.try_get(mkey)
        if desired is None:
            return "delete" if current is not None else None
        if current is None:
            return "create"
        if current.annotations.get(ORIGIN_UID) != desired.uid:
            return "recreate"
        spec, labels, annotations = self._project(state.record, desired, current)
        if (
            current.spec == spec
            and dict(current.labels) == labels
            and dict(current.annotations) == annotations
        ):
            return None
        return "update"

    def _apply_downward(self, tenant_id: str, key: ObjectKey) -> str:
        state = self._tenants.get(tenant_id)
        if state is None:
            return "noop"
        record = state.record
        prov = downward_provenance(tenant_id)
        desired = state.store.try_get(key)
        mkey = self._mangled_key(record, key)
        current = self.super_store.try_get(mkey)
        if desired is None:
            if current is None:
                return "noop"
            self.super_store.delete(mkey, provenance=prov)
            self.op_counts["down-deleted"] += 1
            return "deleted"
        if current is not None and current.annotations.get(ORIGIN_UID) != desired.uid:
            # same name, different incarnation: replace wholesale
            self.super_store.delete(mkey, provenance=prov)
            current = None
            self.op_counts["down-replaced"] += 1
        spec, labels, annotations = self._project(record, desired, current)
        if current is None:
            self.super_store.create(
                mkey, spec=spec, labels=labels, annotations=annotations, provenance=prov
            )
            self.op_counts["down-created"] += 1
            return "created"
        if (
            current.spec == spec
            and dict(current.labels) == labels
            and dict(current.annotations) == annotations
        ):
            return "noop"
        self.super_store.update(
            mkey,
            expected_version=current.resource_version,
            spec=spec,
            labels=labels,
            annotations=annotations,
            provenance=prov,
        )
        self.op_counts["down-updated"] += 1
        return "updated"

    def _downward_worker(self) -> ActorGen:
        queue = self.down_q
        while True:
            if not queue.has_pending():
                yield from wait_for_item(queue)
                continue
            item = queue.get()
            if item is None:
                continue
            tenant_id, key = item
            try:
                if self._downward_plan(tenant_id, key) is not None:
                    yield from self._admission.acquire_reserved()
                    if key.kind is Kind.POD:
                        self._mark(tenant_id, key.namespace, key.name, MARK_DWS_DEQ)
                    yield Sleep(self.config.downward_process_cost)
                    self._apply_downward(tenant_id, key)
                    if key.kind is Kind.POD:
                        self._mark(tenant_id, key.namespace, key.name, MARK_DWS_DONE)
                    self._attempts.pop(("d", tenant_id, key), None)
            except (ConflictError, RateLimitedError, AlreadyExistsError, NotFoundError) as err:
                self._schedule_retry("d", tenant_id, key, err)
            finally:
                queue.done(item)

    # -- upward reconciliation -------------------------------------------

    def ensure_vnode(self, record: TenantRecord, phys: str) -> ObjectKey:
        """Create the tenant-side stand-in for a physical node, once."""
        vmap = self._vnodes.setdefault(record.tenant_id, {})
        if phys in vmap:
            return vmap[phys]
        vkey = ObjectKey(Kind.NODE, "", f"vn-{phys}")
        sup = self.super_store.try_get(ObjectKey(Kind.NODE, "", phys))
        spec = {"physical": phys}
        status = None
        if sup is not None:
            spec.update(sup.spec or {})
            status = sup.status
        try:
            record.store_handle.create(
                vkey,
                spec=spec,
                status=status,
                provenance=upward_provenance(record.tenant_id),
            )
            self.op_counts["vnode-created"] += 1
        except AlreadyExistsError:
            pass
        vmap[phys] = vkey
        return vkey

    def _upward_pod(self, record: TenantRecord, super_key: ObjectKey) -> str:
        sup = self.super_store.try_get(super_key)
        if sup is None or sup.status is None or not sup.status.ready:
            return "noop"
        owner = self.registry.try_demangle_namespace(super_key.namespace)
        if owner is None or owner[0] != record.tenant_id:
            self.dropped_foreign += 1
            return "dropped"
        ns = sup.annotations.get(ORIGIN_NAMESPACE)
        name = sup.annotations.get(ORIGIN_NAME)
        if not ns or not name:
            self.dropped_foreign += 1
            return "dropped"
        tkey = ObjectKey(Kind.POD, ns, name)
        cur = record.store_handle.try_get(tkey)
        if cur is None or cur.uid != sup.annotations.get(ORIGIN_UID):
            return "noop"  # tenant deleted or recreated it; downward will settle
        phys = sup.spec.node_name
        new_spec = cur.spec
        if phys:
            vkey = self.ensure_vnode(record, phys)
            if cur.spec.node_name != vkey.name:
                new_spec = replace(cur.spec, node_name=vkey.name)
        if cur.status == sup.status and new_spec is cur.spec:
            return "noop"
        record.store_handle.update(
            tkey,
            expected_version=cur.resource_version,
            spec=new_spec,
            status=sup.status,
            provenance=upward_provenance(record.tenant_id),
        )
        self.op_counts["up-status"] += 1
        self._mark(record.tenant_id, ns, name, MARK_READY_TENANT)
        return "updated"

    def _upward_beat(self, record: TenantRecord, phys: str) -> str:
        if not self._pod_refs.get((record.tenant_id, phys)):
            return "noop"
        vkey = self._vnodes.get(record.tenant_id, {}).get(phys)
        if vkey is None:
            return "noop"  # vnode not materialized yet; next beat covers it
        sup = self.super_store.try_get(ObjectKey(Kind.NODE, "", phys))
        if sup is None:
            return "noop"
        try:
            record.store_handle.update(
                vkey,
                status=sup.status,
                provenance=upward_provenance(record.tenant_id),
            )
            self.op_counts["beat-relayed"] += 1
        except RateLimitedError:
            self.beats_dropped += 1  # heartbeats are best effort under throttle
        except NotFoundError:
            self._vnodes.get(record.tenant_id, {}).pop(phys, None)
        return "beat"

    def _upward_gc(self, record: TenantRecord, phys: str) -> str:
        if self._pod_refs.get((record.tenant_id, phys)):
            return "noop"  # pods came back before we got here
        vmap = self._vnodes.get(record.tenant_id, {})
        vkey = vmap.get(phys)
        if vkey is None:
            return "noop"
        try:
            record.store_handle.delete(vkey, provenance=upward_provenance(record.tenant_id))
            self.op_counts["vnode-deleted"] += 1
        except NotFoundError:
            pass
        vmap.pop(phys, None)
        return "deleted"

    def _apply_upward(self, tenant_id: str, marker: tuple) -> str:
        state = self._tenants.get(tenant_id)
        if state is None:
            return "noop"
        op, payload = marker
        if op == "pod-status":
            return self._upward_pod(state.record, payload)
        if op == "node-beat":
            return self._upward_beat(state.record, payload)
        if op == "vnode-gc":
            return self._upward_gc(state.record, payload)
        raise ValueError(f"unknown upward op {op!r}")

    def _upward_worker(self) -> ActorGen:
        queue = self.up_q
        while True:
            if not queue.has_pending():
                yield from wait_for_item(queue)
                continue
            item = queue.get()
            if item is None:
                continue
            tenant_id, marker = item
            if marker[0] == "pod-status":
                sup = self.super_store.try_get(marker[1])
                if sup is not None:
                    ns = sup.annotations.get(ORIGIN_NAMESPACE)
                    name = sup.annotations.get(ORIGIN_NAME)
                    if ns and name:
                        self._mark(tenant_id, ns, name, MARK_UWS_DEQ)
            try:
                yield Sleep(self.config.upward_process_cost)
                self._apply_upward(tenant_id, marker)
                self._attempts.pop(("u", tenant_id, marker), None)
            except (ConflictError, RateLimitedError, AlreadyExistsError) as err:
                self._schedule_retry("u", tenant_id, marker, err)
            finally:
                queue.done(item)

    # -- retries ---------------------------------------------------------

    def _schedule_retry(self, direction: str, tenant_id: str, key: Hashable, err) -> None:
        slot = (direction, tenant_id, key)
        attempt = self._attempts.get(slot, 0) + 1
        self._attempts[slot] = attempt
        delay = min(
            self.config.backoff_cap,
            self.config.backoff_base * self.config.backoff_factor ** (attempt - 1),
        )
        if isinstance(err, RateLimitedError):
            delay = max(delay, err.retry_after)
        queue = self.down_q if direction == "d" else self.up_q
        self.op_counts[f"retry-{direction}"] += 1
        self.engine.call_later(delay, lambda: queue.add(tenant_id, key))

    # -- periodic scans --------------------------------------------------

    def scan_tenant(self, tenant_id: str) -> int:
        """Compare stores directly and enqueue every divergence found."""
        state = self._tenants.get(tenant_id)
        if state is None:
            return 0
        found = 0
        seen: set[ObjectKey] = set()
        for kind in DOWNWARD_KINDS:
            objs, _ = state.store.list(kind)
            for obj in objs:
                seen.add(obj.key)
                if self._downward_plan(tenant_id, obj.key) is not None:
                    if self.down_q.add(tenant_id, obj.key):
                        found += 1
        for kind in DOWNWARD_KINDS:
            objs, _ = self.super_store.list(kind)
            for obj in objs:
                tkey = self._tenant_key_for(state.record, obj.key)
                if tkey is None or tkey in seen:
                    continue
                if self._downward_plan(tenant_id, tkey) is not None:
                    if self.down_q.add(tenant_id, tkey):
                        found += 1
        pods, _ = self.super_store.list(Kind.POD)
        for sup in pods:
            if self._super_owner(sup.key) != tenant_id:
                continue
            if sup.status is None or not sup.status.ready:
                continue
            ns = sup.annotations.get(ORIGIN_NAMESPACE)
            name = sup.annotations.get(ORIGIN_NAME)
            if not ns or not name:
                continue
            cur = state.store.try_get(ObjectKey(Kind.POD, ns, name))
            if (
                cur is not None
                and cur.uid == sup.annotations.get(ORIGIN_UID)
                and (cur.status is None or not cur.status.ready)
            ):
                if self.up_q.add(tenant_id, ("pod-status", sup.key)):
                    found += 1
        for phys in list(self._vnodes.get(tenant_id, {})):
            if not self._pod_refs.get((tenant_id, phys)):
                if self.up_q.add(tenant_id, ("vnode-gc", phys)):
                    found += 1
        self.scan_log.append((self.engine.now(), tenant_id, found))
        return found

    def _scan_loop(self, tenant_id: str) -> ActorGen:
        rng = self.engine.rng(f"scan:{tenant_id}")
        # spread first scans out so a fleet of tenants does not scan in step
        yield Sleep(self.config.scan_interval * rng.uniform(0.5, 1.5))
        while tenant_id in self.registry:
            self.scan_tenant(tenant_id)
            yield Sleep(self.config.scan_interval)

    # -- node agent resolution -------------------------------------------

    def resolve_proxy_target(
        self, credential_fingerprint: str, namespace: str, pod_name: str
    ) -> ProxyTarget:
        """Map a tenant credential plus pod reference to the physical target."""
        record = self.registry.resolve_by_credential(credential_fingerprint)
        super_key = ObjectKey(Kind.POD, mangle_namespace(record, namespace), pod_name)
        sup = self.super_store.try_get(super_key)
        node = sup.spec.node_name or None if sup is not None else None
        return ProxyTarget(record.tenant_id, super_key, node)

    # -- tracing ---------------------------------------------------------

    def _mark(self, tenant_id: str, namespace: str, name: str, field_name: str) -> None:
        if self.recorder is not None:
            self.recorder.mark(field_name, tenant_id, namespace, name, self.engine.now())
