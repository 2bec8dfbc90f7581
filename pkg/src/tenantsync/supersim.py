"""Super-cluster behavior: scheduling, nodes, kubelets, service routing.

The scheduler is deliberately the narrow component of the pipeline: one
sequential loop spending a fixed service time per pod, which caps placement
throughput no matter how many syncer workers feed it. Kubelets are mocked
down to the two things that matter here, sandbox existence and readiness
gating on routing-rule injection. The routing manager models the node-side
proxy rule tables: per-scope rule images with a generation counter, guest
tables injected into sandboxes at a fixed per-rule cost, and a periodic
drift scan.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field, replace

from .engine import ActorGen, Engine, Sleep, wait_until
from .errors import ConflictError, NotFoundError
from .informer import Informer
from .model import Kind, ObjectKey, PodStatus, TenantRegistry
from .store import EventType, Store, VersionedObject


# -- scheduler -----------------------------------------------------------


@dataclass
class SchedulerConfig:
    service_time: float = 0.0025  # seconds per placement decision
    retry_delay: float = 0.1  # re-queue delay when nothing is feasible
    bind_attempts: int = 5


@dataclass
class _NodeState:
    name: str
    capacity: int
    load: int = 0
    label_counts: Counter = field(default_factory=Counter)
    anti_counts: Counter = field(default_factory=Counter)


@dataclass
class _Assignment:
    node: str
    uid: str
    labels: tuple[tuple[str, str], ...]
    anti: frozenset


class Scheduler:
    """Single sequential placement loop over a FIFO of unbound pods."""

    def __init__(
        self,
        engine: Engine,
        store: Store,
        informer: Informer,
        config: SchedulerConfig | None = None,
    ):
        self.engine = engine
        self.store = store
        self.config = config or SchedulerConfig()
        self.signal = engine.signal()
        self._queue: deque[ObjectKey] = deque()
        self._pending: set[ObjectKey] = set()
        self._nodes: dict[str, _NodeState] = {}
        self._node_order: list[str] = []
        self._assigned: dict[ObjectKey, _Assignment] = {}
        self.bind_times: list[float] = []
        self.busy_time = 0.0
        self.conflicts = 0
        self.infeasible_requeues = 0
        informer.add_handler(Kind.NODE, self._on_node)
        informer.add_handler(Kind.POD, self._on_pod)

    # handlers run inside the informer actor

    def _on_node(self, etype: EventType, obj: VersionedObject) -> None:
        name = obj.key.name
        if etype is EventType.DELETED:
            self._nodes.pop(name, None)
            self._node_order = sorted(self._nodes)
        elif name not in self._nodes:
            self._nodes[name] = _NodeState(name, int(obj.spec.get("capacity", 0)))
            self._node_order = sorted(self._nodes)

    def _on_pod(self, etype: EventType, obj: VersionedObject) -> None:
        key = obj.key
        if etype is EventType.DELETED:
            self._pending.discard(key)
            self._unassign(key)
            return
        if obj.spec.node_name == "" and not obj.deletion_marked:
            self._enqueue(key)

    def _enqueue(self, key: ObjectKey) -> None:
        if key in self._pending or key in self._assigned:
            return
        self._pending.add(key)
        self._queue.append(key)
        self.signal.notify_all()

    def _requeue_later(self, key: ObjectKey) -> None:
        self.infeasible_requeues += 1
        self.engine.call_later(self.config.retry_delay, lambda: self._enqueue(key))

    def run(self) -> ActorGen:
        while True:
            if not self._queue:
                yield from wait_until(self.signal, lambda: bool(self._queue))
                continue
            key = self._queue.popleft()
            self._pending.discard(key)
            yield Sleep(self.config.service_time)
            self.busy_time += self.config.service_time
            self._place(key)

    def _place(self, key: ObjectKey) -> None:
        obj = self.store.try_get(key)
        if obj is None or obj.spec.node_name or key in self._assigned:
            return
        node = self._select(obj)
        if node is None:
            self._requeue_later(key)
            return
        for _ in range(self.config.bind_attempts):
            try:
                bound = replace(obj.spec, node_name=node.name)
                self.store.update(
                    key,
                    expected_version=obj.resource_version,
                    spec=bound,
                    provenance="scheduler",
                )
            except ConflictError:
                self.conflicts += 1
                obj = self.store.try_get(key)
                if obj is None or obj.spec.node_name:
                    return
                continue
            except NotFoundError:
                return
            self._assign(key, obj, node)
            self.bind_times.append(self.engine.now())
            return
        self._requeue_later(key)

    def _feasible(self, node: _NodeState, obj: VersionedObject) -> bool:
        if node.load >= node.capacity:
            return False
        for term in obj.spec.anti_affinity:
            if node.label_counts[term] > 0:
                return False
        for pair in obj.labels.items():
            if node.anti_counts[pair] > 0:
                return False
        return True

    def _select(self, obj: VersionedObject) -> _NodeState | None:
        best = None
        for name in self._node_order:
            node = self._nodes[name]
            if self._feasible(node, obj) and (best is None or node.load < best.load):
                best = node
        return best

    def _assign(self, key: ObjectKey, obj: VersionedObject, node: _NodeState) -> None:
        labels = tuple(obj.labels.items())
        node.load += 1
        for pair in labels:
            node.label_counts[pair] += 1
        for term in obj.spec.anti_affinity:
            node.anti_counts[term] += 1
        self._assigned[key] = _Assignment(node.name, obj.uid, labels, obj.spec.anti_affinity)

    def _unassign(self, key: ObjectKey) -> None:
        info = self._assigned.pop(key, None)
        if info is None:
            return
        node = self._nodes.get(info.node)
        if node is None:
            return
        node.load -= 1
        for pair in info.labels:
            node.label_counts[pair] -= 1
        for term in info.anti:
            node.anti_counts[term] -= 1

    # introspection

    def node_load(self) -> dict[str, int]:
        return {name: self._nodes[name].load for name in self._node_order}

    def placement_of(self, key: ObjectKey) -> str | None:
        info = self._assigned.get(key)
        return info.node if info else None

    def queue_depth(self) -> int:
        return len(self._queue)


# -- nodes ---------------------------------------------------------------


class NodeProvider:
    """Creates the physical node objects and keeps their heartbeats fresh."""

    def __init__(
        self,
        engine: Engine,
        store: Store,
        count: int = 100,
        capacity: int = 110,
        heartbeat_period: float = 10.0,
    ):
        self.engine = engine
        self.store = store
        self.count = count
        self.capacity = capacity
        self.heartbeat_period = heartbeat_period
        self.node_names = [f"node-{i:04d}" for i in range(count)]
        self.beats = 0

    def create_nodes(self) -> None:
        for name in self.node_names:
            self.store.create(
                ObjectKey(Kind.NODE, "", name),
                spec={"capacity": self.capacity},
                status={"beat": 0, "at": self.engine.now()},
                provenance="node-provider",
            )

    def run_heartbeats(self) -> ActorGen:
        while True:
            yield Sleep(self.heartbeat_period)
            self.beats += 1
            now = self.engine.now()
            for name in self.node_names:
                try:
                    self.store.update(
                        ObjectKey(Kind.NODE, "", name),
                        status={"beat": self.beats, "at": now},
                        provenance="node-provider",
                    )
                except NotFoundError:
                    pass


# -- routing -------------------------------------------------------------


@dataclass
class Sandbox:
    pod_key: ObjectKey
    node: str
    scope: str
    epoch: int = 0  # generation of the rule image last applied
    rules: dict[str, tuple[str, ...]] = field(default_factory=dict)
    syncing: bool = False
    alive: bool = True


class RoutingManager:
    """Models per-node proxy rule management for guest pods.

    Each tenant scope has a rule image (service name to endpoint addresses)
    and a generation counter that starts at 1 for the initial empty image
    and bumps on every service or endpoints change. Sandboxes carry a guest
    copy applied at a fixed per-rule cost; a pod admitted at generation g
    may not report ready until its sandbox has applied generation >= g.
    """

    def __init__(
        self,
        engine: Engine,
        informer: Informer,
        registry: TenantRegistry,
        rule_latency: float = 0.010,
        scan_period: float = 5.0,
        scan_cost_per_pod: float = 0.010,
    ):
        self.engine = engine
        self.registry = registry
        self.rule_latency = rule_latency
        self.scan_period = scan_period
        self.scan_cost_per_pod = scan_cost_per_pod
        self.signal = engine.signal()
        self._generation: dict[str, int] = {}
        self._images: dict[str, dict[str, tuple[str, ...]]] = {}
        self._sandboxes: dict[ObjectKey, Sandbox] = {}
        self._by_scope: dict[str, set[ObjectKey]] = {}
        self._route_rng = engine.rng("route-lookup")
        self.injections = 0
        self.lookups = 0
        self.scans = 0
        self.scan_durations: list[float] = []
        informer.add_handler(Kind.SERVICE, self._on_rule_source)
        informer.add_handler(Kind.ENDPOINTS, self._on_rule_source)

    def scope_for_namespace(self, namespace: str) -> str:
        """Tenant id when the namespace carries a prefix, else the raw name."""
        owner = self.registry.try_demangle_namespace(namespace)
        return owner[0] if owner else namespace

    def _ensure_scope(self, scope: str) -> int:
        if scope not in self._generation:
            self._generation[scope] = 1  # generation 1 is the empty image
            self._images[scope] = {}
        return self._generation[scope]

    def current_generation(self, scope: str) -> int:
        return self._ensure_scope(scope)

    def rules_for_scope(self, scope: str) -> dict[str, tuple[str, ...]]:
        self._ensure_scope(scope)
        return dict(self._images[scope])

    # -- rule sources ----------------------------------------------------

    def _on_rule_source(self, etype: EventType, obj: VersionedObject) -> None:
        scope = self.scope_for_namespace(obj.key.namespace)
        self._ensure_scope(scope)
        image = self._images[scope]
        name = obj.key.name
        if obj.key.kind is Kind.SERVICE:
            if etype is EventType.DELETED:
                image.pop(name, None)
            else:
                image.setdefault(name, ())
        else:  # endpoints carry the addresses for the service of the same name
            if etype is EventType.DELETED:
                if name in image:
                    image[name] = ()
            else:
                image[name] = tuple((obj.spec or {}).get("addresses", ()))
        self._generation[scope] += 1
        for key in self._by_scope.get(scope, ()):
            self._maybe_sync(self._sandboxes[key])

    # -- sandboxes -------------------------------------------------------

    def register_sandbox(self, pod_key: ObjectKey, node: str, scope: str) -> Sandbox:
        gen = self._ensure_scope(scope)
        sandbox = Sandbox(pod_key, node, scope)
        self._sandboxes[pod_key] = sandbox
        self._by_scope.setdefault(scope, set()).add(pod_key)
        if not self._images[scope]:
            sandbox.epoch = gen  # applying an empty image costs nothing
        else:
            self._maybe_sync(sandbox)
        return sandbox

    def remove_sandbox(self, pod_key: ObjectKey) -> None:
        sandbox = self._sandboxes.pop(pod_key, None)
        if sandbox is None:
            return
        sandbox.alive = False
        self._by_scope.get(sandbox.scope, set()).discard(pod_key)
        self.signal.notify_all()

    def get_sandbox(self, pod_key: ObjectKey) -> Sandbox | None:
        return self._sandboxes.get(pod_key)

    def sandbox_count(self) -> int:
        return len(self._sandboxes)

    @staticmethod
    def gate_clear(sandbox: Sandbox, admission_epoch: int) -> bool:
        return sandbox.epoch >= admission_epoch

    def _maybe_sync(self, sandbox: Sandbox) -> None:
        if sandbox.syncing or not sandbox.alive:
            return
        if sandbox.epoch >= self._generation[sandbox.scope]:
            return
        sandbox.syncing = True
        self.engine.spawn(
            self._injector(sandbox), name=f"inject:{sandbox.pod_key.full_name}"
        )

    def _injector(self, sandbox: Sandbox) -> ActorGen:
        try:
            while sandbox.alive and sandbox.epoch < self._generation[sandbox.scope]:
                target = self._generation[sandbox.scope]
                image = dict(self._images[sandbox.scope])
                cost = self.rule_latency * len(image)
                if cost > 0:
                    yield Sleep(cost)
                if not sandbox.alive:
                    break
                sandbox.rules = image
                sandbox.epoch = target
                self.injections += 1
                self.signal.notify_all()
        finally:
            sandbox.syncing = False

    # -- data path -------------------------------------------------------

    def route_lookup(self, pod_key: ObjectKey, service_name: str) -> str:
        sandbox = self._sandboxes.get(pod_key)
        if sandbox is None:
            raise NotFoundError(f"no sandbox for {pod_key.text()}")
        addresses = sandbox.rules.get(service_name)
        if not addresses:
            raise NotFoundError(
                f"no routing rule for {service_name!r} in sandbox {pod_key.full_name}"
            )
        self.lookups += 1
        return addresses[self._route_rng.randrange(len(addresses))]

    # -- drift repair ----------------------------------------------------

    def run_scans(self) -> ActorGen:
        while True:
            yield Sleep(self.scan_period)
            started = self.engine.now()
            count = len(self._sandboxes)
            if count:
                yield Sleep(self.scan_cost_per_pod * count)
            self.scan_durations.append(self.engine.now() - started)
            self.scans += 1
            for sandbox in list(self._sandboxes.values()):
                self._maybe_sync(sandbox)


# -- kubelet -------------------------------------------------------------


class MockKubelet:
    """Reacts to pod bindings: creates the sandbox, gates on routing rules,
    then reports the pod running and ready."""

    def __init__(self, engine: Engine, store: Store, informer: Informer, routing: RoutingManager):
        self.engine = engine
        self.store = store
        self.routing = routing
        self._active: dict[ObjectKey, str] = {}  # pod key -> uid with a sandbox
        self.started = Counter()  # per node
        self.ready_count = 0
        informer.add_handler(Kind.POD, self._on_pod)

    def _on_pod(self, etype: EventType, obj: VersionedObject) -> None:
        key = obj.key
        if etype is EventType.DELETED:
            if self._active.pop(key, None) is not None:
                self.routing.remove_sandbox(key)
            return
        if not obj.spec.node_name:
            return
        current = self._active.get(key)
        if current == obj.uid:
            return  # sandbox exists; status-only updates land here
        if current is not None:
            self.routing.remove_sandbox(key)  # same name, new incarnation
        self._active[key] = obj.uid
        self.started[obj.spec.node_name] += 1
        scope = self.routing.scope_for_namespace(key.namespace)
        sandbox = self.routing.register_sandbox(key, obj.spec.node_name, scope)
        admission = obj.spec.service_epoch_at_admission
        if self.routing.gate_clear(sandbox, admission):
            self._mark_ready(obj)
        else:
            self.engine.spawn(
                self._gate_waiter(obj, sandbox, admission), name=f"gate:{key.full_name}"
            )

    def _gate_waiter(self, obj: VersionedObject, sandbox: Sandbox, admission: int) -> ActorGen:
        yield from wait_until(
            self.routing.signal,
            lambda: not sandbox.alive or self.routing.gate_clear(sandbox, admission),
        )
        if sandbox.alive and self._active.get(obj.key) == obj.uid:
            self._mark_ready(obj)

    def _mark_ready(self, obj: VersionedObject) -> None:
        try:
            self.store.update(
                obj.key,
                status=PodStatus(phase="Running", ready=True, ready_at=self.engine.now()),
                provenance=f"kubelet:{obj.spec.node_name}",
            )
            self.ready_count += 1
        except NotFoundError:
            pass

    def sandboxes_on(self, node: str) -> int:
        return sum(
            1
            for key in self._active
            if (sb := self.routing.get_sandbox(key)) is not None and sb.node == node
        )
