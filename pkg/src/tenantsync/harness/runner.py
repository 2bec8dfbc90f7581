"""World construction and experiment drivers.

``build_world`` assembles a full deployment for a scenario: the shared
super store with its informer hub, nodes, scheduler, kubelet and routing on
the provider side, plus per-tenant stores attached to the syncer. In
baseline mode the tenant layer is skipped entirely and load generators
write straight into the super store, which gives the no-sync reference
point for throughput comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

from ..audit import IsolationAuditor
from ..engine import ActorGen, Engine, RealtimeEngine, SimEngine, Sleep, wait_until
from ..errors import RateLimitedError
from ..informer import Informer, LagPolicy
from ..model import Kind, ObjectKey, PodSpec, TenantRecord, TenantRegistry
from ..store import EventType, RateLimitPolicy, Store, VersionedObject
from ..supersim import MockKubelet, NodeProvider, RoutingManager, Scheduler, SchedulerConfig
from ..syncer import (
    ORIGIN_NAME,
    ORIGIN_NAMESPACE,
    ORIGIN_TENANT,
    Syncer,
    SyncerConfig,
)
from .report import derive_stats, per_group_stats, per_tenant_stats
from .scenario import GroupSpec, Scenario, fairness_scenario, uniform_scenario
from .tracing import PodTrace, TraceRecorder

ALL_KINDS = tuple(Kind)


@dataclass
class World:
    scenario: Scenario
    engine: Engine
    registry: TenantRegistry
    auditor: IsolationAuditor
    super_store: Store
    hub: Informer
    provider: NodeProvider
    scheduler: Scheduler
    routing: RoutingManager
    kubelet: MockKubelet
    recorder: TraceRecorder
    syncer: Syncer | None
    tenant_stores: dict[str, Store] = dc_field(default_factory=dict)
    samples: list[tuple[float, int, int, int]] = dc_field(default_factory=list)


@dataclass
class RunResult:
    report: dict
    world: World
    traces: list[PodTrace]


def tenant_name(group: GroupSpec, index: int) -> str:
    return f"{group.name}-{index:04d}"


def build_world(scenario: Scenario) -> World:
    if scenario.clock == "sim":
        engine: Engine = SimEngine(seed=scenario.seed)
    else:
        engine = RealtimeEngine(seed=scenario.seed)
    registry = TenantRegistry()
    auditor = IsolationAuditor(registry)
    super_store = Store(engine, "super", rate_limit=None, audit_sink=auditor.record)
    lag = LagPolicy(scenario.lag_min_ms, scenario.lag_max_ms)
    hub = Informer(engine, super_store, ALL_KINDS, lag=lag, name="informer:super")
    provider = NodeProvider(
        engine,
        super_store,
        count=scenario.nodes,
        capacity=scenario.node_capacity,
        heartbeat_period=scenario.heartbeat_period,
    )
    provider.create_nodes()
    scheduler = Scheduler(
        engine,
        super_store,
        hub,
        SchedulerConfig(service_time=1.0 / scenario.scheduler_rate),
    )
    routing = RoutingManager(
        engine, hub, registry, rule_latency=scenario.rule_latency_ms / 1000.0
    )
    kubelet = MockKubelet(engine, super_store, hub, routing)
    recorder = TraceRecorder(engine)
    recorder.expected = scenario.total_pods

    syncer = None
    if not scenario.baseline:
        config = SyncerConfig(
            downward_workers=scenario.downward_workers,
            upward_workers=scenario.upward_workers,
            fair_queuing=scenario.fair_queuing,
            scan_interval=scenario.scan_interval,
            downward_admission_rate=scenario.downward_admission_rate or None,
            downward_admission_burst=scenario.downward_admission_burst,
            tenant_lag=lag,
        )
        syncer = Syncer(
            engine,
            super_store,
            hub,
            registry,
            config,
            recorder=recorder,
            service_epoch_provider=routing.current_generation,
        )
    else:
        hub.add_handler(Kind.POD, _baseline_ready_marker(engine, recorder))

    world = World(
        scenario=scenario,
        engine=engine,
        registry=registry,
        auditor=auditor,
        super_store=super_store,
        hub=hub,
        provider=provider,
        scheduler=scheduler,
        routing=routing,
        kubelet=kubelet,
        recorder=recorder,
        syncer=syncer,
    )

    engine.spawn(hub.run(), name=hub.name)
    engine.spawn(scheduler.run(), name="scheduler")
    engine.spawn(provider.run_heartbeats(), name="heartbeats")
    engine.spawn(routing.run_scans(), name="routing-scan")
    if syncer is not None:
        syncer.start()

    uid_rng = engine.rng("tenant-uids")
    for group in scenario.groups:
        for i in range(group.tenants):
            tid = tenant_name(group, i)
            if syncer is not None:
                record = TenantRecord(
                    tid, format(uid_rng.getrandbits(128), "032x"), weight=group.weight
                )
                store = Store(
                    engine,
                    f"tenant:{tid}",
                    rate_limit=RateLimitPolicy(scenario.store_rate_limit, scenario.store_burst),
                    audit_sink=auditor.record,
                )
                syncer.register_tenant(record, store)
                world.tenant_stores[tid] = store
                target, namespace = store, group.namespace
            else:
                target, namespace = super_store, tid
            engine.spawn(
                _loadgen(world, group, tid, target, namespace), name=f"load:{tid}"
            )
    engine.spawn(_sampler(world), name="sampler")
    return world


def _baseline_ready_marker(engine: Engine, recorder: TraceRecorder):
    def handle(etype: EventType, obj: VersionedObject) -> None:
        if etype is EventType.DELETED or obj.status is None or not obj.status.ready:
            return
        tid = obj.annotations.get(ORIGIN_TENANT)
        if tid:
            recorder.mark(
                "ready_tenant",
                tid,
                obj.annotations[ORIGIN_NAMESPACE],
                obj.annotations[ORIGIN_NAME],
                engine.now(),
            )

    return handle


def _retry_limited(engine: Engine, fn) -> ActorGen:
    """Run a store write, sleeping out rate-limit rejections."""
    while True:
        try:
            fn()
            return
        except RateLimitedError as err:
            yield Sleep(err.retry_after)


def _loadgen(world: World, group: GroupSpec, tid: str, store: Store, namespace: str) -> ActorGen:
    engine = world.engine
    recorder = world.recorder
    provenance = f"loadgen:{tid}"
    baseline = world.scenario.baseline
    if not baseline:
        yield from _retry_limited(
            engine,
            lambda: store.create(
                ObjectKey(Kind.NAMESPACE, "", namespace), provenance=provenance
            ),
        )
    for k in range(group.services):
        sname = f"svc-{k:04d}"
        addresses = [f"10.{(k >> 8) & 255}.{k & 255}.{j}" for j in range(1, 4)]
        yield from _retry_limited(
            engine,
            lambda s=sname: store.create(
                ObjectKey(Kind.SERVICE, namespace, s),
                spec={"port": 80},
                provenance=provenance,
            ),
        )
        yield from _retry_limited(
            engine,
            lambda s=sname, a=addresses: store.create(
                ObjectKey(Kind.ENDPOINTS, namespace, s),
                spec={"addresses": a},
                provenance=provenance,
            ),
        )
    annotations = None
    for i in range(group.pods):
        name = f"pod-{i:04d}"
        if baseline:
            annotations = {
                ORIGIN_TENANT: tid,
                ORIGIN_NAMESPACE: namespace,
                ORIGIN_NAME: name,
            }
        yield from _retry_limited(
            engine,
            lambda n=name, a=annotations: store.create(
                ObjectKey(Kind.POD, namespace, n),
                spec=PodSpec(),
                annotations=a,
                provenance=provenance,
            ),
        )
        recorder.mark("create_tenant", tid, namespace, name, engine.now())
        if group.pattern == "sequential":
            yield from wait_until(
                recorder.signal,
                lambda n=name: recorder.is_ready(tid, namespace, n),
            )


def _sampler(world: World) -> ActorGen:
    while True:
        yield Sleep(0.1)
        down = world.syncer.down_q.pending() if world.syncer else 0
        up = world.syncer.up_q.pending() if world.syncer else 0
        world.samples.append(
            (world.engine.now(), down, up, world.scheduler.queue_depth())
        )


def _fill_super_ready(world: World) -> None:
    for row in world.recorder.rows():
        store = world.tenant_stores.get(row.tenant_id, world.super_store)
        obj = store.try_get(ObjectKey(Kind.POD, row.namespace, row.name))
        if obj is not None and obj.status is not None and obj.status.ready_at is not None:
            world.recorder.set_super_ready(
                row.tenant_id, row.namespace, row.name, obj.status.ready_at
            )


def build_run_report(world: World) -> dict:
    scenario = world.scenario
    recorder = world.recorder
    traces = recorder.rows()
    report = {"scenario": scenario.to_dict()}
    report.update(derive_stats(traces))
    report["pods"] = {"expected": recorder.expected, "completed": recorder.completed}
    report["groups"] = per_group_stats(traces, [g.name for g in scenario.groups])
    report["tenants"] = per_tenant_stats(traces)

    creates = [t.t_create_tenant for t in traces if t.t_create_tenant is not None]
    readies = [t.t_ready_tenant for t in traces if t.t_ready_tenant is not None]
    throughput = {"completed": len(readies)}
    if creates and readies:
        makespan = max(readies) - min(creates)
        throughput.update(
            first_create=min(creates),
            last_ready=max(readies),
            makespan=makespan,
            pods_per_second=(len(readies) / makespan) if makespan > 0 else 0.0,
        )
    report["throughput"] = throughput

    binds = world.scheduler.bind_times
    sched = {
        "binds": len(binds),
        "conflicts": world.scheduler.conflicts,
        "infeasible_requeues": world.scheduler.infeasible_requeues,
    }
    if len(binds) >= 20:
        # rate over the middle 80% of placements, where the loop is busy
        lo = len(binds) // 10
        hi = len(binds) - len(binds) // 10 - 1
        window = binds[hi] - binds[lo]
        if window > 0:
            sched["mid_rate"] = (hi - lo) / window
    report["scheduler"] = sched

    if world.samples:
        report["queues"] = {
            "samples": len(world.samples),
            "max_downward_depth": max(s[1] for s in world.samples),
            "max_upward_depth": max(s[2] for s in world.samples),
            "max_scheduler_depth": max(s[3] for s in world.samples),
        }
    if world.syncer is not None:
        report["syncer"] = {
            "ops": dict(sorted(world.syncer.op_counts.items())),
            "dropped_foreign": world.syncer.dropped_foreign,
            "beats_dropped": world.syncer.beats_dropped,
            "restarts": world.syncer.restarts,
        }
    report["routing"] = {
        "injections": world.routing.injections,
        "lookups": world.routing.lookups,
        "scans": world.routing.scans,
        "sandboxes": world.routing.sandbox_count(),
    }
    report["isolation"] = world.auditor.summary()
    return report


def run_world(world: World) -> RunResult:
    scenario = world.scenario
    engine = world.engine
    if isinstance(engine, SimEngine):
        if world.recorder.expected > 0:
            engine.run(until=world.recorder.all_done, max_time=scenario.watchdog)
        else:
            engine.run_for(1.0)
    else:
        engine.start()
        deadline = time.monotonic() + scenario.time_limit
        while time.monotonic() < deadline and not world.recorder.all_done():
            time.sleep(0.025)
        engine.stop()
        engine.join(2.0)
    _fill_super_ready(world)
    return RunResult(build_run_report(world), world, world.recorder.rows())


def run_scenario(scenario: Scenario) -> RunResult:
    return run_world(build_world(scenario))


# -- canned experiments --------------------------------------------------


def run_fairness_experiment(seed: int = 0, clock: str = "sim", **overrides) -> dict:
    """The same mixed workload with fair queuing on, then off."""
    on = run_scenario(fairness_scenario(seed, True, clock=clock, **overrides))
    off = run_scenario(fairness_scenario(seed, False, clock=clock, **overrides))
    comparison = {}
    for label, result in (("fair_on", on), ("fair_off", off)):
        groups = result.report["groups"]
        comparison[label] = {
            "regular_mean": groups["regular"].get("mean"),
            "regular_p99": groups["regular"].get("p99"),
            "greedy_mean": groups["greedy"].get("mean"),
        }
    return {"fair_on": on.report, "fair_off": off.report, "comparison": comparison}


def run_breakdown(seed: int = 0, tenants: int = 100, pods: int = 100, **overrides):
    from .scenario import breakdown_scenario

    return run_scenario(breakdown_scenario(seed=seed, tenants=tenants, pods=pods, **overrides))


def run_throughput_sweep(
    tenant_counts=(25, 50, 100),
    total_pods: int = 3000,
    seed: int = 0,
    clock: str = "sim",
    **overrides,
) -> dict:
    """Same total load split across different tenant counts."""
    points = []
    for count in tenant_counts:
        pods = total_pods // count
        result = run_scenario(
            uniform_scenario(
                count, pods, seed=seed, name=f"sweep-{count}", clock=clock, **overrides
            )
        )
        points.append(
            {
                "tenants": count,
                "pods": count * pods,
                "pods_per_second": result.report["throughput"].get("pods_per_second"),
                "p99": result.report["latency"].get("p99"),
            }
        )
    rates = [p["pods_per_second"] for p in points if p["pods_per_second"]]
    spread = 0.0
    if rates:
        spread = (max(rates) - min(rates)) / (sum(rates) / len(rates))
    return {"points": points, "relative_spread": spread}
