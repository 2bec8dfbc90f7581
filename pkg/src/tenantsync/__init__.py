"""Multi-tenant control-plane synchronization, simulated end to end.

Tenants run their own object stores; a central syncer projects their
workloads into one shared super cluster through weighted fair queues and
reflects placement and status back, while per-node components handle
sandboxes, virtual nodes and service-routing rules. Everything runs either
on a deterministic virtual clock or in real time with the same actor code.
"""

from .engine import RealtimeEngine, Signal, SimEngine, Sleep, TokenBucket, WaitOn, wait_until
from .errors import (
    AlreadyExistsError,
    AuthenticationUnknownError,
    ConflictError,
    DeadlineExceededError,
    NotFoundError,
    RateLimitedError,
    SyncError,
    ValidationError,
    VersionTooOldError,
)
from .model import (
    CLUSTER_SCOPED_KINDS,
    DOWNWARD_KINDS,
    Kind,
    ObjectKey,
    PodSpec,
    PodStatus,
    TenantRecord,
    TenantRegistry,
    VersionedObject,
    credential_fingerprint,
    fnv1a32,
    mangle_namespace,
    uid_hash6,
)
from .store import EventType, RateLimitPolicy, Store, WatchEvent, WatchFaultInjector
from .informer import Informer, LagPolicy
from .fairqueue import FairQueue
from .audit import IsolationAuditor
from .syncer import ProxyTarget, Syncer, SyncerConfig
from .supersim import (
    MockKubelet,
    NodeProvider,
    RoutingManager,
    Sandbox,
    Scheduler,
    SchedulerConfig,
)

__version__ = "0.1.0"

__all__ = [
    "RealtimeEngine",
    "Signal",
    "SimEngine",
    "Sleep",
    "TokenBucket",
    "WaitOn",
    "wait_until",
    "SyncError",
    "ValidationError",
    "NotFoundError",
    "AlreadyExistsError",
    "ConflictError",
    "RateLimitedError",
    "VersionTooOldError",
    "AuthenticationUnknownError",
    "DeadlineExceededError",
    "Kind",
    "ObjectKey",
    "PodSpec",
    "PodStatus",
    "VersionedObject",
    "TenantRecord",
    "TenantRegistry",
    "CLUSTER_SCOPED_KINDS",
    "DOWNWARD_KINDS",
    "fnv1a32",
    "uid_hash6",
    "credential_fingerprint",
    "mangle_namespace",
    "EventType",
    "RateLimitPolicy",
    "Store",
    "WatchEvent",
    "WatchFaultInjector",
    "Informer",
    "LagPolicy",
    "FairQueue",
    "IsolationAuditor",
    "Syncer",
    "SyncerConfig",
    "ProxyTarget",
    "Scheduler",
    "SchedulerConfig",
    "NodeProvider",
    "MockKubelet",
    "RoutingManager",
    "Sandbox",
    "__version__",
]
