"""Domain types: object identity, versioned objects, tenants, and name mangling.

Tenant namespaces are mapped into the shared super cluster by prefixing them
with ``<tenant_id>-<h6>`` where ``h6`` is a 6-hex-char FNV-1a digest of the
tenant's uid. The mapping is injective per registration and exactly
invertible, which is what lets node-level agents route a tenant credential to
the right super-cluster namespace.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

from .errors import AuthenticationUnknownError, NotFoundError, ValidationError


class Kind(str, Enum):
    NAMESPACE = "Namespace"
    POD = "Pod"
    SERVICE = "Service"
    ENDPOINTS = "Endpoints"
    SECRET = "Secret"
    CONFIGMAP = "ConfigMap"
    NODE = "Node"
    EVENT = "Event"


# Namespace and Node live at cluster scope; everything else is namespaced.
CLUSTER_SCOPED_KINDS = frozenset({Kind.NAMESPACE, Kind.NODE})

# Kinds whose source of truth is the tenant side and which the syncer copies
# into the super cluster.
DOWNWARD_KINDS = (
    Kind.NAMESPACE,
    Kind.POD,
    Kind.SERVICE,
    Kind.SECRET,
    Kind.CONFIGMAP,
    Kind.ENDPOINTS,
)

_NAME_RE = re.compile(r"^[a-z0-9]([a-z0-9-]*[a-z0-9])?$")


def validate_name(name: str, what: str = "name") -> str:
    """Check a DNS-label-like name (lowercase alphanumerics and dashes)."""
    if not name or len(name) > 63 or not _NAME_RE.match(name):
        raise ValidationError(f"invalid {what}: {name!r}")
    return name


@dataclass(frozen=True)
class ObjectKey:
    kind: Kind
    namespace: str  # "" for cluster-scoped kinds
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValidationError("object name must be non-empty")
        scoped = self.kind in CLUSTER_SCOPED_KINDS
        if scoped and self.namespace:
            raise ValidationError(f"{self.kind.value} is cluster-scoped; namespace must be empty")
        if not scoped and not self.namespace:
            raise ValidationError(f"{self.kind.value} is namespace-scoped; namespace required")

    @property
    def full_name(self) -> str:
        return f"{self.namespace}/{self.name}" if self.namespace else self.name

    def text(self, version: int | None = None) -> str:
        """Canonical textual encoding, ``kind/namespace/name[@version]``."""
        base = f"{self.kind.value}/{self.namespace}/{self.name}"
        return f"{base}@{version}" if version is not None else base


@dataclass(frozen=True)
class PodSpec:
    containers: tuple[str, ...] = ("app",)
    node_name: str = ""  # set once by the provider side at bind time
    anti_affinity: frozenset[tuple[str, str]] = frozenset()
    service_epoch_at_admission: int = 0


@dataclass(frozen=True)
class PodStatus:
    phase: str = "Pending"  # Pending | Running
    ready: bool = False
    ready_at: float | None = None


@dataclass(frozen=True)
class VersionedObject:
    """An immutable snapshot of one stored object.

    Stores commit new snapshots on every write; readers can hold references
    without copying. ``resource_version`` strictly increases per store,
    ``uid`` survives updates but not delete/recreate.
    """

    key: ObjectKey
    uid: str  # 32 lowercase hex chars (128-bit)
    resource_version: int
    spec: Any = None
    status: Any = None
    labels: Mapping[str, str] = field(default_factory=dict)
    annotations: Mapping[str, str] = field(default_factory=dict)
    deletion_marked: bool = False
    created_at: float = 0.0

    def with_updates(self, **changes) -> "VersionedObject":
        return replace(self, **changes)


def fnv1a32(data: bytes) -> int:
    """32-bit FNV-1a; trivially portable, used for the namespace prefix hash."""
    h = 0x811C9DC5
    for b in data:
        h ^= b
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def uid_hash6(vc_uid: str) -> str:
    """First 6 hex chars of the FNV-1a digest of the canonical uid text."""
    return format(fnv1a32(vc_uid.lower().encode("ascii")), "08x")[:6]


def credential_fingerprint(tenant_id: str, vc_uid: str) -> str:
    """Stand-in for a TLS certificate hash: a 256-bit digest unique per tenant."""
    return hashlib.sha256(f"cred:{tenant_id}:{vc_uid}".encode()).hexdigest()


@dataclass
class TenantRecord:
    tenant_id: str
    vc_uid: str
    weight: int = 1
    prefix: str = ""  # derived at registration
    credential_fingerprint: str = ""
    store_handle: Any = None

    def __post_init__(self):
        validate_name(self.tenant_id, "tenant_id")
        if self.weight < 1:
            raise ValidationError("tenant weight must be >= 1")
        if not self.prefix:
            self.prefix = f"{self.tenant_id}-{uid_hash6(self.vc_uid)}"
        if not self.credential_fingerprint:
            self.credential_fingerprint = credential_fingerprint(self.tenant_id, self.vc_uid)


def mangle_namespace(tenant: TenantRecord, tenant_ns: str) -> str:
    """Map a tenant namespace to its unique super-cluster namespace."""
    validate_name(tenant_ns, "namespace")
    return f"{tenant.prefix}-{tenant_ns}"


class TenantRegistry:
    """All registered tenants, indexed by id, prefix, and credential.

    Registration is serialized; lookups are lock-free reads of insertion-only
    dicts. Prefixes must be prefix-free with respect to each other (one
    dash-delimited prefix may not extend another), otherwise demangling would
    be ambiguous.
    """

    def __init__(self):
        self._by_id: dict[str, TenantRecord] = {}
        self._by_prefix: dict[str, TenantRecord] = {}
        self._by_fingerprint: dict[str, TenantRecord] = {}
        self._lock = threading.Lock()

    def register(self, record: TenantRecord) -> TenantRecord:
        with self._lock:
            if record.tenant_id in self._by_id:
                raise ValidationError(f"tenant {record.tenant_id!r} already registered")
            for existing in self._by_prefix:
                if (
                    existing == record.prefix
                    or existing.startswith(record.prefix + "-")
                    or record.prefix.startswith(existing + "-")
                ):
                    raise ValidationError(
                        f"prefix {record.prefix!r} collides with registered {existing!r};"
                        " re-register the tenant with a fresh uid"
                    )
            if record.credential_fingerprint in self._by_fingerprint:
                raise ValidationError("credential fingerprint already registered")
            self._by_id[record.tenant_id] = record
            self._by_prefix[record.prefix] = record
            self._by_fingerprint[record.credential_fingerprint] = record
        return record

    def unregister(self, tenant_id: str) -> TenantRecord:
        with self._lock:
            record = self._by_id.pop(tenant_id, None)
            if record is None:
                raise NotFoundError(f"tenant {tenant_id!r} not registered")
            del self._by_prefix[record.prefix]
            del self._by_fingerprint[record.credential_fingerprint]
        return record

    def get(self, tenant_id: str) -> TenantRecord:
        record = self._by_id.get(tenant_id)
        if record is None:
            raise NotFoundError(f"tenant {tenant_id!r} not registered")
        return record

    def tenants(self) -> list[TenantRecord]:
        return list(self._by_id.values())

    def __contains__(self, tenant_id: str) -> bool:
        return tenant_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def demangle_namespace(self, super_ns: str) -> tuple[str, str]:
        """Invert :func:`mangle_namespace`. Returns (tenant_id, tenant_ns)."""
        for prefix, record in self._by_prefix.items():
            if super_ns.startswith(prefix + "-"):
                tenant_ns = super_ns[len(prefix) + 1 :]
                if tenant_ns:
                    return record.tenant_id, tenant_ns
        raise NotFoundError(f"no registered prefix matches namespace {super_ns!r}")

    def try_demangle_namespace(self, super_ns: str) -> tuple[str, str] | None:
        try:
            return self.demangle_namespace(super_ns)
        except NotFoundError:
            return None

    def resolve_by_credential(self, fingerprint: str) -> TenantRecord:
        record = self._by_fingerprint.get(fingerprint)
        if record is None:
            raise AuthenticationUnknownError("credential fingerprint matches no tenant")
        return record
