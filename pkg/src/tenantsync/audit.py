"""Write-provenance auditing for tenant isolation.

Every store write carries a provenance string. Writes attributed to the
syncer on behalf of a tenant must stay inside that tenant's slice: downward
writes may only touch super-cluster namespaces carrying the tenant's
prefix, upward writes may only touch that tenant's own store. Everything
else (load generators, scheduler, kubelets, routing) is infrastructure and
out of scope here.
"""

from __future__ import annotations

from .model import Kind, TenantRegistry
from .store import AuditEntry

DOWNWARD_PREFIX = "syncer:downward:"
UPWARD_PREFIX = "syncer:upward:"


def downward_provenance(tenant_id: str) -> str:
    return DOWNWARD_PREFIX + tenant_id


def upward_provenance(tenant_id: str) -> str:
    return UPWARD_PREFIX + tenant_id


class IsolationAuditor:
    def __init__(self, registry: TenantRegistry):
        self.registry = registry
        self.checked = 0
        self.violations: list[str] = []

    def record(self, entry: AuditEntry) -> None:
        prov = entry.provenance
        if not prov or not prov.startswith("syncer:"):
            return
        self.checked += 1
        if prov.startswith(DOWNWARD_PREFIX):
            self._check_downward(prov[len(DOWNWARD_PREFIX):], entry)
        elif prov.startswith(UPWARD_PREFIX):
            self._check_upward(prov[len(UPWARD_PREFIX):], entry)
        else:
            self._flag(entry, f"unrecognized syncer provenance {prov!r}")

    def _flag(self, entry: AuditEntry, why: str) -> None:
        self.violations.append(
            f"store={entry.store} op={entry.op} key={entry.key.text()} "
            f"provenance={entry.provenance}: {why}"
        )

    def _check_downward(self, tenant_id: str, entry: AuditEntry) -> None:
        if entry.store != "super":
            self._flag(entry, "downward write outside the super store")
            return
        key = entry.key
        mangled = key.name if key.kind is Kind.NAMESPACE else key.namespace
        if key.kind is Kind.NODE:
            self._flag(entry, "downward write touched a node object")
            return
        owner = self.registry.try_demangle_namespace(mangled)
        if owner is None:
            self._flag(entry, f"namespace {mangled!r} carries no tenant prefix")
        elif owner[0] != tenant_id:
            self._flag(entry, f"namespace {mangled!r} belongs to tenant {owner[0]!r}")

    def _check_upward(self, tenant_id: str, entry: AuditEntry) -> None:
        if entry.store != f"tenant:{tenant_id}":
            self._flag(entry, f"upward write for {tenant_id!r} landed in {entry.store!r}")

    def summary(self) -> dict:
        return {"checked": self.checked, "violations": list(self.violations)}
