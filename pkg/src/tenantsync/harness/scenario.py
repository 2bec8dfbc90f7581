"""Workload and world configuration for harness runs.

A scenario is a flat key-value text format (one ``key = value`` per line,
``#`` comments) with dotted keys for load groups::

    seed = 7
    clock = sim
    group.main.tenants = 100
    group.main.pods = 100
    group.main.pattern = burst

Each group creates ``tenants`` tenants named ``<group>-<nnnn>``, every one
running ``pods`` pods either as one initial burst or sequentially (each pod
created only after the previous one reports ready).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from ..errors import ValidationError

PATTERNS = ("burst", "sequential")


@dataclass(frozen=True)
class GroupSpec:
    name: str
    tenants: int
    pods: int
    pattern: str = "burst"
    weight: int = 1
    services: int = 0  # per tenant, created before its pods
    namespace: str = "work"

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValidationError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.tenants < 1 or self.pods < 0:
            raise ValidationError("group needs tenants >= 1 and pods >= 0")
        if self.weight < 1:
            raise ValidationError("group weight must be >= 1")


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    seed: int = 0
    clock: str = "sim"  # sim | realtime
    baseline: bool = False  # bypass tenant stores and the sync layer
    fair_queuing: bool = True
    downward_workers: int = 20
    upward_workers: int = 100
    nodes: int = 100
    node_capacity: int = 110
    scheduler_rate: float = 400.0  # placements per second
    downward_admission_rate: float = 410.0  # 0 disables throttling
    downward_admission_burst: int = 40
    rule_latency_ms: float = 10.0
    lag_min_ms: float = 1.0
    lag_max_ms: float = 5.0
    scan_interval: float = 60.0
    heartbeat_period: float = 10.0
    store_rate_limit: float = 100.0  # per-tenant store writes/second
    store_burst: int = 200
    watchdog: float = 3600.0  # virtual-time deadline (sim clock)
    time_limit: float = 120.0  # wall-clock deadline (realtime clock)
    groups: tuple[GroupSpec, ...] = ()

    def __post_init__(self):
        if self.clock not in ("sim", "realtime"):
            raise ValidationError(f"clock must be sim or realtime, got {self.clock!r}")
        names = [g.name for g in self.groups]
        if len(names) != len(set(names)):
            raise ValidationError("group names must be unique")

    @property
    def total_pods(self) -> int:
        return sum(g.tenants * g.pods for g in self.groups)

    @property
    def total_tenants(self) -> int:
        return sum(g.tenants for g in self.groups)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "groups":
                continue
            out[f.name] = getattr(self, f.name)
        out["groups"] = [
            {gf.name: getattr(g, gf.name) for gf in fields(GroupSpec)} for g in self.groups
        ]
        return out


_SCALAR_FIELDS = {f.name: f for f in fields(Scenario) if f.name != "groups"}
_GROUP_FIELDS = {f.name: f for f in fields(GroupSpec)}


def _coerce(value: str, type_text: str, key: str):
    base = type_text.replace(" ", "").replace("|None", "")
    if base == "bool":
        low = value.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {value!r}")
    try:
        if base == "int":
            return int(value)
        if base == "float":
            return float(value)
    except ValueError:
        raise ValidationError(f"{key}: expected {base}, got {value!r}") from None
    return value


def parse_scenario(text: str) -> Scenario:
    scalars: dict = {}
    groups: dict[str, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("group."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ValidationError(f"line {lineno}: group keys are group.<name>.<field>")
            _, gname, gfield = parts
            if gfield not in _GROUP_FIELDS or gfield == "name":
                raise ValidationError(f"line {lineno}: unknown group field {gfield!r}")
            groups.setdefault(gname, {})[gfield] = _coerce(
                value, _GROUP_FIELDS[gfield].type, key
            )
        else:
            if key not in _SCALAR_FIELDS:
                raise ValidationError(f"line {lineno}: unknown setting {key!r}")
            scalars[key] = _coerce(value, _SCALAR_FIELDS[key].type, key)
    built = tuple(GroupSpec(name=gname, **data) for gname, data in groups.items())
    return Scenario(groups=built, **scalars)


def scenario_text(scenario: Scenario) -> str:
    """Serialize back to the flat format; parses to an equal scenario."""
    lines = []
    for name, f in _SCALAR_FIELDS.items():
        lines.append(f"{name} = {getattr(scenario, name)}")
    for group in scenario.groups:
        for gname, gf in _GROUP_FIELDS.items():
            if gname == "name":
                continue
            lines.append(f"group.{group.name}.{gname} = {getattr(group, gname)}")
    return "\n".join(lines) + "\n"


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


# -- presets -------------------------------------------------------------


def breakdown_scenario(seed: int = 0, tenants: int = 100, pods: int = 100, **overrides) -> Scenario:
    """Many equal tenants bursting at once; used for latency-phase studies."""
    return Scenario(
        name="breakdown",
        seed=seed,
        groups=(GroupSpec("main", tenants, pods, "burst"),),
        **overrides,
    )


def fairness_scenario(seed: int = 0, fair_queuing: bool = True, **overrides) -> Scenario:
    """A few bursting heavy tenants next to many light sequential ones."""
    return Scenario(
        name="fairness-on" if fair_queuing else "fairness-off",
        seed=seed,
        fair_queuing=fair_queuing,
        groups=(
            GroupSpec("greedy", 10, 900, "burst"),
            GroupSpec("regular", 40, 10, "sequential"),
        ),
        **overrides,
    )


def uniform_scenario(
    tenants: int,
    pods: int,
    seed: int = 0,
    pattern: str = "burst",
    name: str = "uniform",
    **overrides,
) -> Scenario:
    return Scenario(
        name=name,
        seed=seed,
        groups=(GroupSpec("main", tenants, pods, pattern),),
        **overrides,
    )


def baseline_of(scenario: Scenario) -> Scenario:
    """Same workload, written straight to the shared cluster (no sync layer)."""
    return replace(scenario, baseline=True, name=f"{scenario.name}-baseline")
