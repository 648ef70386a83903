"""
Shared domain types used by every other module in the package.

Every type here is an immutable value.  Each one has a canonical dict form
(``to_dict`` / ``from_dict``) whose key order is fixed; that dict is what goes
on the wire and, flattened, into the CSV exports.

Time is virtual: float seconds from scenario start.  Internally the simulator
counts integer microsecond ticks so that window arithmetic is exact; use
:func:`to_ticks` / :func:`to_seconds` to cross that boundary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Optional

TICKS_PER_SECOND = 1_000_000
ROOT_UID = 0


def to_ticks(seconds: float) -> int:
    return round(seconds * TICKS_PER_SECOND)


def to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


class ValidationError(ValueError):
    """A value violates one of its type invariants."""


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class Protocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"


class AlertKind(str, Enum):
    DNS_RATE_EXCEEDED = "DnsRateExceeded"
    MALICIOUS_URL_CONTACT = "MaliciousUrlContact"
    ROOT_HTTP_ATTEMPT = "RootHttpAttempt"


URL_ALERT_KINDS = frozenset({AlertKind.MALICIOUS_URL_CONTACT, AlertKind.ROOT_HTTP_ATTEMPT})


class ModuleKind(str, Enum):
    DNS_RATE_MONITOR = "DnsRateMonitor"
    DNS_THROTTLE = "DnsThrottle"
    HTTP_URL_BLOCK = "HttpUrlBlock"
    ROOT_HTTP_MONITOR = "RootHttpMonitor"

    @property
    def slug(self) -> str:
        return _SLUGS[self]


_SLUGS = {
    ModuleKind.DNS_RATE_MONITOR: "dns-rate-monitor",
    ModuleKind.DNS_THROTTLE: "dns-throttle",
    ModuleKind.HTTP_URL_BLOCK: "http-url-block",
    ModuleKind.ROOT_HTTP_MONITOR: "root-http-monitor",
}


class BuildMode(str, Enum):
    PREBUILT = "PreBuilt"
    JIT = "JIT"


class HostPolicy(str, Enum):
    ALL_HOSTS = "AllHosts"
    AFFECTED_HOST_ONLY = "AffectedHostOnly"


class Action(str, Enum):
    PASS = "Pass"
    DROP = "Drop"
    POISON = "Poison"


class Label(str, Enum):
    A_ALERT_RAISED = "A_AlertRaised"
    B_ORCHESTRATOR_NOTIFIED = "B_OrchestratorNotified"
    C_MODULE_DEPLOYED = "C_ModuleDeployed"
    D_RESPONSE_EFFECTIVE = "D_ResponseEffective"

    @property
    def letter(self) -> str:
        return self.value[0]


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Endpoint:
    address: str
    port: int

    def __post_init__(self) -> None:
        if not 1 <= self.port <= 65535:
            raise ValidationError(f"port {self.port} outside [1, 65535]")

    def __str__(self) -> str:
        return f"{self.address}:{self.port}"


@dataclass(frozen=True)
class FlowKey:
    """Identity of one socket as seen by the tap."""

    protocol: Protocol
    src: Endpoint
    dst: Endpoint
    process_name: str
    uid: int

    def __post_init__(self) -> None:
        if not isinstance(self.protocol, Protocol):
            raise ValidationError(f"unknown protocol {self.protocol!r}")

    @property
    def is_root(self) -> bool:
        return self.uid == ROOT_UID


# ---------------------------------------------------------------------------
# Alerts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlertCondition:
    kind: AlertKind
    uid: int
    observed_rate: Optional[float] = None
    url: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is AlertKind.DNS_RATE_EXCEEDED:
            if self.observed_rate is None or self.observed_rate <= 0:
                raise ValidationError("DnsRateExceeded needs a positive observed_rate")
            if self.url is not None:
                raise ValidationError("DnsRateExceeded carries no url")
        else:
            if not self.url:
                raise ValidationError(f"{self.kind.value} needs a url")
            if self.observed_rate is not None:
                raise ValidationError(f"{self.kind.value} carries no observed_rate")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "observed_rate": self.observed_rate,
            "url": self.url,
            "uid": self.uid,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AlertCondition:
        return cls(
            kind=AlertKind(d["kind"]),
            uid=_int(d["uid"], "uid"),
            observed_rate=d.get("observed_rate"),
            url=d.get("url"),
        )


@dataclass(frozen=True)
class Alert:
    """
    One condition report from a host module.

    ``alert_id`` and ``received_at`` stay ``None`` until the orchestrator
    records the alert.
    """

    host: str
    module_id: str
    condition: AlertCondition
    raised_at: float
    received_at: Optional[float] = None
    alert_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.host:
            raise ValidationError("alert host must be non-empty")
        if self.received_at is not None and self.received_at < self.raised_at:
            raise ValidationError("received_at precedes raised_at")

    @property
    def dedup_key(self) -> tuple[str, str, float]:
        return (self.host, self.module_id, self.raised_at)

    def received(self, at: float) -> Alert:
        return replace(self, received_at=at)

    def to_dict(self) -> dict[str, Any]:
        return {
            "alert_id": self.alert_id,
            "host": self.host,
            "module_id": self.module_id,
            "condition": self.condition.to_dict(),
            "raised_at": self.raised_at,
            "received_at": self.received_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Alert:
        return cls(
            host=_str(d["host"], "host"),
            module_id=_str(d["module_id"], "module_id"),
            condition=AlertCondition.from_dict(d["condition"]),
            raised_at=float(d["raised_at"]),
            received_at=None if d.get("received_at") is None else float(d["received_at"]),
            alert_id=d.get("alert_id"),
        )


# ---------------------------------------------------------------------------
# Module specs
# ---------------------------------------------------------------------------

DEFAULT_COOLDOWN = 10.0

# Accepted parameter names and their defaults per module kind.
PARAM_DEFAULTS: dict[ModuleKind, dict[str, Any]] = {
    ModuleKind.DNS_RATE_MONITOR: {"threshold": 10, "cooldown": DEFAULT_COOLDOWN},
    ModuleKind.DNS_THROTTLE: {"limit": 5},
    ModuleKind.HTTP_URL_BLOCK: {
        "blocklist": (),
        "alert_once_per_window": False,
        "cooldown": DEFAULT_COOLDOWN,
    },
    ModuleKind.ROOT_HTTP_MONITOR: {
        "blocklist": (),
        "alert_once_per_window": False,
        "cooldown": DEFAULT_COOLDOWN,
    },
}


def normalize_params(kind: ModuleKind, params: Mapping[str, Any]) -> dict[str, Any]:
    """Fill defaults and put blocklists in canonical (sorted, unique) form.

    Unknown keys are kept so that :func:`spec_problems` can report them.
    """
    out = dict(PARAM_DEFAULTS[kind])
    out.update(params)
    if "blocklist" in out and not isinstance(out["blocklist"], str):
        out["blocklist"] = tuple(sorted(set(out["blocklist"])))
    return dict(sorted(out.items()))


def module_id_for(kind: ModuleKind, params: Mapping[str, Any]) -> str:
    """Content-derived id: identical kind and params give the identical id."""
    canon = json.dumps(
        {k: list(v) if isinstance(v, tuple) else v for k, v in normalize_params(kind, params).items()},
        sort_keys=True,
        separators=(",", ":"),
    )
    digest = hashlib.sha256(f"{kind.value}|{canon}".encode()).hexdigest()[:10]
    return f"{kind.slug}-{digest}"


def kind_from_module_id(module_id: str) -> Optional[ModuleKind]:
    for kind, slug in _SLUGS.items():
        if module_id.startswith(slug + "-"):
            return kind
    return None


@dataclass(frozen=True)
class ModuleSpec:
    module_id: str
    kind: ModuleKind
    params: Mapping[str, Any]
    build_mode: BuildMode = BuildMode.PREBUILT
    replaces: Optional[str] = None
    context_alert_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", normalize_params(self.kind, self.params))
        object.__setattr__(self, "context_alert_ids", tuple(self.context_alert_ids))

    @classmethod
    def create(
        cls,
        kind: ModuleKind,
        params: Optional[Mapping[str, Any]] = None,
        build_mode: BuildMode = BuildMode.PREBUILT,
        **kw: Any,
    ) -> ModuleSpec:
        params = dict(params or {})
        return cls(module_id_for(kind, params), kind, params, build_mode, **kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "module_id": self.module_id,
            "kind": self.kind.value,
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()},
            "build_mode": self.build_mode.value,
            "replaces": self.replaces,
            "context_alert_ids": list(self.context_alert_ids),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ModuleSpec:
        params = d.get("params", {})
        if not isinstance(params, Mapping):
            raise ValidationError("params must be an object")
        return cls(
            module_id=_str(d["module_id"], "module_id"),
            kind=ModuleKind(d["kind"]),
            params=params,
            build_mode=BuildMode(d.get("build_mode", BuildMode.PREBUILT.value)),
            replaces=d.get("replaces"),
            context_alert_ids=tuple(_int(i, "context_alert_ids") for i in d.get("context_alert_ids", ())),
        )


def _positive(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def spec_problems(spec: ModuleSpec) -> list[str]:
    """All violated ModuleSpec invariants, in a fixed order."""
    problems: list[str] = []
    p = spec.params
    if not spec.module_id:
        problems.append("module_id must be non-empty")
    unknown = sorted(set(p) - set(PARAM_DEFAULTS[spec.kind]))
    if unknown:
        problems.append(f"unknown parameter(s) for {spec.kind.value}: {', '.join(unknown)}")
    if spec.kind is ModuleKind.DNS_RATE_MONITOR and not _positive(p.get("threshold")):
        problems.append("threshold must be positive")
    if spec.kind is ModuleKind.DNS_THROTTLE and not _positive(p.get("limit")):
        problems.append("limit must be positive")
    if "cooldown" in p and not (_positive(p["cooldown"]) or p["cooldown"] == 0):
        problems.append("cooldown must be non-negative")
    if "blocklist" in p:
        bl = p["blocklist"]
        if not isinstance(bl, tuple) or not all(isinstance(u, str) and u for u in bl):
            problems.append("blocklist must be a collection of non-empty strings")
        elif spec.kind is ModuleKind.HTTP_URL_BLOCK and not bl:
            problems.append("blocklist must be non-empty")
    if "alert_once_per_window" in p and not isinstance(p["alert_once_per_window"], bool):
        problems.append("alert_once_per_window must be a boolean")
    if spec.build_mode is BuildMode.JIT and not spec.context_alert_ids:
        problems.append("JIT spec must record context_alert_ids")
    return problems


def validate(spec: ModuleSpec) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    problems = spec_problems(spec)
    if problems:
        raise ValidationError(problems[0])


# ---------------------------------------------------------------------------
# Plans, verdicts, timeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeploymentPlan:
    trigger_alert: int
    targets: tuple[tuple[str, ModuleSpec], ...]
    policy: HostPolicy

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise ValidationError("deployment plan has no targets")
        hosts = [h for h, _ in self.targets]
        if len(set(hosts)) != len(hosts):
            raise ValidationError("deployment plan repeats a host")

    @property
    def hosts(self) -> list[str]:
        return [h for h, _ in self.targets]


@dataclass(frozen=True)
class Verdict:
    action: Action = Action.PASS
    alert: Optional[AlertCondition] = None


PASS = Verdict()


@dataclass(frozen=True)
class TimelineEvent:
    label: Label
    host: str
    timestamp: float
    detail: str = ""
    alert_id: Optional[int] = field(default=None, compare=False)

    @property
    def sort_key(self) -> tuple[float, str, str]:
        return (self.timestamp, self.host, self.label.value)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _str(v: Any, name: str) -> str:
    if not isinstance(v, str):
        raise ValidationError(f"{name} must be a string")
    return v


def _int(v: Any, name: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise ValidationError(f"{name} must be an integer")
    return v
