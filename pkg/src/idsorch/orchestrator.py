"""
IDS orchestrator: alert database, response rules and the alert processor.

For every alert that arrives in a monitor reply the orchestrator

1. records it in the append-only alert database,
2. looks for a response rule triggered by the alert's condition kind,
3. picks the target hosts from the rule's host policy,
4. for JIT rules, collects parameters from the database,
5. builds one module spec per target host, and
6. deploys the specs host by host.

Deployment runs as a single sequential worker: each host is built (JIT only)
and then deployed before the next host is started.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Generator, Iterable, Mapping, Optional, Sequence

from .model import (
    URL_ALERT_KINDS,
    Alert,
    AlertKind,
    BuildMode,
    DeploymentPlan,
    HostPolicy,
    Label,
    ModuleKind,
    ModuleSpec,
    PARAM_DEFAULTS,
    TimelineEvent,
    ValidationError,
    kind_from_module_id,
    spec_problems,
)
from .protocol import (
    DeployAck,
    DeployModule,
    LoopbackChannel,
    MonitorPoll,
    MonitorReply,
    Register,
    monitor_schedule,
)
from .sim import ManualClock, Process, drive

log = logging.getLogger(__name__)

# Where JIT parameters may be filled from.
CONTEXT_SOURCES = ("urls",)


class ConfigError(ValueError):
    """Bad rule table or orchestrator configuration, raised at startup."""


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResponseRule:
    trigger: AlertKind
    response_kind: ModuleKind
    build_mode: BuildMode = BuildMode.JIT
    host_policy: HostPolicy = HostPolicy.ALL_HOSTS
    template_params: Mapping[str, Any] = field(default_factory=dict)
    # parameter name -> context source, e.g. {"blocklist": "urls"}
    jit_fields: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trigger": self.trigger.value,
            "response_kind": self.response_kind.value,
            "build_mode": self.build_mode.value,
            "host_policy": self.host_policy.value,
            "template_params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.template_params.items()},
            "jit_fields": dict(self.jit_fields),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ResponseRule:
        def enum(e, key, default=None):
            raw = d.get(key, default)
            try:
                return e(raw)
            except ValueError:
                what = "module kind" if e is ModuleKind else key.replace("_", " ")
                raise ConfigError(f"unknown {what} {raw!r}") from None

        if not isinstance(d, Mapping):
            raise ConfigError("rule must be an object")
        return cls(
            trigger=enum(AlertKind, "trigger"),
            response_kind=enum(ModuleKind, "response_kind"),
            build_mode=enum(BuildMode, "build_mode", BuildMode.JIT.value),
            host_policy=enum(HostPolicy, "host_policy", HostPolicy.ALL_HOSTS.value),
            template_params=dict(d.get("template_params", {})),
            jit_fields=dict(d.get("jit_fields", {})),
        )


def rule_problems(rule: ResponseRule) -> list[str]:
    problems = []
    accepted = PARAM_DEFAULTS[rule.response_kind]
    for name in sorted(set(rule.template_params) - set(accepted)):
        problems.append(f"unknown parameter {name!r} for {rule.response_kind.value}")
    for name, source in sorted(rule.jit_fields.items()):
        if name not in accepted:
            problems.append(f"JIT field {name!r} is not a {rule.response_kind.value} parameter")
        if source not in CONTEXT_SOURCES:
            problems.append(f"unknown JIT context source {source!r}")
    if rule.jit_fields and rule.build_mode is BuildMode.PREBUILT:
        problems.append("PreBuilt rule cannot declare JIT fields")
    if rule.build_mode is BuildMode.PREBUILT:
        spec = ModuleSpec.create(rule.response_kind, rule.template_params, BuildMode.PREBUILT)
        problems.extend(f"pre-built module: {p}" for p in spec_problems(spec))
    return problems


def rules_from_list(items: Any) -> list[ResponseRule]:
    if not isinstance(items, list):
        raise ConfigError("rule table must be a list")
    rules = []
    for i, item in enumerate(items):
        try:
            rules.append(ResponseRule.from_dict(item))
        except ConfigError as exc:
            raise ConfigError(f"rule {i}: {exc}") from None
    return rules


def load_rules(path: str | Path) -> list[ResponseRule]:
    with open(path, encoding="utf-8") as fh:
        return rules_from_list(json.load(fh))


@dataclass(frozen=True)
class BuildLatencyModel:
    jit_build_seconds: float = 11.0
    deploy_seconds: float = 1.0
    prebuilt_build_seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.jit_build_seconds < 0 or self.deploy_seconds < 0:
            raise ValidationError("latencies must be non-negative")
        if self.prebuilt_build_seconds != 0:
            raise ValidationError("pre-built modules have zero build latency")

    def build_seconds(self, mode: BuildMode) -> float:
        return self.jit_build_seconds if mode is BuildMode.JIT else self.prebuilt_build_seconds

    def to_dict(self) -> dict[str, float]:
        return {
            "jit_build_seconds": self.jit_build_seconds,
            "deploy_seconds": self.deploy_seconds,
            "prebuilt_build_seconds": self.prebuilt_build_seconds,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BuildLatencyModel:
        return cls(**{k: float(v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# Alert database
# ---------------------------------------------------------------------------

ALERT_CSV_COLUMNS = ("alert_id", "host", "kind", "url", "observed_rate", "raised_at", "received_at")


class AlertDatabase:
    """Append-only alert store with lookup indices over its records."""

    def __init__(self) -> None:
        self.records: list[Alert] = []
        self.by_host: dict[str, list[int]] = {}
        self.by_kind: dict[AlertKind, list[int]] = {}
        self.url_index: dict[str, list[int]] = {}
        self._by_key: dict[tuple[str, str, float], int] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, alert_id: int) -> Alert:
        return self.records[alert_id - 1]

    def record(self, alert: Alert) -> tuple[int, bool]:
        """Append ``alert``; returns (alert_id, newly_recorded)."""
        if alert.received_at is None:
            raise ValidationError("alert must carry received_at before it is recorded")
        existing = self._by_key.get(alert.dedup_key)
        if existing is not None:
            return existing, False
        alert_id = len(self.records) + 1
        stored = Alert(
            alert.host, alert.module_id, alert.condition, alert.raised_at, alert.received_at, alert_id
        )
        self.records.append(stored)
        self._by_key[alert.dedup_key] = alert_id
        self.by_host.setdefault(alert.host, []).append(alert_id)
        self.by_kind.setdefault(alert.condition.kind, []).append(alert_id)
        if alert.condition.kind in URL_ALERT_KINDS:
            self.url_index.setdefault(alert.condition.url, []).append(alert_id)
        return alert_id, True

    def urls(self) -> list[str]:
        return sorted(self.url_index)

    def rows(self) -> list[tuple]:
        return [
            (
                a.alert_id,
                a.host,
                a.condition.kind.value,
                a.condition.url or "",
                "" if a.condition.observed_rate is None else a.condition.observed_rate,
                f"{a.raised_at:.6f}",
                f"{a.received_at:.6f}",
            )
            for a in self.records
        ]


# ---------------------------------------------------------------------------
# Orchestrator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    timestamp: float
    kind: str
    host: str
    detail: str = ""


@dataclass
class _Connection:
    next_poll: int = 1
    ack_through: int = 0


class Orchestrator:
    def __init__(
        self,
        rules: Sequence[ResponseRule],
        clock,
        channel: Optional[LoopbackChannel] = None,
        latency: BuildLatencyModel = BuildLatencyModel(),
        on_event: Optional[Callable[[TimelineEvent], None]] = None,
        spawn: Optional[Callable[[Process], None]] = None,
    ) -> None:
        problems = [f"rule {i}: {p}" for i, r in enumerate(rules) for p in rule_problems(r)]
        if problems:
            raise ConfigError("; ".join(problems))
        self.rules = list(rules)
        self.clock = clock
        self.channel = channel if channel is not None else LoopbackChannel()
        self.latency = latency
        self.on_event = on_event
        self.spawn = spawn
        self.db = AlertDatabase()
        self.hosts: list[str] = []
        self.installed: dict[str, set[str]] = {}
        self.log: list[LogEntry] = []
        self.plans: list[DeploymentPlan] = []
        self.results: list[tuple[DeploymentPlan, list[tuple[str, DeployAck]]]] = []
        self.queue: deque[DeploymentPlan] = deque()
        self._busy = False
        self._conns: dict[str, _Connection] = {}
        self.registry: dict[ModuleKind, ModuleSpec] = {
            r.response_kind: ModuleSpec.create(r.response_kind, r.template_params, BuildMode.PREBUILT)
            for r in self.rules
            if r.build_mode is BuildMode.PREBUILT
        }

    # -- registration ------------------------------------------------------

    def register(self, msg: Register) -> None:
        if msg.host not in self._conns:
            self.hosts.append(msg.host)
            self._conns[msg.host] = _Connection()
        self.installed[msg.host] = set(msg.installed)

    # -- alert path --------------------------------------------------------

    def record_alert(self, alert: Alert) -> int:
        alert_id, _ = self.db.record(alert)
        return alert_id

    def matching_rule(self, alert: Alert) -> Optional[ResponseRule]:
        for rule in self.rules:
            if rule.trigger is alert.condition.kind:
                return rule
        return None

    def target_hosts(self, alert: Alert, rule: ResponseRule) -> list[str]:
        if rule.host_policy is HostPolicy.AFFECTED_HOST_ONLY:
            return [alert.host]
        # hosts that have raised this kind of alert go first, in alert order
        first: dict[str, int] = {}
        for aid in self.db.by_kind.get(rule.trigger, ()):
            first.setdefault(self.db.get(aid).host, aid)
        alerting = [h for h in sorted(first, key=first.__getitem__) if h in self._conns]
        return alerting + [h for h in self.hosts if h not in first]

    def collect_context(self, rule: ResponseRule) -> tuple[dict[str, Any], tuple[int, ...]]:
        """Parameters drawn from the alert database, plus the ids of the alerts used."""
        params: dict[str, Any] = {}
        used: set[int] = set()
        for name, source in rule.jit_fields.items():
            if source == "urls":
                params[name] = self.db.urls()
                for ids in self.db.url_index.values():
                    used.update(ids)
        return params, tuple(sorted(used))

    def build_module(
        self,
        rule: ResponseRule,
        ctx: Mapping[str, Any],
        host: str,
        context_alert_ids: Iterable[int] = (),
    ) -> ModuleSpec:
        if rule.build_mode is BuildMode.PREBUILT:
            spec = self.registry[rule.response_kind]
        else:
            params = {**rule.template_params, **ctx}
            spec = ModuleSpec.create(
                rule.response_kind,
                params,
                BuildMode.JIT,
                context_alert_ids=tuple(sorted(set(context_alert_ids))),
            )
        for mid in sorted(self.installed.get(host, ())):
            if mid != spec.module_id and kind_from_module_id(mid) is spec.kind:
                return ModuleSpec(
                    spec.module_id, spec.kind, spec.params, spec.build_mode, mid, spec.context_alert_ids
                )
        return spec

    def process_alert(self, alert: Alert, rules: Optional[Sequence[ResponseRule]] = None) -> Optional[DeploymentPlan]:
        if alert.alert_id is None or alert.alert_id > len(self.db):
            raise ValueError("alert must be recorded before it is processed")
        if rules is not None:
            saved, self.rules = self.rules, list(rules)
        try:
            rule = self.matching_rule(alert)
        finally:
            if rules is not None:
                self.rules = saved
        if rule is None:
            return None
        hosts = self.target_hosts(alert, rule)
        ctx: dict[str, Any] = {}
        ctx_ids: tuple[int, ...] = ()
        if rule.build_mode is BuildMode.JIT:
            ctx, ctx_ids = self.collect_context(rule)
            ctx_ids = tuple(sorted(set(ctx_ids) | {alert.alert_id}))
        targets = [(h, self.build_module(rule, ctx, h, ctx_ids)) for h in hosts]
        plan = DeploymentPlan(alert.alert_id, tuple(targets), rule.host_policy)
        self.plans.append(plan)
        self._log("plan", alert.host, f"alert_id={alert.alert_id} hosts={','.join(hosts)}")
        return plan

    def receive(self, alerts: Iterable[Alert]) -> list[DeploymentPlan]:
        """Record a batch of delivered alerts, then run the processor on each new one."""
        now = self.clock.now()
        fresh = []
        for alert in alerts:
            if alert.received_at is None:
                alert = alert.received(now)
            alert_id, new = self.db.record(alert)
            if new:
                stored = self.db.get(alert_id)
                fresh.append(stored)
                self._event(
                    Label.B_ORCHESTRATOR_NOTIFIED,
                    stored.host,
                    f"alert_id={alert_id} kind={stored.condition.kind.value}",
                    alert_id,
                )
        plans = []
        for alert in fresh:
            plan = self.process_alert(alert)
            if plan is not None:
                plans.append(plan)
                self._enqueue(plan)
        return plans

    # -- monitoring --------------------------------------------------------

    def poll_host(self, host: str) -> list[Alert]:
        conn = self._conns[host]
        poll_id = conn.next_poll
        conn.next_poll += 1
        reply = self.channel.request(host, MonitorPoll(poll_id, conn.ack_through, self.clock.now()))
        if not isinstance(reply, MonitorReply) or reply.poll_id != poll_id:
            self._log("poll", host, f"poll_id={poll_id} no reply")
            return []
        conn.ack_through = poll_id
        self.installed[host] = set(reply.installed)
        self._log("poll", host, f"poll_id={poll_id} alerts={len(reply.alerts)}")
        return list(reply.alerts)

    def poll_cycle(self) -> list[DeploymentPlan]:
        batch: list[Alert] = []
        for host in sorted(self.hosts):
            batch.extend(self.poll_host(host))
        return self.receive(batch)

    def run(self, monitor_interval: float) -> Process:
        """Main loop: poll every host on the monitor schedule, forever."""
        if not self.hosts:
            raise ValueError("no registered hosts")
        for t in monitor_schedule(monitor_interval):
            yield t - self.clock.now()
            self.poll_cycle()

    # -- deployment --------------------------------------------------------

    def deploy(self, plan: DeploymentPlan) -> Generator[float, None, list[tuple[str, DeployAck]]]:
        acks: list[tuple[str, DeployAck]] = []
        for host, spec in plan.targets:
            if spec.module_id in self.installed.get(host, ()):
                acks.append((host, DeployAck(spec.module_id, "ok", "skipped: already installed", self.clock.now())))
                continue
            problems = spec_problems(spec)
            if problems:
                ack = DeployAck(spec.module_id, "error", f"build failed: {problems[0]}", self.clock.now())
                self._log("deploy", host, f"{spec.module_id} {ack.detail}")
                acks.append((host, ack))
                continue
            build = self.latency.build_seconds(spec.build_mode)
            if build:
                yield build
            if self.latency.deploy_seconds:
                yield self.latency.deploy_seconds
            reply = self.channel.request(host, DeployModule(spec, self.clock.now()))
            if not isinstance(reply, DeployAck) or reply.module_id != spec.module_id:
                ack = DeployAck(spec.module_id, "error", "unreachable", self.clock.now())
            else:
                ack = reply
            if ack.ok:
                installed = self.installed.setdefault(host, set())
                installed.add(spec.module_id)
                if spec.replaces:
                    installed.discard(spec.replaces)
                self._event(
                    Label.C_MODULE_DEPLOYED,
                    host,
                    f"module={spec.module_id} alert_id={plan.trigger_alert} mode={spec.build_mode.value}",
                    plan.trigger_alert,
                )
            self._log("deploy", host, f"{spec.module_id} {ack.status} {ack.detail}")
            acks.append((host, ack))
        return acks

    def _enqueue(self, plan: DeploymentPlan) -> None:
        self.queue.append(plan)
        if self.spawn is not None and not self._busy:
            self._busy = True
            self.spawn(self._worker())

    def _worker(self) -> Process:
        while self.queue:
            plan = self.queue.popleft()
            acks = yield from self.deploy(plan)
            self.results.append((plan, acks))
        self._busy = False

    def drain(self) -> list[tuple[DeploymentPlan, list[tuple[str, DeployAck]]]]:
        """Execute queued plans synchronously; the clock must be a ManualClock."""
        if not isinstance(self.clock, ManualClock):
            raise TypeError("drain() needs a ManualClock")
        start = len(self.results)
        drive(self._worker(), self.clock)
        return self.results[start:]

    # -- bookkeeping -------------------------------------------------------

    def _log(self, kind: str, host: str, detail: str) -> None:
        self.log.append(LogEntry(self.clock.now(), kind, host, detail))

    def _event(self, label: Label, host: str, detail: str, alert_id: Optional[int]) -> None:
        if self.on_event is not None:
            self.on_event(TimelineEvent(label, host, self.clock.now(), detail, alert_id))
