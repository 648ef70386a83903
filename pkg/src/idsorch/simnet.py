"""
Deterministic network harness.

A scenario wires one :class:`~idsorch.agent.Agent` per virtual host to an
:class:`~idsorch.orchestrator.Orchestrator` through a loopback control
channel.  Traffic generators push DNS and HTTP buffers through each agent's
socket tap, and the virtual servers count only what survives the chain.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence

from .agent import Agent
from .detectors import dns_query, http_request, parse_dns_query, parse_http_request
from .model import (
    TICKS_PER_SECOND,
    Action,
    AlertKind,
    BuildMode,
    Endpoint,
    FlowKey,
    HostPolicy,
    ModuleKind,
    ModuleSpec,
    Protocol,
    TimelineEvent,
    spec_problems,
    to_ticks,
)
from .orchestrator import (
    AlertDatabase,
    BuildLatencyModel,
    ConfigError,
    Orchestrator,
    ResponseRule,
    rule_problems,
)
from .protocol import LoopbackChannel, MonitorPoll, decode, encode
from .sim import Simulator

DNS_SERVER = Endpoint("10.0.0.53", 53)
HTTP_PORT = 80
USER_UID = 1000


class ScenarioError(ConfigError):
    def __init__(self, problems: Sequence[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class Role(str, Enum):
    AGGRESSIVE = "aggressive"
    MIDLEVEL = "midlevel"
    BENIGN = "benign"


class TrafficKind(str, Enum):
    DNS_FLOOD = "dns_flood"
    ROOT_HTTP = "root_http"
    BENIGN = "benign"


@dataclass(frozen=True)
class TrafficProfile:
    """
    ``dns_flood``: DNS at ``baseline_rate`` q/s, switching to ``attack_rate``
    at ``attack_start``.  ``benign``: DNS at ``baseline_rate`` throughout.
    ``root_http``: benign-user HTTP requests at ``baseline_rate`` req/s, and
    root requests to ``urls`` (in order) every ``1/attack_rate`` seconds from
    ``attack_start``.
    """

    kind: TrafficKind
    baseline_rate: float = 5.0
    attack_rate: float = 0.0
    attack_start: float = 10.0
    urls: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "baseline_rate": self.baseline_rate,
            "attack_rate": self.attack_rate,
            "attack_start": self.attack_start,
            "urls": list(self.urls),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TrafficProfile:
        return cls(
            kind=TrafficKind(d["kind"]),
            baseline_rate=float(d.get("baseline_rate", 5.0)),
            attack_rate=float(d.get("attack_rate", 0.0)),
            attack_start=float(d.get("attack_start", 10.0)),
            urls=tuple(d.get("urls", ())),
        )


@dataclass(frozen=True)
class HostConfig:
    host: str
    role: Role
    traffic: TrafficProfile
    address: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"host": self.host, "role": self.role.value, "address": self.address, "traffic": self.traffic.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> HostConfig:
        return cls(
            host=d["host"],
            role=Role(d["role"]),
            traffic=TrafficProfile.from_dict(d["traffic"]),
            address=d.get("address", ""),
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    hosts: tuple[HostConfig, ...]
    rules: tuple[ResponseRule, ...]
    monitor_interval: float = 5.0
    latency: BuildLatencyModel = BuildLatencyModel()
    duration: float = 60.0
    seed: int = 0
    initial_modules: tuple[ModuleSpec, ...] = ()
    reply_loss_rate: float = 0.0

    def host(self, name: str) -> HostConfig:
        for h in self.hosts:
            if h.host == name:
                return h
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "hosts": [h.to_dict() for h in self.hosts],
            "rules": [r.to_dict() for r in self.rules],
            "monitor_interval": self.monitor_interval,
            "latency": self.latency.to_dict(),
            "duration": self.duration,
            "seed": self.seed,
            "initial_modules": [m.to_dict() for m in self.initial_modules],
            "reply_loss_rate": self.reply_loss_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def scenario_from_dict(d: Any) -> Scenario:
    """Parse a scenario object, collecting every structural problem."""
    if not isinstance(d, Mapping):
        raise ScenarioError(["scenario must be a JSON object"])
    problems: list[str] = []

    def section(name, parse, items):
        out = []
        if not isinstance(items, list):
            problems.append(f"{name} must be a list")
            return out
        for i, item in enumerate(items):
            try:
                out.append(parse(item))
            except (KeyError, TypeError, ValueError) as exc:
                msg = exc.args[0] if isinstance(exc, ValueError) and exc.args else repr(exc)
                problems.append(f"{name}[{i}]: {msg}")
        return out

    hosts = section("hosts", HostConfig.from_dict, d.get("hosts", []))
    rules = section("rules", ResponseRule.from_dict, d.get("rules", []))
    modules = section("initial_modules", ModuleSpec.from_dict, d.get("initial_modules", []))
    latency = BuildLatencyModel()
    try:
        latency = BuildLatencyModel.from_dict(d.get("latency", {}))
    except (TypeError, ValueError) as exc:
        problems.append(f"latency: {exc}")
    try:
        scenario = Scenario(
            name=str(d.get("name", "")),
            hosts=tuple(hosts),
            rules=tuple(rules),
            monitor_interval=float(d.get("monitor_interval", 5.0)),
            latency=latency,
            duration=float(d.get("duration", 60.0)),
            seed=int(d.get("seed", 0)),
            initial_modules=tuple(modules),
            reply_loss_rate=float(d.get("reply_loss_rate", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        problems.append(f"scenario: {exc}")
    if problems:
        raise ScenarioError(problems)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path} is not valid JSON: {exc}"]) from None
    return scenario_from_dict(data)


def scenario_problems(s: Scenario) -> list[str]:
    problems = []
    if not s.name:
        problems.append("name must be non-empty")
    if s.duration <= 0:
        problems.append("duration must be positive")
    if s.monitor_interval <= 0:
        problems.append("monitor_interval must be positive")
    if not 0 <= s.reply_loss_rate < 1:
        problems.append("reply_loss_rate must be in [0, 1)")
    if not s.hosts:
        problems.append("at least one host is required")
    names = [h.host for h in s.hosts]
    for n in sorted({n for n in names if names.count(n) > 1}):
        problems.append(f"duplicate host id {n!r}")
    for h in s.hosts:
        t = h.traffic
        where = f"host {h.host or '?'}"
        if not h.host:
            problems.append("host id must be non-empty")
        if t.baseline_rate <= 0:
            problems.append(f"{where}: baseline_rate must be positive")
        if t.kind is TrafficKind.DNS_FLOOD and t.attack_rate < t.baseline_rate:
            problems.append(f"{where}: attack_rate must be >= baseline_rate")
        if t.kind is TrafficKind.ROOT_HTTP:
            if t.attack_rate <= 0:
                problems.append(f"{where}: attack_rate must be positive")
            if not t.urls:
                problems.append(f"{where}: root_http traffic needs at least one url")
        if t.kind is not TrafficKind.BENIGN:
            if t.attack_start < 0:
                problems.append(f"{where}: attack_start must be non-negative")
            if t.attack_start >= s.duration:
                problems.append(f"{where}: attack_start {t.attack_start} is not before duration {s.duration}")
    for i, r in enumerate(s.rules):
        problems.extend(f"rules[{i}]: {p}" for p in rule_problems(r))
    for m in s.initial_modules:
        problems.extend(f"initial module {m.module_id}: {p}" for p in spec_problems(m))
    return problems


def check_scenario(s: Scenario) -> None:
    problems = scenario_problems(s)
    if problems:
        raise ScenarioError(problems)


# ---------------------------------------------------------------------------
# Servers
# ---------------------------------------------------------------------------


class DnsServer:
    """Counts queries that survived the sender's module chain, per host per second."""

    def __init__(self) -> None:
        self.counts: dict[str, dict[int, int]] = {}

    def receive(self, host: str, ticks: int, data: bytes) -> bool:
        if parse_dns_query(data) is None:
            return False
        per = self.counts.setdefault(host, {})
        sec = ticks // TICKS_PER_SECOND
        per[sec] = per.get(sec, 0) + 1
        return True

    def per_second(self, host: str, seconds: int) -> list[int]:
        per = self.counts.get(host, {})
        return [per.get(s, 0) for s in range(seconds)]


@dataclass(frozen=True)
class HttpExchange:
    timestamp: float
    host: str
    uid: int
    url: str
    action: Action
    bytes_sent: int
    bytes_at_server: int
    status: Optional[int]


class HttpServer:
    """Answers well-formed requests with 200; malformed ones get nothing."""

    def __init__(self) -> None:
        self.received_bytes = 0
        self.requests: list[tuple[str, bytes]] = []

    def receive(self, host: str, data: bytes) -> Optional[int]:
        if not data:
            return None
        self.received_bytes += len(data)
        self.requests.append((host, data))
        return 200 if parse_http_request(data) is not None else None


# ---------------------------------------------------------------------------
# Traffic
# ---------------------------------------------------------------------------


def _gap(rate: float) -> Fraction:
    """Exact inter-arrival gap in ticks for a rate given in events/second."""
    return TICKS_PER_SECOND / Fraction(rate).limit_denominator(TICKS_PER_SECOND)


def _stream(start: int, rate: float) -> Iterator[int]:
    gap = _gap(rate)
    k = 0
    while True:
        yield start + math.floor(k * gap)
        k += 1


def dns_send_times(t: TrafficProfile, phase: int, end: int) -> Iterator[int]:
    """Query instants in ticks; the first attack query follows the last
    baseline query by one baseline gap, after which spacing is 1/attack_rate."""
    switch = to_ticks(t.attack_start) if t.kind is TrafficKind.DNS_FLOOD else end
    nxt = phase
    for nxt in _stream(phase, t.baseline_rate):
        if nxt >= switch or nxt >= end:
            break
        yield nxt
    if nxt >= end or switch >= end:
        return
    for tick in _stream(nxt, t.attack_rate):
        if tick >= end:
            return
        yield tick


def http_send_times(t: TrafficProfile, end: int) -> list[tuple[int, int, str]]:
    """(tick, uid, url) for root requests and benign-user browsing."""
    out = []
    start = to_ticks(t.attack_start)
    for i, url in enumerate(t.urls):
        tick = start + math.floor(i * _gap(t.attack_rate))
        if tick < end:
            out.append((tick, 0, url))
    k = 0
    while True:
        tick = math.floor((k + Fraction(1, 2)) * _gap(t.baseline_rate))
        if tick >= end:
            break
        out.append((tick, USER_UID, "benign.example"))
        k += 1
    return sorted(out)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    scenario: Scenario
    timeline: list[TimelineEvent]
    rates: dict[str, list[int]]
    alerts: AlertDatabase
    http_log: list[HttpExchange]
    orchestrator: Orchestrator
    agents: dict[str, Agent]
    dns_server: DnsServer
    http_server: HttpServer

    def events(self, label=None, host: Optional[str] = None) -> list[TimelineEvent]:
        return [
            e for e in self.timeline
            if (label is None or e.label is label) and (host is None or e.host == host)
        ]

    def first(self, label, host: str) -> Optional[float]:
        ev = self.events(label, host)
        return ev[0].timestamp if ev else None


class _HostDriver:
    def __init__(self, cfg: HostConfig, index: int, agent: Agent, run: _Run) -> None:
        self.cfg = cfg
        self.agent = agent
        self.run = run
        self.address = cfg.address or f"10.0.0.{index + 1}"
        process = "dnsflood.py" if cfg.traffic.kind is TrafficKind.DNS_FLOOD else "resolver"
        self.dns_flow = FlowKey(Protocol.UDP, Endpoint(self.address, 53001), DNS_SERVER, process, USER_UID)
        self.qid = 0
        self.http_port = 40000

    def send_dns(self, times: Iterator[int]) -> None:
        self.qid += 1
        buf = dns_query(f"q{self.qid}.{self.cfg.host.lower()}.test", self.qid)
        res = self.agent.on_send(self.dns_flow, buf)
        sim = self.run.sim
        if res.data:
            self.run.dns.receive(self.cfg.host, sim.ticks, res.data)
        nxt = next(times, None)
        if nxt is not None:
            sim.at(nxt, self.cfg.host, "send-dns", self.send_dns, times)

    def send_http(self, uid: int, url: str) -> None:
        self.http_port += 1
        flow = FlowKey(
            Protocol.TCP,
            Endpoint(self.address, self.http_port),
            Endpoint(url, HTTP_PORT),
            "curl" if uid == 0 else "browser",
            uid,
        )
        buf = http_request(url, "/")
        res = self.agent.on_send(flow, buf)
        status = self.run.http.receive(self.cfg.host, res.data)
        self.run.http_log.append(
            HttpExchange(self.run.sim.now(), self.cfg.host, uid, url, res.action, len(buf), len(res.data), status)
        )


class _Run:
    def __init__(self, s: Scenario) -> None:
        self.sim = Simulator()
        self.dns = DnsServer()
        self.http = HttpServer()
        self.http_log: list[HttpExchange] = []
        self.timeline: list[TimelineEvent] = []


def run_scenario(s: Scenario) -> ScenarioResult:
    check_scenario(s)
    run = _Run(s)
    sim = run.sim
    end = to_ticks(s.duration)

    loss_rng = random.Random(f"{s.seed}/loss")

    def lose(host, msg):
        return s.reply_loss_rate > 0 and isinstance(msg, MonitorPoll) and loss_rng.random() < s.reply_loss_rate

    channel = LoopbackChannel(lose_reply=lose)
    orch = Orchestrator(
        list(s.rules),
        sim,
        channel,
        s.latency,
        on_event=run.timeline.append,
        spawn=lambda proc: sim.spawn(proc, "orchestrator", "deploy"),
    )

    agents: dict[str, Agent] = {}
    for i, cfg in enumerate(s.hosts):
        agent = Agent(cfg.host, sim, s.initial_modules, on_event=run.timeline.append)
        agents[cfg.host] = agent
        channel.connect(cfg.host, agent.handle)
        orch.register(decode(encode(agent.register_message())))
        driver = _HostDriver(cfg, i, agent, run)
        t = cfg.traffic
        if t.kind is TrafficKind.ROOT_HTTP:
            for tick, uid, url in http_send_times(t, end):
                sim.at(tick, cfg.host, "send-http", driver.send_http, uid, url)
        else:
            gap = math.floor(_gap(t.baseline_rate))
            phase = random.Random(f"{s.seed}/{cfg.host}").randrange(max(gap, 1))
            times = dns_send_times(t, phase, end)
            first = next(times, None)
            if first is not None:
                sim.at(first, cfg.host, "send-dns", driver.send_dns, times)

    sim.spawn(orch.run(s.monitor_interval), "orchestrator", "poll")
    sim.run(until=s.duration)

    seconds = int(-(-end // TICKS_PER_SECOND))
    rates = {cfg.host: run.dns.per_second(cfg.host, seconds) for cfg in s.hosts}
    timeline = sorted(run.timeline, key=lambda e: e.sort_key)
    return ScenarioResult(s, timeline, rates, orch.db, run.http_log, orch, agents, run.dns, run.http)


# ---------------------------------------------------------------------------
# Scenario library
# ---------------------------------------------------------------------------

DNS_THRESHOLD = 10
THROTTLE_LIMIT = 5
BASELINE_RATE = 5.0
ATTACK_START = 10.0
AGGRESSIVE_RATE = 50.0
MIDLEVEL_RATE = 20.0
MALICIOUS_URL = "exampleurl.com"


def dns_monitor_spec(threshold: float = DNS_THRESHOLD, cooldown: float = 10.0) -> ModuleSpec:
    return ModuleSpec.create(ModuleKind.DNS_RATE_MONITOR, {"threshold": threshold, "cooldown": cooldown})


def dns_throttle_rule(mode: BuildMode) -> ResponseRule:
    return ResponseRule(
        AlertKind.DNS_RATE_EXCEEDED,
        ModuleKind.DNS_THROTTLE,
        mode,
        HostPolicy.ALL_HOSTS,
        {"limit": THROTTLE_LIMIT},
    )


def dns_hosts(
    aggressive: float = AGGRESSIVE_RATE,
    midlevel: float = MIDLEVEL_RATE,
    attack_start: float = ATTACK_START,
) -> tuple[HostConfig, ...]:
    def flood(rate):
        return TrafficProfile(TrafficKind.DNS_FLOOD, BASELINE_RATE, rate, attack_start)

    return (
        HostConfig("VM1", Role.BENIGN, TrafficProfile(TrafficKind.BENIGN, BASELINE_RATE, BASELINE_RATE)),
        HostConfig("VM2", Role.AGGRESSIVE, flood(aggressive)),
        HostConfig("VM3", Role.MIDLEVEL, flood(midlevel)),
    )


def scenario_dns_jit(seed: int = 0) -> Scenario:
    return Scenario(
        name="scenario_dns_jit",
        hosts=dns_hosts(),
        rules=(dns_throttle_rule(BuildMode.JIT),),
        monitor_interval=5.0,
        latency=BuildLatencyModel(),
        duration=60.0,
        seed=seed,
        initial_modules=(dns_monitor_spec(),),
    )


def scenario_dns_prebuilt(seed: int = 0) -> Scenario:
    return replace(
        scenario_dns_jit(seed),
        name="scenario_dns_prebuilt",
        rules=(dns_throttle_rule(BuildMode.PREBUILT),),
    )


def scenario_root_http(seed: int = 0) -> Scenario:
    return Scenario(
        name="scenario_root_http",
        hosts=(
            HostConfig(
                "VM1",
                Role.AGGRESSIVE,
                TrafficProfile(
                    TrafficKind.ROOT_HTTP,
                    baseline_rate=0.2,
                    attack_rate=0.05,
                    attack_start=10.0,
                    urls=(MALICIOUS_URL, "newbad.example", MALICIOUS_URL),
                ),
            ),
        ),
        rules=(
            ResponseRule(
                AlertKind.MALICIOUS_URL_CONTACT,
                ModuleKind.ROOT_HTTP_MONITOR,
                BuildMode.JIT,
                HostPolicy.AFFECTED_HOST_ONLY,
                jit_fields={"blocklist": "urls"},
            ),
        ),
        monitor_interval=5.0,
        latency=BuildLatencyModel(),
        duration=80.0,
        seed=seed,
        initial_modules=(ModuleSpec.create(ModuleKind.HTTP_URL_BLOCK, {"blocklist": [MALICIOUS_URL]}),),
    )


LIBRARY = {
    "scenario_dns_jit": scenario_dns_jit,
    "scenario_dns_prebuilt": scenario_dns_prebuilt,
    "scenario_root_http": scenario_root_http,
}


def scenario_library(seed: int = 0) -> dict[str, Scenario]:
    return {name: make(seed) for name, make in LIBRARY.items()}
