"""
IDS module implementations and the simplified DNS/HTTP message forms they
inspect.

A DNS query on the wire is ``b"DNSQ <id> <qname>"``.  An HTTP request is a
plain HTTP/1.1 request line plus a ``Host`` header; the requesting uid comes
from the flow, not from the buffer.

All detectors take the current time as integer ticks (microseconds) so that
the trailing one-second window is exact.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .model import (
    PASS,
    TICKS_PER_SECOND,
    Action,
    AlertCondition,
    AlertKind,
    FlowKey,
    ModuleKind,
    ModuleSpec,
    Verdict,
    to_ticks,
    validate,
)

log = logging.getLogger(__name__)

WINDOW_TICKS = TICKS_PER_SECOND
HTTP_METHODS = frozenset({"GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS", "PATCH"})
POISON_LINE = b"\x00POISONED"


# ---------------------------------------------------------------------------
# Message forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DnsQuery:
    qid: int
    qname: str


@dataclass(frozen=True)
class HttpRequest:
    method: str
    host: str
    path: str


def dns_query(qname: str, qid: int) -> bytes:
    return b"DNSQ %d %s" % (qid, qname.encode())


def parse_dns_query(buf: bytes) -> Optional[DnsQuery]:
    if not buf.startswith(b"DNSQ "):
        return None
    parts = buf.split(b" ", 2)
    if len(parts) != 3 or not parts[1].isdigit() or not parts[2]:
        return None
    return DnsQuery(int(parts[1]), parts[2].decode(errors="replace"))


def http_request(host: str, path: str = "/", method: str = "GET") -> bytes:
    return f"{method} {path} HTTP/1.1\r\nHost: {host}\r\n\r\n".encode()


def parse_http_request(buf: bytes) -> Optional[HttpRequest]:
    head, sep, _ = buf.partition(b"\r\n\r\n")
    if not sep:
        return None
    lines = head.decode("latin-1").split("\r\n")
    parts = lines[0].split(" ")
    if len(parts) != 3 or parts[0] not in HTTP_METHODS or not parts[2].startswith("HTTP/"):
        return None
    host = None
    for line in lines[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "host":
            host = value.strip()
    if not host:
        return None
    return HttpRequest(parts[0], host.lower(), parts[1])


def poison(buf: bytes) -> bytes:
    """Overwrite the request line with a fixed malformed line of equal length."""
    line_end = buf.find(b"\r\n")
    if line_end < 0:
        line_end = len(buf)
    junk = (POISON_LINE * (line_end // len(POISON_LINE) + 1))[:line_end]
    return junk + buf[line_end:]


# ---------------------------------------------------------------------------
# Sliding window
# ---------------------------------------------------------------------------


class RateWindow:
    """Event timestamps within the trailing window ``(now - length, now]``."""

    __slots__ = ("length", "events")

    def __init__(self, length: int = WINDOW_TICKS) -> None:
        self.length = length
        self.events: deque[int] = deque()

    def evict(self, now: int) -> None:
        cutoff = now - self.length
        ev = self.events
        while ev and ev[0] <= cutoff:
            ev.popleft()

    def count(self, now: int) -> int:
        self.evict(now)
        return len(self.events)

    def add(self, now: int) -> int:
        """Record an event at ``now`` and return the window count including it."""
        self.evict(now)
        self.events.append(now)
        return len(self.events)


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------


class Detector:
    kind: ModuleKind

    def __init__(self, spec: ModuleSpec) -> None:
        self.spec = spec

    @property
    def module_id(self) -> str:
        return self.spec.module_id

    def inspect(self, flow: FlowKey, buf: bytes, now: int) -> Verdict:
        raise NotImplementedError


class DnsRateMonitor(Detector):
    """Passive: counts DNS queries and alerts when the window count exceeds the threshold."""

    kind = ModuleKind.DNS_RATE_MONITOR

    def __init__(self, spec: ModuleSpec) -> None:
        super().__init__(spec)
        self.threshold = spec.params["threshold"]
        self.cooldown = to_ticks(spec.params["cooldown"])
        self.window = RateWindow()
        self.last_alert: Optional[int] = None

    def inspect(self, flow: FlowKey, buf: bytes, now: int) -> Verdict:
        if not buf.startswith(b"DNSQ ") or parse_dns_query(buf) is None:
            return PASS
        n = self.window.add(now)
        if n > self.threshold and (self.last_alert is None or now - self.last_alert >= self.cooldown):
            self.last_alert = now
            return Verdict(Action.PASS, AlertCondition(AlertKind.DNS_RATE_EXCEEDED, flow.uid, observed_rate=n))
        return PASS


class DnsThrottle(Detector):
    """Lets at most ``limit`` queries through in any trailing second; drops the rest."""

    kind = ModuleKind.DNS_THROTTLE

    def __init__(self, spec: ModuleSpec) -> None:
        super().__init__(spec)
        self.limit = spec.params["limit"]
        self.window = RateWindow()

    def inspect(self, flow: FlowKey, buf: bytes, now: int) -> Verdict:
        if not buf.startswith(b"DNSQ ") or parse_dns_query(buf) is None:
            return PASS
        if self.window.count(now) < self.limit:
            self.window.events.append(now)
            return PASS
        return Verdict(Action.DROP)


class _UrlDetector(Detector):
    def __init__(self, spec: ModuleSpec) -> None:
        super().__init__(spec)
        self.blocklist = frozenset(u.lower() for u in spec.params["blocklist"])
        self.once = spec.params["alert_once_per_window"]
        self.cooldown = to_ticks(spec.params["cooldown"])
        self.last_alert: dict[str, int] = {}

    def _alert(self, kind: AlertKind, url: str, uid: int, now: int) -> Optional[AlertCondition]:
        if self.once:
            last = self.last_alert.get(url)
            if last is not None and now - last < self.cooldown:
                return None
            self.last_alert[url] = now
        return AlertCondition(kind, uid, url=url)


class HttpUrlBlock(_UrlDetector):
    """Drops any HTTP request whose Host is on the blocklist, for every uid."""

    kind = ModuleKind.HTTP_URL_BLOCK

    def inspect(self, flow: FlowKey, buf: bytes, now: int) -> Verdict:
        req = parse_http_request(buf)
        if req is None or req.host not in self.blocklist:
            return PASS
        return Verdict(Action.DROP, self._alert(AlertKind.MALICIOUS_URL_CONTACT, req.host, flow.uid, now))


class RootHttpMonitor(_UrlDetector):
    """Poisons every HTTP request made by uid 0 and reports the requested host."""

    kind = ModuleKind.ROOT_HTTP_MONITOR

    def inspect(self, flow: FlowKey, buf: bytes, now: int) -> Verdict:
        if not flow.is_root:
            return PASS
        req = parse_http_request(buf)
        if req is None:
            return PASS
        return Verdict(Action.POISON, self._alert(AlertKind.ROOT_HTTP_ATTEMPT, req.host, flow.uid, now))


DETECTORS: dict[ModuleKind, type[Detector]] = {
    cls.kind: cls for cls in (DnsRateMonitor, DnsThrottle, HttpUrlBlock, RootHttpMonitor)
}


def make_detector(spec: ModuleSpec) -> Detector:
    """Instantiate a validated spec; raises ValidationError or KeyError."""
    validate(spec)
    return DETECTORS[spec.kind](spec)
