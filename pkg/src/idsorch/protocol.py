"""
Control channel between the orchestrator and host agents.

Frame layout (bit-exact)::

    +----------------------+---------------------------+
    | N: uint32 big-endian | N bytes of UTF-8 JSON body |
    +----------------------+---------------------------+

The body is a JSON object whose first key is ``variant``.  The per-variant
schema lives in docs/protocol.md.  Alerts only ever travel inside
``monitor_reply`` messages: agents never push.
"""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Optional, Union

from .model import Alert, ModuleSpec, ValidationError

HEADER = struct.Struct(">I")
MAX_BODY = 16 * 1024 * 1024


class ProtocolError(ValueError):
    """Base class for frame decoding failures."""


class TruncatedFrame(ProtocolError):
    pass


class LengthMismatch(ProtocolError):
    pass


class UnknownVariant(ProtocolError):
    pass


class SchemaError(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Register:
    host: str
    installed: tuple[str, ...] = ()
    sent_at: float = 0.0


@dataclass(frozen=True)
class MonitorPoll:
    poll_id: int
    # Highest poll_id whose reply reached the orchestrator; lets the agent
    # retire alerts it has already delivered.
    ack_through: int = 0
    sent_at: float = 0.0


@dataclass(frozen=True)
class MonitorReply:
    poll_id: int
    alerts: tuple[Alert, ...] = ()
    installed: tuple[str, ...] = ()
    sent_at: float = 0.0


@dataclass(frozen=True)
class DeployModule:
    spec: ModuleSpec
    sent_at: float = 0.0


@dataclass(frozen=True)
class DeployAck:
    module_id: str
    status: str = "ok"
    detail: str = ""
    sent_at: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


ControlMessage = Union[Register, MonitorPoll, MonitorReply, DeployModule, DeployAck]

_VARIANTS: dict[type, str] = {
    Register: "register",
    MonitorPoll: "monitor_poll",
    MonitorReply: "monitor_reply",
    DeployModule: "deploy_module",
    DeployAck: "deploy_ack",
}
_BY_NAME = {v: k for k, v in _VARIANTS.items()}


def to_body(msg: ControlMessage) -> dict[str, Any]:
    """Canonical dict form of a message; key order is part of the format."""
    body: dict[str, Any] = {"variant": _VARIANTS[type(msg)], "sent_at": msg.sent_at}
    if isinstance(msg, Register):
        body.update(host=msg.host, installed=list(msg.installed))
    elif isinstance(msg, MonitorPoll):
        body.update(poll_id=msg.poll_id, ack_through=msg.ack_through)
    elif isinstance(msg, MonitorReply):
        body.update(
            poll_id=msg.poll_id,
            alerts=[a.to_dict() for a in msg.alerts],
            installed=list(msg.installed),
        )
    elif isinstance(msg, DeployModule):
        body.update(spec=msg.spec.to_dict())
    else:
        body.update(module_id=msg.module_id, status=msg.status, detail=msg.detail)
    return body


def from_body(body: Any) -> ControlMessage:
    if not isinstance(body, dict):
        raise SchemaError("body must be a JSON object")
    name = body.get("variant")
    if name not in _BY_NAME:
        raise UnknownVariant(f"unknown variant {name!r}")
    try:
        sent_at = float(body["sent_at"])
        if name == "register":
            return Register(_s(body["host"]), tuple(_s(m) for m in body["installed"]), sent_at)
        if name == "monitor_poll":
            return MonitorPoll(_i(body["poll_id"]), _i(body.get("ack_through", 0)), sent_at)
        if name == "monitor_reply":
            return MonitorReply(
                _i(body["poll_id"]),
                tuple(Alert.from_dict(a) for a in body["alerts"]),
                tuple(_s(m) for m in body["installed"]),
                sent_at,
            )
        if name == "deploy_module":
            return DeployModule(ModuleSpec.from_dict(body["spec"]), sent_at)
        status = _s(body["status"])
        if status not in ("ok", "error"):
            raise SchemaError(f"bad ack status {status!r}")
        return DeployAck(_s(body["module_id"]), status, _s(body.get("detail", "")), sent_at)
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise SchemaError(f"schema violation in {name}: {exc!r}") from exc


def _s(v: Any) -> str:
    if not isinstance(v, str):
        raise SchemaError(f"expected string, got {type(v).__name__}")
    return v


def _i(v: Any) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise SchemaError(f"expected integer, got {type(v).__name__}")
    return v


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------


def encode(msg: ControlMessage) -> bytes:
    payload = json.dumps(to_body(msg), separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return HEADER.pack(len(payload)) + payload


def _parse_payload(payload: bytes) -> ControlMessage:
    try:
        body = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"body is not UTF-8 JSON: {exc}") from exc
    return from_body(body)


def decode(frame: bytes) -> ControlMessage:
    """Decode exactly one frame."""
    if len(frame) < HEADER.size:
        raise TruncatedFrame(f"truncated: {len(frame)} byte header")
    (n,) = HEADER.unpack_from(frame)
    body = frame[HEADER.size:]
    if len(body) < n:
        raise TruncatedFrame(f"truncated: declared {n} bytes, got {len(body)}")
    if len(body) > n:
        raise LengthMismatch(f"length mismatch: declared {n} bytes, got {len(body)}")
    return _parse_payload(body)


class FrameDecoder:
    """Incremental decoder for a byte stream carrying back-to-back frames."""

    def __init__(self, max_body: int = MAX_BODY) -> None:
        self._buf = bytearray()
        self.max_body = max_body

    def feed(self, data: bytes) -> list[ControlMessage]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            (n,) = HEADER.unpack_from(self._buf)
            if n > self.max_body:
                raise LengthMismatch(f"frame of {n} bytes exceeds limit {self.max_body}")
            if len(self._buf) < HEADER.size + n:
                break
            payload = bytes(self._buf[HEADER.size:HEADER.size + n])
            del self._buf[:HEADER.size + n]
            out.append(_parse_payload(payload))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# Poll schedule
# ---------------------------------------------------------------------------


def monitor_schedule(interval: float) -> Iterator[float]:
    """Poll instants ``interval, 2*interval, ...`` on the virtual clock."""
    if interval <= 0:
        raise ValueError("monitor interval must be positive")
    for k in itertools.count(1):
        yield k * interval


# ---------------------------------------------------------------------------
# In-process transport
# ---------------------------------------------------------------------------

Handler = Callable[[ControlMessage], Optional[ControlMessage]]


@dataclass
class LoopbackChannel:
    """
    Request/response transport that pushes every message through
    :func:`encode`/:func:`decode`, one logical connection per host.

    ``lose_reply(host, request)`` returning True discards the reply after the
    agent handled the request, which is how the simulator injects loss.
    """

    endpoints: dict[str, Handler] = field(default_factory=dict)
    lose_reply: Optional[Callable[[str, ControlMessage], bool]] = None
    bytes_sent: int = 0
    transcript: list[tuple[str, str, str]] = field(default_factory=list)

    def connect(self, host: str, handler: Handler) -> None:
        self.endpoints[host] = handler

    def disconnect(self, host: str) -> None:
        self.endpoints.pop(host, None)

    def request(self, host: str, msg: ControlMessage) -> Optional[ControlMessage]:
        handler = self.endpoints.get(host)
        if handler is None:
            return None
        wire = encode(msg)
        self.bytes_sent += len(wire)
        self.transcript.append((host, "out", _VARIANTS[type(msg)]))
        reply = handler(decode(wire))
        if reply is None:
            return None
        if self.lose_reply is not None and self.lose_reply(host, msg):
            self.transcript.append((host, "lost", _VARIANTS[type(reply)]))
            return None
        wire = encode(reply)
        self.bytes_sent += len(wire)
        self.transcript.append((host, "in", _VARIANTS[type(reply)]))
        return decode(wire)


def body_of(frame: bytes) -> Mapping[str, Any]:
    """Decoded JSON body of a frame without building the message object."""
    return json.loads(frame[HEADER.size:].decode("utf-8"))
