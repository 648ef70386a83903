"""
Host IDS agent: a chain of IDS modules sitting on the host's socket tap.

The chain runs in installation order and the first non-Pass verdict wins.
Installing a module of a kind that is already present swaps it in place;
the per-flow table is never touched by an install, so established flows
carry on through the swap.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

from .detectors import Detector, make_detector, poison
from .model import (
    Action,
    Alert,
    AlertCondition,
    FlowKey,
    Label,
    ModuleSpec,
    TimelineEvent,
    ValidationError,
)
from .protocol import (
    ControlMessage,
    DeployAck,
    DeployModule,
    MonitorPoll,
    MonitorReply,
    Register,
)

log = logging.getLogger(__name__)


class Clock(Protocol):
    def now(self) -> float: ...

    def now_ticks(self) -> int: ...


@dataclass
class FlowState:
    connection_id: int
    opened_at: float
    buffers: int = 0
    bytes_forwarded: int = 0


@dataclass
class SendResult:
    data: bytes
    action: Action
    alerts: list[Alert] = field(default_factory=list)
    decided_by: Optional[str] = None

    @property
    def forwarded(self) -> int:
        return len(self.data)


class ModuleChain:
    """Ordered detectors, at most one per module kind."""

    def __init__(self) -> None:
        self.entries: list[Detector] = []

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def module_ids(self) -> tuple[str, ...]:
        return tuple(d.module_id for d in self.entries)

    def find(self, module_id: str) -> Optional[Detector]:
        for d in self.entries:
            if d.module_id == module_id:
                return d
        return None

    def install(self, det: Detector) -> Optional[Detector]:
        """Add ``det``; a same-kind module is replaced in its chain position."""
        for i, old in enumerate(self.entries):
            if old.kind is det.kind:
                self.entries[i] = det
                return old
        self.entries.append(det)
        return None


@dataclass
class _Pending:
    alert: Alert
    sent_in: Optional[int] = None


class Agent:
    def __init__(
        self,
        host: str,
        clock: Clock,
        initial_modules: Iterable[ModuleSpec] = (),
        on_event: Optional[Callable[[TimelineEvent], None]] = None,
    ) -> None:
        if not host:
            raise ValueError("host id must be non-empty")
        self.host = host
        self.clock = clock
        self.chain = ModuleChain()
        self.flows: dict[FlowKey, FlowState] = {}
        self.pending: list[_Pending] = []
        self.on_event = on_event
        self.install_log: list[tuple[float, str]] = []
        self._awaiting_effect: set[str] = set()
        self._conn_ids = itertools.count(1)
        for spec in initial_modules:
            self.chain.install(make_detector(spec))

    # -- control plane -----------------------------------------------------

    def register_message(self) -> Register:
        return Register(self.host, self.chain.module_ids, self.clock.now())

    def handle(self, msg: ControlMessage) -> Optional[ControlMessage]:
        if isinstance(msg, MonitorPoll):
            return self.on_poll(msg.poll_id, msg.ack_through)
        if isinstance(msg, DeployModule):
            return self.install(msg.spec)
        log.warning("%s: ignoring unexpected %s", self.host, type(msg).__name__)
        return None

    def install(self, spec: ModuleSpec) -> DeployAck:
        now = self.clock.now()
        if self.chain.find(spec.module_id) is not None:
            return DeployAck(spec.module_id, "ok", "already installed", now)
        try:
            det = make_detector(spec)
        except (ValidationError, KeyError) as exc:
            return DeployAck(spec.module_id, "error", f"rejected: {exc}", now)
        old = self.chain.install(det)
        self.install_log.append((now, spec.module_id))
        self._awaiting_effect.add(spec.module_id)
        if old is not None:
            self._awaiting_effect.discard(old.module_id)
            detail = f"replaced {old.module_id}"
        else:
            detail = "installed"
        log.debug("%s: %s %s at %.6f", self.host, detail, spec.module_id, now)
        return DeployAck(spec.module_id, "ok", detail, now)

    def on_poll(self, poll_id: int, ack_through: int = 0) -> MonitorReply:
        now = self.clock.now()
        self.pending = [p for p in self.pending if p.sent_in is None or p.sent_in > ack_through]
        batch = []
        for p in self.pending:
            # an alert raised at the poll instant waits for the next poll
            if p.alert.raised_at < now:
                p.sent_in = poll_id
                batch.append(p.alert)
        return MonitorReply(poll_id, tuple(batch), self.chain.module_ids, now)

    # -- data plane --------------------------------------------------------

    def open_flow(self, flow: FlowKey) -> FlowState:
        state = self.flows.get(flow)
        if state is None:
            state = self.flows[flow] = FlowState(next(self._conn_ids), self.clock.now())
        return state

    def on_send(self, flow: FlowKey, buf: bytes) -> SendResult:
        state = self.flows.get(flow) or self.open_flow(flow)
        state.buffers += 1
        ticks = self.clock.now_ticks()
        action = Action.PASS
        decided_by = None
        raised: list[tuple[str, AlertCondition]] = []
        for det in self.chain.entries:
            try:
                verdict = det.inspect(flow, buf, ticks)
            except Exception:
                log.exception("%s: detector %s failed; passing buffer", self.host, det.module_id)
                continue
            if self._awaiting_effect and det.module_id in self._awaiting_effect:
                self._awaiting_effect.discard(det.module_id)
                self._emit(Label.D_RESPONSE_EFFECTIVE, f"module={det.module_id}")
            if verdict.alert is not None:
                raised.append((det.module_id, verdict.alert))
            if verdict.action is not Action.PASS:
                action = verdict.action
                decided_by = det.module_id
                break

        alerts = [self._queue_alert(mid, cond) for mid, cond in raised]
        if action is Action.DROP:
            data = b""
        elif action is Action.POISON:
            data = poison(buf)
        else:
            data = buf
        state.bytes_forwarded += len(data)
        return SendResult(data, action, alerts, decided_by)

    def _queue_alert(self, module_id: str, cond: AlertCondition) -> Alert:
        alert = Alert(self.host, module_id, cond, self.clock.now())
        self.pending.append(_Pending(alert))
        extra = f" rate={cond.observed_rate}" if cond.url is None else f" url={cond.url}"
        self._emit(Label.A_ALERT_RAISED, f"module={module_id} kind={cond.kind.value}{extra}")
        return alert

    def _emit(self, label: Label, detail: str) -> None:
        if self.on_event is not None:
            self.on_event(TimelineEvent(label, self.host, self.clock.now(), detail))
