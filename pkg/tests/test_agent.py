from __future__ import annotations

from idsorch.agent import Agent
from idsorch.detectors import dns_query, http_request, parse_http_request
from idsorch.model import (
    Action,
    AlertKind,
    Endpoint,
    FlowKey,
    Label,
    ModuleKind,
    ModuleSpec,
    Protocol,
)
from idsorch.protocol import DeployModule, MonitorPoll, MonitorReply, decode, encode
from idsorch.sim import ManualClock

DNS_FLOW = FlowKey(Protocol.UDP, Endpoint("10.0.0.2", 5300), Endpoint("10.0.0.53", 53), "dnsflood.py", 1000)
ROOT_FLOW = FlowKey(Protocol.TCP, Endpoint("10.0.0.1", 40001), Endpoint("exampleurl.com", 80), "curl", 0)
USER_FLOW = FlowKey(Protocol.TCP, Endpoint("10.0.0.1", 40002), Endpoint("exampleurl.com", 80), "browser", 1000)

MONITOR = ModuleSpec.create(ModuleKind.DNS_RATE_MONITOR, {"threshold": 10})
THROTTLE = ModuleSpec.create(ModuleKind.DNS_THROTTLE, {"limit": 5})


def blocklist(*urls):
    return ModuleSpec.create(ModuleKind.HTTP_URL_BLOCK, {"blocklist": list(urls)})


def make(initial=()):
    clock = ManualClock()
    events = []
    return Agent("VM2", clock, initial, on_event=events.append), clock, events


def send_dns(agent, clock, rate, seconds):
    passed = 0
    for _ in range(int(rate * seconds)):
        passed += bool(agent.on_send(DNS_FLOW, dns_query("x.test", 1)).data)
        clock.advance(1 / rate)
    return passed


def test_install_throttle_on_live_flow():
    agent, clock, events = make([MONITOR])
    assert send_dns(agent, clock, 20, 2) == 40
    state = agent.flows[DNS_FLOW]
    ack = agent.install(THROTTLE)
    assert ack.ok and agent.chain.module_ids == (MONITOR.module_id, THROTTLE.module_id)
    assert send_dns(agent, clock, 20, 2) <= 10
    assert agent.flows[DNS_FLOW] is state and state.buffers == 80
    d = [e for e in events if e.label is Label.D_RESPONSE_EFFECTIVE]
    assert len(d) == 1 and THROTTLE.module_id in d[0].detail


def test_install_twice_is_noop():
    agent, _, _ = make()
    assert agent.install(THROTTLE).detail == "installed"
    again = agent.install(THROTTLE)
    assert again.ok and again.detail == "already installed"
    assert len(agent.chain) == 1 and len(agent.install_log) == 1


def test_install_rejects_invalid_spec():
    agent, _, _ = make()
    ack = agent.install(ModuleSpec.create(ModuleKind.DNS_THROTTLE, {"limit": -1}))
    assert ack.status == "error" and "limit must be positive" in ack.detail
    assert len(agent.chain) == 0


def test_blocklist_swap_applies_to_next_buffer():
    agent, clock, _ = make([blocklist("a.com")])
    assert agent.on_send(ROOT_FLOW, http_request("b.com")).action is Action.PASS
    ack = agent.install(blocklist("a.com", "b.com"))
    assert ack.ok and ack.detail.startswith("replaced")
    assert len(agent.chain) == 1
    assert agent.on_send(ROOT_FLOW, http_request("b.com")).action is Action.DROP


def test_drop_forwards_nothing():
    agent, _, events = make([blocklist("exampleurl.com")])
    res = agent.on_send(ROOT_FLOW, http_request("exampleurl.com"))
    assert res.data == b"" and res.action is Action.DROP
    assert res.alerts[0].condition.kind is AlertKind.MALICIOUS_URL_CONTACT
    assert [e.label for e in events] == [Label.A_ALERT_RAISED]


def test_clean_dns_passes_unchanged():
    agent, _, _ = make([MONITOR, THROTTLE])
    buf = dns_query("ok.test", 3)
    res = agent.on_send(DNS_FLOW, buf)
    assert res.data == buf and res.alerts == []


def test_root_request_poisoned():
    agent, _, _ = make([ModuleSpec.create(ModuleKind.ROOT_HTTP_MONITOR, {"blocklist": ["exampleurl.com"]})])
    res = agent.on_send(ROOT_FLOW, http_request("newbad.example"))
    assert res.action is Action.POISON and parse_http_request(res.data) is None
    assert res.alerts[0].condition.url == "newbad.example"
    assert agent.on_send(USER_FLOW, http_request("newbad.example")).action is Action.PASS


def test_chain_order_first_non_pass_wins():
    root = ModuleSpec.create(ModuleKind.ROOT_HTTP_MONITOR, {})
    agent, _, _ = make([blocklist("exampleurl.com"), root])
    res = agent.on_send(ROOT_FLOW, http_request("exampleurl.com"))
    assert res.action is Action.DROP and len(res.alerts) == 1


def test_detector_crash_fails_open(monkeypatch):
    agent, _, _ = make([THROTTLE])

    def boom(*a):
        raise RuntimeError("bug")

    monkeypatch.setattr(agent.chain.entries[0], "inspect", boom)
    buf = dns_query("x.test", 1)
    assert agent.on_send(DNS_FLOW, buf).data == buf


def poll(agent, poll_id, ack_through):
    return decode(encode(agent.handle(decode(encode(MonitorPoll(poll_id, ack_through))))))


def raise_alerts(agent, clock, n):
    for i in range(n):
        agent.on_send(ROOT_FLOW, http_request("exampleurl.com"))
        clock.advance(0.1)


def test_poll_drains_queue():
    agent, clock, _ = make([blocklist("exampleurl.com")])
    raise_alerts(agent, clock, 3)
    reply = poll(agent, 1, 0)
    assert isinstance(reply, MonitorReply) and len(reply.alerts) == 3
    clock.advance(1)
    assert poll(agent, 2, 1).alerts == ()
    assert agent.pending == []


def test_empty_poll_is_heartbeat():
    agent, _, _ = make([THROTTLE])
    reply = poll(agent, 1, 0)
    assert reply.alerts == () and reply.installed == (THROTTLE.module_id,)


def test_alert_at_poll_instant_waits():
    agent, clock, _ = make([blocklist("exampleurl.com")])
    agent.on_send(ROOT_FLOW, http_request("exampleurl.com"))
    assert poll(agent, 1, 0).alerts == ()
    clock.advance(0.5)
    assert len(poll(agent, 2, 0).alerts) == 1


def test_lost_poll_redelivers_once():
    agent, clock, _ = make([blocklist("exampleurl.com")])
    raise_alerts(agent, clock, 2)
    first = poll(agent, 1, 0)        # reply lost: orchestrator keeps ack_through=0
    raise_alerts(agent, clock, 1)
    second = poll(agent, 2, 0)
    assert len(first.alerts) == 2 and len(second.alerts) == 3
    clock.advance(1)
    assert poll(agent, 3, 2).alerts == ()
    keys = {a.dedup_key for a in second.alerts}
    assert len(keys) == 3


def test_deploy_message_via_handle():
    agent, _, _ = make()
    ack = agent.handle(DeployModule(THROTTLE))
    assert ack.ok and agent.register_message().installed == (THROTTLE.module_id,)
