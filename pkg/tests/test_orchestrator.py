from __future__ import annotations

import pytest

from idsorch.detectors import dns_query
from idsorch.model import (
    DeploymentPlan,
    Alert,
    AlertCondition,
    AlertKind,
    BuildMode,
    HostPolicy,
    Label,
    ModuleKind,
    ModuleSpec,
)
from idsorch.orchestrator import (
    BuildLatencyModel,
    ConfigError,
    Orchestrator,
    ResponseRule,
    rules_from_list,
)
from idsorch.protocol import Register
from idsorch.sim import ManualClock, drive

from helpers import dns_flow

THROTTLE_JIT = ResponseRule(AlertKind.DNS_RATE_EXCEEDED, ModuleKind.DNS_THROTTLE, BuildMode.JIT,
                            HostPolicy.ALL_HOSTS, {"limit": 5})
THROTTLE_PRE = ResponseRule(AlertKind.DNS_RATE_EXCEEDED, ModuleKind.DNS_THROTTLE, BuildMode.PREBUILT,
                            HostPolicy.ALL_HOSTS, {"limit": 5})
ROOT_JIT = ResponseRule(AlertKind.ROOT_HTTP_ATTEMPT, ModuleKind.ROOT_HTTP_MONITOR, BuildMode.JIT,
                        HostPolicy.AFFECTED_HOST_ONLY, jit_fields={"blocklist": "urls"})
URL_JIT = ResponseRule(AlertKind.MALICIOUS_URL_CONTACT, ModuleKind.ROOT_HTTP_MONITOR, BuildMode.JIT,
                       HostPolicy.AFFECTED_HOST_ONLY, jit_fields={"blocklist": "urls"})


def dns_alert(host, t, received=None):
    cond = AlertCondition(AlertKind.DNS_RATE_EXCEEDED, 1000, observed_rate=11)
    return Alert(host, "dnsmon-x", cond, t, t if received is None else received)


def url_alert(host, url, t, kind=AlertKind.ROOT_HTTP_ATTEMPT):
    return Alert(host, "rootmon-x", AlertCondition(kind, 0, url=url), t, t)


def orch(rules, hosts=("VM1", "VM2", "VM3"), latency=BuildLatencyModel()):
    o = Orchestrator(rules, ManualClock(), latency=latency)
    for h in hosts:
        o.register(Register(h))
    return o


def test_first_alert_gets_id_one_and_dedups():
    o = orch([])
    a = dns_alert("VM2", 10.0)
    assert o.record_alert(a) == 1
    assert o.record_alert(a) == 1 and len(o.db) == 1
    assert o.record_alert(dns_alert("VM2", 10.5)) == 2


def test_url_index():
    o = orch([])
    o.record_alert(url_alert("VM1", "exampleurl.com", 1.0, AlertKind.MALICIOUS_URL_CONTACT))
    assert "exampleurl.com" in o.db.url_index


def test_all_hosts_plan():
    o = orch([THROTTLE_JIT])
    aid = o.record_alert(dns_alert("VM2", 10.0))
    plan = o.process_alert(o.db.get(aid))
    assert sorted(plan.hosts) == ["VM1", "VM2", "VM3"]
    assert plan.hosts[0] == "VM2"
    assert all(spec.params["limit"] == 5 and spec.context_alert_ids == (aid,) for _, spec in plan.targets)


def test_no_matching_rule():
    o = orch([])
    aid = o.record_alert(dns_alert("VM2", 10.0))
    assert o.process_alert(o.db.get(aid)) is None


def test_process_requires_record():
    o = orch([THROTTLE_JIT])
    with pytest.raises(ValueError):
        o.process_alert(dns_alert("VM2", 1.0))


def test_affected_host_only_plan_uses_url_index():
    o = orch([ROOT_JIT])
    o.record_alert(url_alert("VM3", "exampleurl.com", 1.0, AlertKind.MALICIOUS_URL_CONTACT))
    aid = o.record_alert(url_alert("VM1", "newbad.example", 2.0))
    plan = o.process_alert(o.db.get(aid))
    assert plan.hosts == ["VM1"]
    spec = plan.targets[0][1]
    assert list(spec.params["blocklist"]) == ["exampleurl.com", "newbad.example"]
    assert spec.context_alert_ids == (1, 2)


def test_collect_context():
    o = orch([])
    assert o.collect_context(URL_JIT)[0] == {"blocklist": []}
    o.record_alert(url_alert("VM1", "b.com", 1.0))
    o.record_alert(url_alert("VM1", "a.com", 2.0))
    assert o.collect_context(URL_JIT)[0] == {"blocklist": ["a.com", "b.com"]}


def test_build_module_modes():
    o = orch([THROTTLE_PRE, URL_JIT])
    pre = o.build_module(THROTTLE_PRE, {}, "VM1")
    assert pre.build_mode is BuildMode.PREBUILT and o.latency.build_seconds(pre.build_mode) == 0
    jit = o.build_module(URL_JIT, {"blocklist": ["exampleurl.com"]}, "VM1", (1,))
    assert list(jit.params["blocklist"]) == ["exampleurl.com"]
    assert BuildLatencyModel(jit_build_seconds=8).build_seconds(jit.build_mode) == 8


def test_rebuild_replaces_same_kind():
    o = orch([URL_JIT], hosts=("VM1",))
    old = ModuleSpec.create(ModuleKind.ROOT_HTTP_MONITOR, {"blocklist": ["a.com"]})
    o.installed["VM1"] = {old.module_id}
    new = o.build_module(URL_JIT, {"blocklist": ["a.com", "b.com"]}, "VM1", (1,))
    assert new.replaces == old.module_id


def test_unknown_kind_is_startup_error():
    with pytest.raises(ConfigError, match="unknown module kind 'Firewall'"):
        rules_from_list([{"trigger": "DnsRateExceeded", "response_kind": "Firewall"}])
    with pytest.raises(ConfigError):
        Orchestrator([ResponseRule(AlertKind.DNS_RATE_EXCEEDED, ModuleKind.DNS_THROTTLE, BuildMode.PREBUILT,
                                   template_params={"limit": 0})], ManualClock())
    with pytest.raises(ConfigError):
        Orchestrator([ResponseRule(AlertKind.DNS_RATE_EXCEEDED, ModuleKind.DNS_THROTTLE,
                                   jit_fields={"limit": "weather"})], ManualClock())


def test_rule_dict_round_trip():
    for r in (THROTTLE_JIT, THROTTLE_PRE, ROOT_JIT):
        assert ResponseRule.from_dict(r.to_dict()) == r


# -- deployment with real agents ---------------------------------------------


def deploy_times(make_net, rule, latency):
    net = make_net(["VM1", "VM2", "VM3"], [rule], latency)
    net.orch.receive([dns_alert("VM2", 0.0)])
    start = net.clock.now()
    (plan, acks), = net.orch.drain()
    c = [e.timestamp - start for e in net.timeline if e.label is Label.C_MODULE_DEPLOYED]
    return net, acks, c


def test_jit_deploy_third_host_24s(make_net):
    _, acks, c = deploy_times(make_net, THROTTLE_JIT, BuildLatencyModel(8, 4))
    assert all(a.ok for _, a in acks)
    assert c == [12.0, 24.0, 36.0]
    assert c[2] - 12.0 == pytest.approx(24.0)  # from the first host's build start to the third host's install


def test_prebuilt_deploy_within_3s(make_net):
    _, acks, c = deploy_times(make_net, THROTTLE_PRE, BuildLatencyModel(8, 1))
    assert c == [1.0, 2.0, 3.0] and max(c) <= 3


def test_unreachable_host_isolated(make_net):
    net = make_net(["VM1", "VM2", "VM3"], [THROTTLE_PRE])
    net.channel.disconnect("VM3")
    net.orch.receive([dns_alert("VM2", 0.0)])
    (_, acks), = net.orch.drain()
    status = {h: a.status for h, a in acks}
    assert status == {"VM1": "ok", "VM2": "ok", "VM3": "error"}


def test_build_failure_reported_per_host(make_net):
    net = make_net(["VM1", "VM2"], [URL_JIT])
    alert = url_alert("VM1", "x.com", 0.0, AlertKind.MALICIOUS_URL_CONTACT)
    net.orch.receive([alert])
    bad = ModuleSpec.create(ModuleKind.ROOT_HTTP_MONITOR, {"blocklist": [""]}, BuildMode.JIT, context_alert_ids=(1,))
    good = ModuleSpec.create(ModuleKind.ROOT_HTTP_MONITOR, {}, BuildMode.JIT, context_alert_ids=(1,))
    acks = drive(net.orch.deploy(DeploymentPlan(1, (("VM1", bad), ("VM2", good)), HostPolicy.ALL_HOSTS)), net.clock)
    assert acks[0][1].status == "error" and "build failed" in acks[0][1].detail
    assert acks[1][1].ok


def test_quiescent_run_logs_only_polls(make_net):
    net = make_net(["VM1", "VM2"], [THROTTLE_JIT])
    drive_for(net, 5, 30)
    assert net.orch.log and {e.kind for e in net.orch.log} == {"poll"}
    assert net.timeline == []


def drive_for(net, interval, seconds):
    run = net.orch.run(interval)
    while True:
        delay = next(run)
        if net.clock.now() + delay > seconds:
            return
        net.clock.advance(delay)


def test_two_attackers_same_poll_deploy_once(make_net):

    net = make_net(["VM1", "VM2", "VM3"], [THROTTLE_JIT], BuildLatencyModel(8, 4),
                   initial=[ModuleSpec.create(ModuleKind.DNS_RATE_MONITOR, {"threshold": 10})])
    for i in range(12):
        for h in ("VM2", "VM3"):
            net.agents[h].on_send(dns_flow(h), dns_query("x.test", i))
        net.clock.advance(0.05)
    net.clock.advance_to(5.0)
    plans = net.orch.poll_cycle()
    assert len(plans) == 2
    results = net.orch.drain()
    first, second = results
    assert all(a.ok and a.detail != "skipped: already installed" for _, a in first[1])
    assert all(a.detail == "skipped: already installed" for _, a in second[1])
    for agent in net.agents.values():
        ids = [m for _, m in agent.install_log]
        assert len(ids) == len(set(ids)) == 1
    b = [e for e in net.timeline if e.label is Label.B_ORCHESTRATOR_NOTIFIED]
    c = [e for e in net.timeline if e.label is Label.C_MODULE_DEPLOYED]
    assert len(b) == 2 and len(c) == 3 and max(e.timestamp for e in b) < min(e.timestamp for e in c)
